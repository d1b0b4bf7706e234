"""Exact sum over all readout paths, a Monte-Carlo cross-check, and rate extraction.

Two coherence vectors ride along every readout string: one evolved with the
true maps (what nature does) and one with the controller's estimated maps
(what the experimenter believes).  The controller picks the MOAAAR sign from
the estimated vector and applies the correction ``arg(1^T A_est)`` at the end.

Routing of imperfections:

================  ===========  ===============
imperfection      true maps    estimated maps
================  ===========  ===============
delta_theta       yes          no
delta_kappa       yes          no
theta_sr          yes          yes
eps, chi          yes          yes
tau_dd            yes          yes
================  ===========  ===============
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .analytics import scale_factor
from .bayes import Likelihood
from .maps import MeasurementSetting, f_map_eps, h_map
from .rtp import RtpParams, sample_intervals, steady_state

MAX_STEPS = 24
DEFAULT_FLOOR = 1e-15
DISCARD_WARN = 1e-9
_BATCH = 1 << 16


class PathLimitError(ValueError):
    """Requested number of steps exceeds the enumeration limit."""


class PruningWarning(UserWarning):
    """Pruned paths carried more than the tolerated weight."""


@dataclass(frozen=True)
class ImperfectionConfig:
    delta_theta: float = 0.0
    delta_kappa: float = 0.0
    theta_sr: float = 0.0
    tau_dd: float = 0.0
    eps: float = 0.0
    chi: float = 0.0

    FIELDS = ("delta_theta", "delta_kappa", "theta_sr", "tau_dd", "eps", "chi")

    def __post_init__(self):
        if self.theta_sr < 0 or self.tau_dd < 0 or self.eps < 0 or self.chi < 0:
            raise ValueError("theta_sr, tau_dd, eps and chi must be nonnegative")
        if self.eps > 0.5:
            raise ValueError("eps must not exceed 1/2")

    def waiting_time(self, params: RtpParams, big_theta: float) -> float:
        """Probe time per step: ``Theta / K`` unless the detector is still dead."""
        return max(big_theta / params.big_k, self.tau_dd)

    def total_eps(self, tau: float) -> float:
        total = self.eps + self.chi * tau / 2
        if total > 0.5:
            raise ValueError(f"eps + chi*tau/2 = {total} exceeds 1/2")
        return total

    def likelihood(self, tau: float) -> Likelihood:
        """Readout model seen by nature."""
        if self.chi:
            if self.eps:
                return Likelihood("errored", delta_theta=self.delta_theta, eps=self.total_eps(tau))
            return Likelihood("dephased", chi=self.chi, tau=tau, delta_theta=self.delta_theta)
        if self.eps:
            return Likelihood("errored", eps=self.eps, delta_theta=self.delta_theta)
        if self.delta_theta:
            return Likelihood("angle-shifted", delta_theta=self.delta_theta)
        return Likelihood()


@dataclass(frozen=True)
class MapSet:
    """Per-step maps indexed ``[s_index, y]`` with ``s_index`` 0 for s=+1 and 1 for s=-1."""

    maps: np.ndarray
    step_time: float

    def __post_init__(self):
        if self.maps.shape != (2, 2, 2, 2):
            raise ValueError("maps must have shape (2, 2, 2, 2)")


def moaaar_maps(
    params: RtpParams,
    big_theta: float,
    tau: float,
    eps: float = 0.0,
    theta_sr: float = 0.0,
    delta_theta: float = 0.0,
) -> MapSet:
    maps = np.empty((2, 2, 2, 2), dtype=complex)
    reset = h_map(params, theta_sr / params.big_k, params.kappa) if theta_sr else None
    for si, s in enumerate((1, -1)):
        setting = MeasurementSetting(s * (big_theta + delta_theta), tau)
        for y in (0, 1):
            m = f_map_eps(params, setting, y, eps)
            maps[si, y] = m if reset is None else reset @ m
    return MapSet(maps, tau + theta_sr / params.big_k)


def build_map_sets(
    params: RtpParams, imp: ImperfectionConfig, big_theta: float, tau: Optional[float] = None
) -> tuple[MapSet, MapSet]:
    """(true, estimated) map sets for the MOAAAR protocol under ``imp``."""
    if tau is None:
        tau = imp.waiting_time(params, big_theta)
    eps = imp.total_eps(tau)
    true_params = params.replace(kappa=params.kappa + imp.delta_kappa) if imp.delta_kappa else params
    true = moaaar_maps(true_params, big_theta, tau, eps, imp.theta_sr, imp.delta_theta)
    est = moaaar_maps(params, big_theta, tau, eps, imp.theta_sr)
    return true, est


@dataclass
class SopResult:
    times: np.ndarray
    coherence: np.ndarray
    amplitude: np.ndarray
    discarded_mass: float
    n_leaves: int
    prob_total: Optional[np.ndarray] = None

    def series(self) -> list[tuple[float, float]]:
        return list(zip(self.times.tolist(), self.coherence.tolist()))


def _apply(maps: np.ndarray, s_idx: np.ndarray, y: int, vec: np.ndarray) -> np.ndarray:
    m = maps[s_idx, y]  # (n, 2, 2)
    return np.einsum("nij,nj->ni", m, vec)


def _walk(true, est, at, ae, depth, n_steps, floor, sums, lost, counts):
    """Breadth-first expansion of a subtree; splits when the frontier grows too wide."""
    while depth < n_steps:
        if at.shape[0] > _BATCH:
            half = at.shape[0] // 2
            _walk(true, est, at[:half], ae[:half], depth, n_steps, floor, sums, lost, counts)
            _walk(true, est, at[half:], ae[half:], depth, n_steps, floor, sums, lost, counts)
            return
        mag = np.abs(ae)
        s_idx = (mag[:, 0] < mag[:, 1]).astype(np.intp)
        new_at, new_ae = [], []
        for y in (0, 1):
            t_vec = _apply(true, s_idx, y, at)
            e_vec = _apply(est, s_idx, y, ae)
            norm = np.abs(e_vec).sum(axis=1)
            bound = np.abs(t_vec).sum(axis=1)
            keep = bound >= floor
            if floor > 0:
                lost[depth] += bound[~keep].sum()
            keep &= norm > 0
            new_at.append(t_vec[keep])
            new_ae.append(e_vec[keep] / norm[keep, None])
        at = np.concatenate(new_at)
        ae = np.concatenate(new_ae)
        total_est = ae.sum(axis=1)
        phase = np.conj(total_est) / np.abs(total_est)
        sums[depth] += np.sum(phase * at.sum(axis=1))
        counts[depth] += at.shape[0]
        depth += 1


def enumerate_paths(
    true: MapSet,
    est: MapSet,
    p0,
    n_steps: int,
    *,
    prune_floor: float = DEFAULT_FLOOR,
    threads: int = 1,
    deterministic: bool = True,
    max_steps: int = MAX_STEPS,
) -> SopResult:
    """Coherence ``|sum_Y exp(-i c(Y)) 1^T A_true(Y)|`` after each of ``n_steps`` readouts."""
    if n_steps > max_steps:
        raise PathLimitError(
            f"n_steps={n_steps} exceeds the enumeration limit {max_steps} (2^{max_steps} paths)"
        )
    if n_steps < 1:
        raise ValueError("n_steps must be positive")
    p0 = np.asarray(p0, dtype=complex)
    at = p0[None, :].copy()
    ae = at / np.abs(at).sum()
    sums = np.zeros(n_steps, dtype=complex)
    lost = np.zeros(n_steps)
    counts = np.zeros(n_steps, dtype=np.int64)
    # grow a shallow frontier, then hand subtrees to workers
    split_depth = 0
    if threads > 1:
        split_depth = min(n_steps, max(1, math.ceil(math.log2(4 * threads))))
    if split_depth:
        _walk(true.maps, est.maps, at, ae, 0, split_depth, prune_floor, sums, lost, counts)
        # rebuild the frontier at split_depth (cheap: at most 2^split_depth nodes)
        at, ae = _frontier(true.maps, est.maps, at, ae, split_depth, prune_floor)
        chunks = np.array_split(np.arange(at.shape[0]), threads * 4)
        chunks = [c for c in chunks if c.size]

        def job(idx):
            s = np.zeros(n_steps, dtype=complex)
            l = np.zeros(n_steps)
            c = np.zeros(n_steps, dtype=np.int64)
            _walk(true.maps, est.maps, at[idx], ae[idx], split_depth, n_steps, prune_floor, s, l, c)
            return s, l, c

        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(job, idx) for idx in chunks]
            results = [f.result() for f in futures]
        if not deterministic:
            results.sort(key=lambda r: abs(r[0][-1]))
        for s, l, c in results:
            sums += s
            lost += l
            counts += c
    else:
        _walk(true.maps, est.maps, at, ae, 0, n_steps, prune_floor, sums, lost, counts)
    discarded = float(lost.sum())
    if discarded > DISCARD_WARN:
        warnings.warn(f"pruning discarded weight {discarded:.3g}", PruningWarning, stacklevel=2)
    times = true.step_time * np.arange(1, n_steps + 1)
    return SopResult(times, np.abs(sums), sums, discarded, int(counts[-1]))


def _frontier(true, est, at, ae, depth, floor):
    for _ in range(depth):
        mag = np.abs(ae)
        s_idx = (mag[:, 0] < mag[:, 1]).astype(np.intp)
        nt, ne = [], []
        for y in (0, 1):
            t_vec = _apply(true, s_idx, y, at)
            e_vec = _apply(est, s_idx, y, ae)
            norm = np.abs(e_vec).sum(axis=1)
            keep = (np.abs(t_vec).sum(axis=1) >= floor) & (norm > 0)
            nt.append(t_vec[keep])
            ne.append(e_vec[keep] / norm[keep, None])
        at, ae = np.concatenate(nt), np.concatenate(ne)
    return at, ae


def sop_coherence(
    params: RtpParams,
    imperfections: ImperfectionConfig,
    big_theta: float,
    n_steps: int,
    *,
    tau: Optional[float] = None,
    p0=None,
    **kwargs,
) -> SopResult:
    true, est = build_map_sets(params, imperfections, big_theta, tau)
    if p0 is None:
        p0 = steady_state(params)
    return enumerate_paths(true, est, p0, n_steps, **kwargs)


# ---------------------------------------------------------------- rates


@dataclass(frozen=True)
class RateEstimate:
    rate: float
    scaled_rate: float
    fit_window: tuple[int, int]
    residual: float
    per_step_coherence: tuple[tuple[float, float], ...]
    method: str = "linear"
    flags: tuple[str, ...] = field(default=())


def extract_rate(
    coherence_series, discard: int, params: Optional[RtpParams] = None, method: str = "linear"
) -> RateEstimate:
    """Slope of the decoherence ``1 - C`` against time after dropping a transient.

    ``method="log"`` fits ``-ln C`` instead.  ``params`` supplies the scale for
    ``scaled_rate`` (NaN without it).
    """
    series = [(float(t), float(c)) for t, c in coherence_series]
    if len(series) <= discard + 2:
        raise ValueError("series too short for the requested discard")
    t = np.array([p[0] for p in series])
    c = np.array([p[1] for p in series])
    decoherence = 1 - c
    flags = []
    if np.any(decoherence < 0):
        flags.append("negative-decoherence")
    if np.any(np.diff(decoherence[discard:]) < 0):
        flags.append("non-monotonic")
    tk = t[discard:]
    if method == "linear":
        yk = decoherence[discard:]
    elif method == "log":
        yk = -np.log(c[discard:])
    else:
        raise ValueError(f"unknown fit method {method!r}")
    slope, intercept = np.polyfit(tk, yk, 1)
    resid = float(np.sqrt(np.mean((yk - (slope * tk + intercept)) ** 2)))
    scaled = slope / scale_factor(params) if params is not None else float("nan")
    return RateEstimate(
        float(slope),
        float(scaled),
        (discard, len(series) - 1),
        resid,
        tuple((tt, 1 - cc) for tt, cc in series),
        method,
        tuple(flags),
    )


def sop_rate(
    params: RtpParams,
    imperfections: ImperfectionConfig,
    big_theta: float,
    n_steps: int = 18,
    discard: int = 5,
    **kwargs,
) -> tuple[RateEstimate, SopResult]:
    res = sop_coherence(params, imperfections, big_theta, n_steps, **kwargs)
    return extract_rate(res.series(), discard, params), res


def dead_time_rate(
    params: RtpParams,
    tau_prime: float,
    big_theta: float,
    n_steps: int = 18,
    discard: int = 5,
    **kwargs,
) -> RateEstimate:
    """Rate when readouts happen every ``tau_prime`` at the fixed angle ``Theta``."""
    if not tau_prime > 0:
        raise ValueError("tau_prime must be positive")
    res = sop_coherence(params, ImperfectionConfig(), big_theta, n_steps, tau=tau_prime, **kwargs)
    return extract_rate(res.series(), discard, params)


# ---------------------------------------------------------------- Monte Carlo


@dataclass
class McResult:
    times: np.ndarray
    coherence: np.ndarray
    stderr: np.ndarray

    def rows(self) -> list[tuple[float, float, float]]:
        return list(zip(self.times.tolist(), self.coherence.tolist(), self.stderr.tolist()))


def _est_step(maps: np.ndarray, s_idx, y, vec):
    m = maps[s_idx, y]
    out = np.einsum("nij,nj->ni", m, vec)
    return out / np.abs(out).sum(axis=1, keepdims=True)


def mc_coherence(
    params: RtpParams,
    imperfections: ImperfectionConfig,
    big_theta: float,
    n_steps: int,
    n_samples: int,
    seed,
    *,
    tau: Optional[float] = None,
) -> McResult:
    """Sampled-trajectory estimate of the controlled coherence with standard errors."""
    if n_samples < 100:
        raise ValueError("n_samples must be at least 100")
    imp = imperfections
    if tau is None:
        tau = imp.waiting_time(params, big_theta)
    _, est = build_map_sets(params, imp, big_theta, tau)
    flavor = imp.likelihood(tau)
    true_kappa = params.kappa + imp.delta_kappa
    tau_sr = imp.theta_sr / params.big_k
    rng = np.random.default_rng(seed)
    p_plus = steady_state(params)[0]
    z = np.where(rng.random(n_samples) < p_plus, 1.0, -1.0)
    big_x = np.zeros(n_samples)
    ae = np.tile(np.asarray(steady_state(params), dtype=complex), (n_samples, 1))
    coh = np.empty(n_steps)
    err = np.empty(n_steps)
    for n in range(n_steps):
        mag = np.abs(ae)
        s_idx = (mag[:, 0] < mag[:, 1]).astype(np.intp)
        s = 1.0 - 2.0 * s_idx
        x, z = sample_intervals(params, z, tau, rng)
        big_x += x
        p1 = flavor(1, s * big_theta, x, params.big_k)
        y = (rng.random(n_samples) < p1).astype(np.intp)
        ae = _est_step(est.maps, s_idx, y, ae)
        if tau_sr:
            x_sr, z = sample_intervals(params, z, tau_sr, rng)
            big_x += x_sr
        c = np.angle(ae.sum(axis=1))
        w = np.exp(1j * (true_kappa * big_x - c))
        mean = w.mean()
        coh[n] = abs(mean)
        proj = (w * np.conj(mean) / abs(mean)).real
        err[n] = proj.std(ddof=1) / math.sqrt(n_samples)
    times = est.step_time * np.arange(1, n_steps + 1)
    return McResult(times, coh, err)
