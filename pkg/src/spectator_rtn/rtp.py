"""Two-state random telegraph process (RTP).

The noise ``z(t)`` takes values in {+1, -1}.  ``gamma_up`` is the rate of
-1 -> +1 transitions and ``gamma_down`` the rate of +1 -> -1 transitions.
Probability pairs are always ordered ``(P(z=+1), P(z=-1))``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

REGIME_FACTOR = 5.0


class AsymptoticRegimeWarning(UserWarning):
    """Parameters fall outside kappa << gamma_bar << K."""


@dataclass(frozen=True)
class RtpParams:
    gamma_up: float
    gamma_down: float
    kappa: float
    big_k: float

    def __post_init__(self):
        for name in ("gamma_up", "gamma_down", "kappa", "big_k"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")

    @property
    def gamma_bar(self) -> float:
        return 0.5 * (self.gamma_up + self.gamma_down)

    @property
    def gamma_breve(self) -> float:
        return 2.0 * self.gamma_up * self.gamma_down / (self.gamma_up + self.gamma_down)

    @property
    def symmetric(self) -> bool:
        return math.isclose(self.gamma_up, self.gamma_down, rel_tol=1e-12)

    def in_asymptotic_regime(self, factor: float = REGIME_FACTOR) -> bool:
        """True when ``kappa * factor <= gamma_bar`` and ``gamma_bar * factor <= K``."""
        return self.kappa * factor <= self.gamma_bar and self.gamma_bar * factor <= self.big_k

    def check_regime(self, factor: float = REGIME_FACTOR) -> bool:
        ok = self.in_asymptotic_regime(factor)
        if not ok:
            warnings.warn(
                f"parameters outside the asymptotic regime (kappa={self.kappa}, "
                f"gamma_bar={self.gamma_bar}, K={self.big_k})",
                AsymptoticRegimeWarning,
                stacklevel=2,
            )
        return ok

    def replace(self, **changes) -> "RtpParams":
        values = dict(
            gamma_up=self.gamma_up,
            gamma_down=self.gamma_down,
            kappa=self.kappa,
            big_k=self.big_k,
        )
        values.update(changes)
        return RtpParams(**values)


def generator(params: RtpParams) -> np.ndarray:
    """Master-equation generator acting on ``(P(+1), P(-1))``."""
    gu, gd = params.gamma_up, params.gamma_down
    return np.array([[-gd, gu], [gd, -gu]], dtype=float)


def steady_state(params: RtpParams) -> tuple[float, float]:
    total = params.gamma_up + params.gamma_down
    return params.gamma_up / total, params.gamma_down / total


def transition_matrix(params: RtpParams, t: float) -> np.ndarray:
    """Closed-form ``exp(G t)``; column ``j`` is the distribution after starting in state ``j``."""
    if t < 0:
        raise ValueError(f"duration must be nonnegative, got {t}")
    p_plus, p_minus = steady_state(params)
    decay = math.exp(-(params.gamma_up + params.gamma_down) * t)
    # Rank-one steady-state projector plus the decaying mode.
    ss = np.array([[p_plus, p_plus], [p_minus, p_minus]])
    mode = np.array([[p_minus, -p_plus], [-p_minus, p_plus]])
    return ss + decay * mode


def propagate_probs(params: RtpParams, p0, t: float) -> tuple[float, float]:
    p0 = np.asarray(p0, dtype=float)
    if p0.shape != (2,) or abs(p0.sum() - 1.0) > 1e-9 or np.any(p0 < -1e-15):
        raise ValueError(f"p0 must be a probability pair, got {p0}")
    p = transition_matrix(params, t) @ p0
    return float(p[0]), float(p[1])


@dataclass(frozen=True)
class RtpTrajectory:
    initial_state: int
    flip_times: tuple[float, ...]
    horizon: float
    _flips: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.initial_state not in (1, -1):
            raise ValueError("initial_state must be +1 or -1")
        flips = np.asarray(self.flip_times, dtype=float)
        if flips.size and (np.any(np.diff(flips) <= 0) or flips[0] < 0 or flips[-1] > self.horizon):
            raise ValueError("flip_times must be strictly increasing within [0, horizon]")
        object.__setattr__(self, "flip_times", tuple(float(f) for f in flips))
        object.__setattr__(self, "_flips", flips)

    def state_at(self, t: float) -> int:
        """Value of z just after time ``t`` (right-continuous)."""
        n = int(np.searchsorted(self._flips, t, side="right"))
        return self.initial_state * (-1) ** n

    def cumulative(self, t: float) -> float:
        """Exact ``int_0^t z(s) ds``."""
        if not 0 <= t <= self.horizon * (1 + 1e-12):
            raise ValueError(f"time {t} outside [0, {self.horizon}]")
        edges = np.concatenate(([0.0], self._flips[self._flips < t], [t]))
        signs = self.initial_state * (-1.0) ** np.arange(edges.size - 1)
        return float(np.dot(signs, np.diff(edges)))

    def occupation_plus(self) -> float:
        """Fraction of the horizon spent in z = +1."""
        return 0.5 * (1.0 + self.cumulative(self.horizon) / self.horizon)


def accumulated_noise(traj: RtpTrajectory, a: float, b: float) -> float:
    if not 0 <= a <= b <= traj.horizon:
        raise ValueError(f"interval [{a}, {b}] outside [0, {traj.horizon}]")
    edges = np.concatenate(([a], traj._flips[(traj._flips > a) & (traj._flips < b)], [b]))
    z0 = traj.state_at(a)
    signs = z0 * (-1.0) ** np.arange(edges.size - 1)
    return float(np.dot(signs, np.diff(edges)))


def sample_trajectory(
    params: RtpParams, initial: Optional[int], horizon: float, seed
) -> RtpTrajectory:
    """Gillespie sampling of flip times on ``[0, horizon]``.

    ``initial=None`` draws the starting state from the steady state.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    rng = np.random.default_rng(seed)
    if initial is None:
        initial = 1 if rng.random() < steady_state(params)[0] else -1
    z = initial
    t = 0.0
    flips = []
    while True:
        rate = params.gamma_down if z == 1 else params.gamma_up
        t += rng.exponential(1.0 / rate)
        if t >= horizon:
            break
        flips.append(t)
        z = -z
    return RtpTrajectory(initial, tuple(flips), horizon)


def sample_intervals(params: RtpParams, z: np.ndarray, duration: float, rng):
    """Vectorised exact propagation of many RTPs over one interval.

    Returns ``(x, z_end)`` where ``x`` is the accumulated noise over the
    interval for each process.
    """
    z = np.array(z, dtype=float)
    x = np.zeros_like(z)
    remaining = np.full(z.shape, float(duration))
    active = np.ones(z.shape, dtype=bool)
    while active.any():
        idx = np.flatnonzero(active)
        rates = np.where(z[idx] > 0, params.gamma_down, params.gamma_up)
        wait = rng.exponential(1.0, size=idx.size) / rates
        done = wait >= remaining[idx]
        step = np.where(done, remaining[idx], wait)
        x[idx] += z[idx] * step
        remaining[idx] -= step
        flipped = idx[~done]
        z[flipped] = -z[flipped]
        active[idx[done]] = False
    return x, z
