"""Closed-form results for the adaptive spectator protocol.

Covers the before-time distribution and its moments, the rate prefactor
``H_Theta`` and its minimiser, the imperfection rate formulas, the
dead-time waiting strategy, the measurement-error fit and the bound table.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .maps import MeasurementSetting, combined_reset_map, dominant_eigenpair
from .rtp import RtpParams, steady_state

THETA_STAR_BRACKET = (1.0, 2.0)


def _check_angle(theta: float) -> None:
    if abs(math.sin(theta)) < 1e-9:
        raise ValueError(f"Theta={theta} is a multiple of pi")


def _csc2(theta):
    return 1.0 / np.sin(theta) ** 2


# ---------------------------------------------------------------- before-time


@dataclass(frozen=True)
class BeforeTimeDistribution:
    """Delay between an RTP flip and the non-null result that reveals it."""

    big_theta: float
    big_k: float
    m_max: int = 50

    def __post_init__(self):
        _check_angle(self.big_theta)
        if self.big_k <= 0 or self.m_max < 0:
            raise ValueError("big_k must be positive and m_max nonnegative")

    @property
    def tau(self) -> float:
        return self.big_theta / self.big_k

    def density(self, t_b):
        return before_time_density(self, t_b)

    def interval_mass(self, m: int) -> float:
        """Exact probability that the before-time falls in ``[m tau, (m+1) tau)``."""
        th = self.big_theta
        if m == 0:
            return (th / 2 - math.sin(2 * th) / 4) / th
        c2 = math.cos(th) ** 2
        return (th / 2 + math.sin(2 * th) / 4) / th * c2 ** (m - 1) * (1 - c2)

    def tail_mass(self) -> float:
        """Probability beyond the truncation ``m_max``."""
        return 1.0 - sum(self.interval_mass(m) for m in range(self.m_max + 1))

    def breakpoints(self) -> np.ndarray:
        return self.tau * np.arange(self.m_max + 2)


def before_time_density(dist: BeforeTimeDistribution, t_b):
    t = np.asarray(t_b, dtype=float)
    if np.any(t < 0):
        raise ValueError("before-time must be nonnegative")
    th, k, tau = dist.big_theta, dist.big_k, dist.tau
    m = np.floor(t / tau).astype(int)
    kt = k * t
    first = np.sin(kt) ** 2
    c2 = math.cos(th) ** 2
    # 0 ** 0 == 1 covers the m = 1 interval at Theta = pi/2.
    later = np.cos(kt - m * th) ** 2 * np.power(c2, np.maximum(m - 1, 0)) * (1 - c2)
    out = np.where(m == 0, first, later)
    out = np.where(m > dist.m_max, 0.0, out) / tau
    return out if out.ndim else float(out)


def mean_before_time(big_theta: float, big_k: float) -> float:
    _check_angle(big_theta)
    th = big_theta
    return (th + 1 / math.tan(th) + th * _csc2(th)) / (2 * big_k)


def var_before_time(big_theta: float, big_k: float) -> float:
    return h_theta(big_theta) / (4 * big_k**2)


def _quad_moments(dist: BeforeTimeDistribution) -> tuple[float, float, float]:
    edges = dist.breakpoints()
    norm = mean = second = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        f = dist.density
        norm += integrate.quad(f, a, b, epsabs=1e-14, epsrel=1e-12)[0]
        mean += integrate.quad(lambda t: t * f(t), a, b, epsabs=1e-16, epsrel=1e-12)[0]
        second += integrate.quad(lambda t: t * t * f(t), a, b, epsabs=1e-18, epsrel=1e-12)[0]
    return norm, mean, second


def before_time_moments(dist: BeforeTimeDistribution, check: bool = True) -> tuple[float, float]:
    """Closed-form mean and variance, cross-checked against quadrature of the density."""
    mean = mean_before_time(dist.big_theta, dist.big_k)
    var = var_before_time(dist.big_theta, dist.big_k)
    if check:
        norm, qmean, qsecond = _quad_moments(dist)
        qmean /= norm
        qvar = qsecond / norm - qmean**2
        if abs(qmean - mean) > 1e-6 * mean or abs(qvar - var) > 1e-6 * var:
            raise ArithmeticError(
                f"quadrature moments ({qmean}, {qvar}) disagree with closed forms ({mean}, {var})"
            )
    return mean, var


def quadrature_moments(dist: BeforeTimeDistribution) -> tuple[float, float, float]:
    """Normalisation, mean and variance of the density by numerical integration."""
    norm, qmean, qsecond = _quad_moments(dist)
    qmean /= norm
    return norm, qmean, qsecond / norm - qmean**2


# ---------------------------------------------------------------- H_Theta


def h_theta(big_theta: float) -> float:
    """Dimensionless prefactor of the controlled decoherence rate."""
    _check_angle(big_theta)
    th = big_theta
    c2 = _csc2(th)
    cot = 1 / math.tan(th)
    return 3 * th**2 * c2**2 - (2 * th * (th - cot) + 1) * c2 + th**2 / 3 - 1


def dh_theta(big_theta: float) -> float:
    """Analytic derivative of :func:`h_theta`."""
    _check_angle(big_theta)
    th = big_theta
    sn, cs = math.sin(th), math.cos(th)
    c2 = 1 / sn**2
    cot = cs / sn
    dc2 = -2 * cot * c2
    dcot = -c2
    inner = 2 * th * (th - cot) + 1
    dinner = 2 * (th - cot) + 2 * th * (1 - dcot)
    return (
        6 * th * c2**2
        + 3 * th**2 * 2 * c2 * dc2
        - dinner * c2
        - inner * dc2
        + 2 * th / 3
    )


def minimize_h_theta() -> tuple[float, float]:
    res = optimize.minimize_scalar(
        h_theta, bounds=THETA_STAR_BRACKET, method="bounded", options={"xatol": 1e-12}
    )
    # polish on the derivative for full precision
    theta = optimize.brentq(dh_theta, res.x - 0.05, res.x + 0.05, xtol=1e-14)
    return theta, h_theta(theta)


THETA_STAR, H_STAR = minimize_h_theta()


# ---------------------------------------------------------------- rates


def scale_factor(params: RtpParams) -> float:
    """``kappa^2 gamma_breve / (2 K^2)``: converts a prefactor into a rate."""
    return params.kappa**2 * params.gamma_breve / (2 * params.big_k**2)


def rate_ideal(params: RtpParams, big_theta: float) -> float:
    return scale_factor(params) * h_theta(big_theta)


def rate_nocontrol(params: RtpParams) -> float:
    return params.kappa**2 * params.gamma_breve / (2 * params.gamma_bar**2)


def mean_w_squared(big_theta: float, d_theta: float, n_steps: float = 1.0) -> float:
    """Second moment of the false-pair separation ``w`` (unnormalised by pair probability)."""
    phi = big_theta + d_theta / 2
    return (
        n_steps / 2 * math.sin(d_theta / 2) ** 2 * (3 + math.cos(2 * big_theta + d_theta))
        / math.sin(phi) ** 4
    )


def false_pair_probability(big_theta: float, d_theta: float, w: int) -> float:
    """Probability of the readout string opening a false pair of separation ``w``."""
    phi = big_theta + d_theta / 2
    return math.sin(d_theta / 2) ** 2 * math.cos(phi) ** (2 * (w - 1)) * math.sin(phi) ** 2


def rate_delta_theta(params: RtpParams, big_theta: float, d_theta: float) -> float:
    """Rate with an unknown measurement-angle offset, to second order in the offset."""
    if not params.symmetric:
        warnings.warn("angle-offset rate is derived for gamma_up == gamma_down", stacklevel=2)
    th = big_theta
    extra = (
        params.big_k / params.gamma_breve * d_theta**2 / 2 * th * (3 + math.cos(2 * th))
        / math.sin(th) ** 4
    )
    return params.kappa**2 / (2 * params.big_k**2) * params.gamma_breve * (h_theta(th) + extra)


def rate_delta_kappa(params: RtpParams, big_theta: float, d_kappa: float, rate_ctrl: float) -> float:
    r = d_kappa / params.kappa
    return rate_ctrl + 2 * r * rate_ctrl + r * r * rate_nocontrol(params)


def h_theta_reset(big_theta: float, theta_sr: float) -> float:
    th = big_theta
    c2 = _csc2(th)
    return (
        h_theta(th)
        + theta_sr * (2 * th / 3 - 8 * th * c2 + 8 * th * c2**2)
        + theta_sr**2 * (1 / 3 - 4 * c2 + 4 * c2**2)
    )


def rate_reset(params: RtpParams, big_theta: float, theta_sr: float) -> float:
    if theta_sr < 0:
        raise ValueError("theta_sr must be nonnegative")
    return scale_factor(params) * h_theta_reset(big_theta, theta_sr)


def rate_reset_eigen(params: RtpParams, big_theta: float, theta_sr: float) -> float:
    """Per-step coherence loss from the stable eigenvectors of the combined reset map."""
    tau = big_theta / params.big_k
    # loss per full cycle, sensing plus reset
    cycle = tau + theta_sr / params.big_k
    p_ss = dict(zip((1, -1), steady_state(params)))
    total = 0.0
    for s in (1, -1):
        setting = MeasurementSetting(s * big_theta, tau)
        maps = [combined_reset_map(params, setting, y, theta_sr) for y in (0, 1)]
        e = dominant_eigenpair(maps[0]).vector
        ref = abs(e.sum())
        after = sum(abs(np.sum(m @ e)) for m in maps)
        total += p_ss[s] * (ref - after) / (cycle * ref)
    return total


# ---------------------------------------------------------------- dead time


@dataclass(frozen=True)
class DeadTimeThresholds:
    roots: tuple[float, ...]
    crossovers: tuple[float, ...]

    def h_roots(self) -> tuple[float, ...]:
        return tuple(h_theta(r) for r in self.roots)


def dead_time_thresholds(n_branches: int = 3) -> DeadTimeThresholds:
    """Stationary points of ``H_Theta`` (one per branch) and the level crossings below them."""
    roots = []
    for n in range(n_branches):
        lo, hi = n * math.pi + 0.2, (n + 1) * math.pi - 0.2
        roots.append(optimize.brentq(dh_theta, lo, hi, xtol=1e-14))
    crossovers = []
    for i in range(n_branches - 1):
        level = h_theta(roots[i + 1])
        # H rises to +inf at (i+1) pi; the crossing lies on the rising flank.
        lo, hi = roots[i], (i + 1) * math.pi - 1e-9
        crossovers.append(optimize.brentq(lambda t: h_theta(t) - level, lo, hi, xtol=1e-14))
    return DeadTimeThresholds(tuple(roots), tuple(crossovers))


def dead_time_strategy(
    params: RtpParams, tau_dd: float, n_branches: int = 3
) -> tuple[float, DeadTimeThresholds]:
    """Waiting time to use when the detector needs ``tau_dd`` before it can read out."""
    if tau_dd < 0:
        raise ValueError("dead time must be nonnegative")
    th = dead_time_thresholds(n_branches)
    k = params.big_k
    x = k * tau_dd
    if x <= th.roots[0]:
        return th.roots[0] / k, th
    if x > th.roots[-1]:
        raise ValueError(
            f"K*tau_dd={x:.4g} exceeds the last tabulated stationary point "
            f"{th.roots[-1]:.4g}; increase n_branches"
        )
    for i, cross in enumerate(th.crossovers):
        if cross <= x <= th.roots[i + 1]:
            return th.roots[i + 1] / k, th
    return tau_dd, th


# ---------------------------------------------------------------- measurement error


def fit_epsilon_relation(rate_pairs, rate_zero: float) -> tuple[float, float]:
    """Fit ``log((rate - rate_zero) / rate_zero) = a log(eps) + b``."""
    eps = np.array([p[0] for p in rate_pairs], dtype=float)
    rates = np.array([p[1] for p in rate_pairs], dtype=float)
    if np.any(eps <= 0) or np.any(eps > 0.05):
        raise ValueError("eps values must lie in (0, 0.05]")
    excess = (rates - rate_zero) / rate_zero
    if np.any(excess <= 0):
        raise ValueError("every rate must exceed the error-free rate")
    a, b = np.polyfit(np.log(eps), np.log(excess), 1)
    return float(a), float(b)


def doubling_epsilon(b: float, a: float = 1.0) -> float:
    """Error probability at which the fitted model doubles the rate."""
    return math.exp(-b / a)


def epsilon_chi_equivalence(chi: float, tau: float) -> float:
    eps = chi * tau / 2
    if chi < 0 or tau < 0 or eps > 0.5:
        raise ValueError("chi * tau / 2 must lie in [0, 1/2]")
    return eps


def table1_bounds(params: RtpParams) -> dict[str, float]:
    k = params.big_k
    return {
        "delta_theta": math.sqrt(params.gamma_breve / k),
        "delta_kappa_over_kappa": params.gamma_bar / k,
        "tau_sr": 1.0 / k,
        "eps": 0.02,
    }


BOUND_FORMULAS = {
    "delta_theta": "sqrt(gamma_breve/K)",
    "delta_kappa_over_kappa": "gamma_bar/K",
    "tau_sr": "1/K",
    "eps": "0.02 (numerical)",
}
