"""Bayesian coherence-vector estimator, MOAAAR policy and readout likelihoods."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .maps import MeasurementSetting, dominant_eigenpair, f_map
from .rtp import RtpParams, steady_state


@dataclass(frozen=True)
class CoherenceVector:
    a_plus: complex
    a_minus: complex

    @classmethod
    def from_probs(cls, p) -> "CoherenceVector":
        return cls(complex(p[0]), complex(p[1]))

    @classmethod
    def steady(cls, params: RtpParams) -> "CoherenceVector":
        return cls.from_probs(steady_state(params))

    def as_array(self) -> np.ndarray:
        return np.array([self.a_plus, self.a_minus], dtype=complex)

    def total(self) -> complex:
        return self.a_plus + self.a_minus


@dataclass(frozen=True)
class SufficientStats:
    zeta: float
    alpha: float
    s: int


def update(vec: CoherenceVector, m: np.ndarray) -> CoherenceVector:
    out = np.asarray(m) @ vec.as_array()
    return CoherenceVector(complex(out[0]), complex(out[1]))


def sufficient_stats(vec: CoherenceVector, params: RtpParams) -> SufficientStats:
    mp, mm = abs(vec.a_plus), abs(vec.a_minus)
    if mp + mm == 0:
        raise ValueError("zero coherence vector has no statistics")
    zeta = (mp - mm) / (mp + mm)
    if mp == 0 or mm == 0:
        alpha = 0.0
    else:
        alpha = params.big_k / params.kappa * float(np.angle(vec.a_plus / vec.a_minus))
    return SufficientStats(zeta, alpha, 1 if zeta >= 0 else -1)


def moaaar_next(stats: SufficientStats, big_theta: float, big_k: float) -> MeasurementSetting:
    """Next angle ``s * Theta`` and waiting time ``Theta / K``; zeta = 0 picks s = +1."""
    s = 1 if stats.zeta >= 0 else -1
    return MeasurementSetting(s * big_theta, big_theta / big_k)


def optimal_correction(vec: CoherenceVector) -> float:
    total = vec.total()
    if total == 0:
        raise ValueError("correction undefined for a vector with zero entry sum")
    return float(np.angle(total))


@dataclass(frozen=True)
class Likelihood:
    """Readout model ``p(y | theta, x)``.

    ``kind`` is one of ``ideal``, ``angle-shifted`` (uses ``delta_theta``),
    ``errored`` (uses ``eps``) and ``dephased`` (uses ``chi`` and ``tau``;
    first order in ``chi``).  A nonzero ``delta_theta`` shifts the angle for
    every kind, so offsets combine with readout errors.
    """

    kind: str = "ideal"
    delta_theta: float = 0.0
    eps: float = 0.0
    chi: float = 0.0
    tau: float = 0.0

    KINDS = ("ideal", "angle-shifted", "errored", "dephased")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown likelihood kind {self.kind!r}")
        if self.kind == "errored" and not 0 <= self.eps <= 0.5:
            raise ValueError("eps must lie in [0, 1/2]")
        if self.kind == "dephased":
            if self.chi < 0 or self.tau < 0:
                raise ValueError("chi and tau must be nonnegative")
            if self.chi * self.tau / 2 > 0.5:
                raise ValueError("chi * tau / 2 exceeds 1/2; first-order model invalid")

    @property
    def effective_eps(self) -> float:
        if self.kind == "errored":
            return self.eps
        if self.kind == "dephased":
            return self.chi * self.tau / 2
        return 0.0

    def __call__(self, y, theta, x, big_k: float):
        return likelihood(self, y, theta, x, big_k)


def likelihood(flavor: Likelihood, y, theta, x, big_k: float):
    """Outcome probability; broadcasts over array inputs."""
    y = np.asarray(y)
    if np.any((y != 0) & (y != 1)):
        raise ValueError("outcome must be 0 or 1")
    theta = np.asarray(theta, dtype=float)
    if flavor.delta_theta:
        theta = theta + np.where(theta >= 0, 1.0, -1.0) * flavor.delta_theta
    phase = theta - big_k * np.asarray(x, dtype=float)
    sign = 1.0 - 2.0 * y
    p = y + sign * np.cos(0.5 * phase) ** 2 - sign * flavor.effective_eps * np.cos(phase)
    return p if p.ndim else float(p)


def slope_coefficients(params: RtpParams, big_theta: float) -> dict[tuple[int, int], float]:
    """Estimated-phase slopes ``lambda_s^y`` from the stable null-result eigenvectors.

    Keys are ``(s, y)``.  The slope is the one-step phase increment divided
    by ``s' kappa tau`` where ``s'`` is the sign after the step.
    """
    if abs(math.sin(big_theta)) < 1e-9:
        raise ValueError("Theta must not be a multiple of pi")
    tau = big_theta / params.big_k
    out = {}
    for s in (1, -1):
        setting = MeasurementSetting(s * big_theta, tau)
        e = dominant_eigenpair(f_map(params, setting, 0)).vector
        ref = e.sum()
        for y in (0, 1):
            step = np.sum(f_map(params, setting, y) @ e) / ref
            s_next = s * (-1) ** y
            out[(s, y)] = float(np.angle(step)) / (s_next * params.kappa * tau)
    return out
