"""2x2 transfer matrices acting on coherence vectors.

Rows index the final RTP state and columns the initial one, both ordered
(+1, -1).  ``H(tau, k)`` propagates over an interval without measurement
information, ``F`` folds in one spectator readout.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .rtp import RtpParams

DEGENERACY_TOL = 1e-12


@dataclass(frozen=True)
class MeasurementSetting:
    theta: float
    tau: float

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"waiting time must be positive, got {self.tau}")


def _lambda_eta(params: RtpParams, k: float) -> tuple[complex, complex]:
    gu, gd = params.gamma_up, params.gamma_down
    lam = cmath.sqrt((gd + gu) ** 2 - 4j * k * (gd - gu) - 4 * k * k)
    eta = (gd - gu) - 2j * k
    return lam, eta


def _cosh_sinhc(lam: complex, tau: float) -> tuple[complex, complex]:
    """``cosh(lam tau / 2)`` and ``sinh(lam tau / 2) / lam``; both even in ``lam``."""
    w = 0.5 * lam * tau
    if abs(w) < 1e-4:
        w2 = w * w
        return 1 + w2 / 2 + w2 * w2 / 24, 0.5 * tau * (1 + w2 / 6 + w2 * w2 / 120)
    return cmath.cosh(w), cmath.sinh(w) / lam


def h_map(params: RtpParams, tau: float, k: float, *, flip_branch: bool = False) -> np.ndarray:
    """Matrix of ``int dx exp(i k x) p(x, z | z')`` over a waiting time ``tau``.

    ``flip_branch`` evaluates with ``-lambda``; used only to check branch
    independence.
    """
    if tau < 0:
        raise ValueError(f"tau must be nonnegative, got {tau}")
    lam, eta = _lambda_eta(params, k)
    if flip_branch:
        lam = -lam
    ch, shc = _cosh_sinhc(lam, tau)
    pre = math.exp(-params.gamma_bar * tau)
    return pre * np.array(
        [
            [ch - eta * shc, 2 * params.gamma_up * shc],
            [2 * params.gamma_down * shc, ch + eta * shc],
        ],
        dtype=complex,
    )


def _check_outcome(y: int) -> None:
    if y not in (0, 1):
        raise ValueError(f"outcome must be 0 or 1, got {y!r}")


def f_map_eps(params: RtpParams, setting: MeasurementSetting, y: int, eps: float) -> np.ndarray:
    """Readout map for a detector that reports the wrong outcome with probability ``eps``."""
    _check_outcome(y)
    if not 0 <= eps <= 0.5:
        raise ValueError(f"error probability must lie in [0, 1/2], got {eps}")
    tau, theta = setting.tau, setting.theta
    kappa, big_k = params.kappa, params.big_k
    sign = (1 - 2 * eps) * (-1) ** y
    return 0.25 * (
        2 * h_map(params, tau, kappa)
        + sign * cmath.exp(-1j * theta) * h_map(params, tau, kappa + big_k)
        + sign * cmath.exp(1j * theta) * h_map(params, tau, kappa - big_k)
    )


def f_map(params: RtpParams, setting: MeasurementSetting, y: int) -> np.ndarray:
    return f_map_eps(params, setting, y, 0.0)


def combined_reset_map(
    params: RtpParams, setting: MeasurementSetting, y: int, theta_sr: float, eps: float = 0.0
) -> np.ndarray:
    """Readout map followed by a blind reset period ``theta_sr / K``."""
    if theta_sr < 0:
        raise ValueError("theta_sr must be nonnegative")
    f = f_map_eps(params, setting, y, eps)
    if theta_sr == 0:
        return f
    return h_map(params, theta_sr / params.big_k, params.kappa) @ f


@dataclass(frozen=True)
class Eigenpair:
    value: complex
    vector: np.ndarray
    degenerate: bool


def _normalise(v: np.ndarray) -> np.ndarray:
    total = np.abs(v).sum()
    if total == 0:
        raise ValueError("zero eigenvector")
    v = v / total
    s = v.sum()
    ref = s if abs(s) > 1e-300 else v[np.argmax(np.abs(v))]
    return v * (abs(ref) / ref)


def dominant_eigenpair(m: np.ndarray) -> Eigenpair:
    """Largest-modulus eigenpair of a 2x2 matrix via the quadratic formula.

    The eigenvector has unit 1-norm of entry moduli, and its global phase
    makes the entry sum real and positive.
    """
    m = np.asarray(m, dtype=complex)
    if m.shape != (2, 2):
        raise ValueError("expected a 2x2 matrix")
    a, b, c, d = m[0, 0], m[0, 1], m[1, 0], m[1, 1]
    half_tr = 0.5 * (a + d)
    disc = cmath.sqrt(half_tr * half_tr - (a * d - b * c))
    l1, l2 = half_tr + disc, half_tr - disc
    if abs(l2) > abs(l1):
        l1, l2 = l2, l1
    degenerate = abs(abs(l1) - abs(l2)) <= DEGENERACY_TOL * max(1.0, abs(l1))
    cand1 = np.array([b, l1 - a])
    cand2 = np.array([l1 - d, c])
    v = cand1 if np.abs(cand1).sum() >= np.abs(cand2).sum() else cand2
    if np.abs(v).sum() <= 1e-300 * max(1.0, abs(l1)):
        # m is (numerically) a multiple of the identity
        v = np.array([1.0, 0.0], dtype=complex)
    return Eigenpair(complex(l1), _normalise(v), bool(degenerate))
