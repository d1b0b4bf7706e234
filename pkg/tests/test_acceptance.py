"""Acceptance criteria 1-11.  Each test records one PASS/FAIL line shown in the summary."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm as normal

from spectator_rtn import analytics as an
from spectator_rtn.analytics import THETA_STAR, BeforeTimeDistribution, h_theta
from spectator_rtn.bayes import Likelihood, likelihood
from spectator_rtn.maps import MeasurementSetting, f_map, f_map_eps, h_map
from spectator_rtn.oracle import detection_delays
from spectator_rtn.rtp import RtpParams, steady_state
from spectator_rtn.sop import ImperfectionConfig, mc_coherence, sop_coherence, sop_rate

from conftest import ACCEPTANCE_LINES

P100 = RtpParams(1.0, 1.0, 0.2, 100.0)
P20 = RtpParams(1.0, 1.0, 0.2, 20.0)
IDEAL = ImperfectionConfig()

FIG4_DTHETA = (0.0, 0.025, 0.05, 0.075, 0.1, 0.125, 0.15, 0.175, 0.2, 0.225, 0.25)
FIG5_DKAPPA = (-0.01, -0.0075, -0.005, -0.0025, 0.0, 0.0025, 0.005, 0.0075, 0.01)
FIG7_THETA_SR = (0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0)
FIG8_EPS = (0.005, 0.01, 0.015, 0.02, 0.03, 0.04)
# K tau' grid over [Theta*, 3 pi], skipping the poles of H at pi and 2 pi
DEAD_TIME_GRID = (
    THETA_STAR, 1.8, 2.1, 2.4, 2.7, 3.6, 4.0, 4.4, 4.69424, 5.0, 5.3, 5.7,
    6.8, 7.2, 7.6, 7.84327, 8.2, 8.6, 9.0,
)


def record(n, ok, detail):
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)
    assert ok, line


def worst(pairs):
    """Largest relative deviation and where it occurs."""
    key, dev = max(pairs, key=lambda kv: abs(kv[1]))
    return key, dev


# ---------------------------------------------------------------- 1


def test_criterion_01_optimal_angle():
    theta, h = an.minimize_h_theta()
    ok = abs(theta - 1.50055) <= 1e-3 and abs(h - 1.254) <= 1e-3
    record(1, ok, f"Theta*={theta:.6f} (1.50055+-1e-3), H*={h:.6f} (1.254+-1e-3)")


# ---------------------------------------------------------------- 2


def test_criterion_02_ideal_sop_rate():
    est, res = sop_rate(P100, IDEAL, THETA_STAR, n_steps=18, discard=5)
    ok = 1.13 <= est.scaled_rate <= 1.38
    record(2, ok, f"scaled SOP rate {est.scaled_rate:.4f} in [1.13, 1.38] ({res.n_leaves} leaves)")


# ---------------------------------------------------------------- 3


def test_criterion_03_no_control_decay():
    p_ss = np.asarray(steady_state(P100))
    ts = np.linspace(2.0, 60.0, 30)
    c = np.array([abs((h_map(P100, t, P100.kappa) @ p_ss).sum()) for t in ts])
    rate = -np.polyfit(ts, np.log(c), 1)[0]
    expected = P100.kappa**2 * P100.gamma_breve / (2 * P100.gamma_bar**2)
    dev = rate / expected - 1
    record(3, abs(dev) <= 0.05, f"fitted {rate:.6f} vs {expected:.6f} ({dev:+.2%}, tol 5%)")


# ---------------------------------------------------------------- 4


def test_criterion_04_angle_offset():
    devs, scaled = [], {}
    for d in FIG4_DTHETA:
        est, _ = sop_rate(P100, ImperfectionConfig(delta_theta=d), THETA_STAR)
        formula = an.rate_delta_theta(P100, THETA_STAR, d)
        scaled[d] = est.rate / formula - 1
        if d <= 0.15 + 1e-12:
            devs.append((d, scaled[d]))
    d_bad, dev = worst(devs)
    in_band = all(abs(v) <= 0.15 for _, v in devs)
    diverges = scaled[0.25] > scaled[0.2] > scaled[0.15]
    ok = in_band and diverges
    record(
        4,
        ok,
        f"worst SOP/formula deviation for dTheta<=0.15: {dev:+.1%} at {d_bad} (tol 15%); "
        f"divergence beyond 0.2: {scaled[0.2]:+.1%}, {scaled[0.25]:+.1%}",
    )


# ---------------------------------------------------------------- 5


def test_criterion_05_sensitivity_offset():
    base, _ = sop_rate(P20, IDEAL, THETA_STAR)
    devs = []
    for dk in FIG5_DKAPPA:
        est, _ = sop_rate(P20, ImperfectionConfig(delta_kappa=dk), THETA_STAR)
        formula = an.rate_delta_kappa(P20, THETA_STAR, dk, an.rate_ideal(P20, THETA_STAR))
        devs.append((dk, est.rate / formula - 1))
    dk_bad, dev = worst(devs)
    offset = dict(devs)[0.0]
    ok = all(abs(v) <= 0.20 for _, v in devs)
    record(5, ok, f"worst deviation {dev:+.1%} at dkappa={dk_bad} (tol 20%); offset at 0: {offset:+.1%}")


# ---------------------------------------------------------------- 6


def test_criterion_06_reset_time():
    devs = []
    for ts in FIG7_THETA_SR:
        est, _ = sop_rate(P100, ImperfectionConfig(theta_sr=ts), THETA_STAR)
        devs.append((ts, est.rate / an.rate_reset(P100, THETA_STAR, ts) - 1))
    ts_bad, dev = worst(devs)
    sop_ok = all(abs(v) <= 0.15 for _, v in devs)
    eig = [(ts, an.rate_reset_eigen(P100, THETA_STAR, ts) / an.rate_reset(P100, THETA_STAR, ts) - 1)
           for ts in FIG7_THETA_SR]
    ts_eig, dev_eig = worst(eig)
    eig_ok = all(abs(v) <= 0.01 for _, v in eig)
    record(
        6,
        sop_ok and eig_ok,
        f"SOP worst {dev:+.1%} at theta_sr={ts_bad} (tol 15%); "
        f"eigen route worst {dev_eig:+.2%} at theta_sr={ts_eig} (tol 1%)",
    )


# ---------------------------------------------------------------- 7


def test_criterion_07_dead_time():
    th = an.dead_time_thresholds()
    hr = th.h_roots()
    checks = {
        "crossover0": abs(th.crossovers[0] - 2.325) <= 0.01,
        "root1": abs(th.roots[1] - 4.69) <= 0.01,
        "crossover1": abs(th.crossovers[1] - 5.27) <= 0.01,
        "root2": abs(th.roots[2] - 7.84) <= 0.01,
        "H1": abs(hr[1] - 27.58) <= 0.05,
        "H2": abs(hr[2] - 80.22) <= 0.1,
    }
    devs = []
    for kt in DEAD_TIME_GRID:
        est, _ = sop_rate(P100, IDEAL, THETA_STAR, tau=kt / P100.big_k)
        devs.append((kt, est.scaled_rate / h_theta(kt) - 1))
    kt_bad, dev = worst(devs)
    n_bad = sum(abs(v) > 0.15 for _, v in devs)
    ok = all(checks.values()) and n_bad == 0
    record(
        7,
        ok,
        f"thresholds {th.crossovers[0]:.4f}, {th.roots[1]:.4f}, {th.crossovers[1]:.4f}, {th.roots[2]:.4f}; "
        f"H {hr[1]:.3f}, {hr[2]:.3f} ({'ok' if all(checks.values()) else 'off'}); "
        f"SOP vs H(K tau'): {n_bad}/{len(devs)} points outside 15%, worst {dev:+.0%} at K tau'={kt_bad}",
    )


# ---------------------------------------------------------------- 8


def test_criterion_08_readout_error_fit():
    fits, doubling = {}, {}
    for k in (60.0, 80.0, 100.0):
        p = P100.replace(big_k=k)
        base, _ = sop_rate(p, IDEAL, THETA_STAR, discard=10)
        rates = {e: sop_rate(p, ImperfectionConfig(eps=e), THETA_STAR, discard=10)[0].rate for e in FIG8_EPS}
        fits[k] = an.fit_epsilon_relation(list(rates.items()), base.rate)
        eps = np.array(FIG8_EPS)
        ratio = np.array([rates[e] / base.rate for e in FIG8_EPS])
        doubling[k] = float(np.interp(2.0, ratio, eps))
    a_ok = all(abs(a - 1) <= 0.15 for a, _ in fits.values())
    b_ok = all(abs(b - 4) <= 0.4 for _, b in fits.values())
    d_ok = all(abs(d - 0.02) <= 0.005 for d in doubling.values())
    detail = "; ".join(
        f"K={k:g}: a={a:.3f} b={b:.3f} doubling eps={doubling[k]:.4f}" for k, (a, b) in fits.items()
    )
    record(8, a_ok and b_ok and d_ok, detail)


# ---------------------------------------------------------------- 9


def test_criterion_09_before_time():
    parts = {}
    for theta in (1.3, THETA_STAR, math.pi / 2, 1.7):
        d = BeforeTimeDistribution(theta, P100.big_k, m_max=50)
        norm, qmean, qvar = an.quadrature_moments(d)
        mean, var = an.before_time_moments(d, check=False)
        parts[f"norm@{theta:.3f}"] = abs(norm - 1) <= 1e-6
        parts[f"mean@{theta:.3f}"] = abs(qmean / mean - 1) <= 1e-6
        parts[f"var@{theta:.3f}"] = abs(qvar / var - 1) <= 1e-6

    delays = detection_delays(P100, THETA_STAR, 100_000, seed=2024)
    mean_z = (delays.mean() - an.mean_before_time(THETA_STAR, P100.big_k)) / delays.mean_stderr()
    var_z = (delays.var() - an.var_before_time(THETA_STAR, P100.big_k)) / delays.var_stderr()
    parts["mc-mean"] = abs(mean_z) <= 3
    parts["mc-var"] = abs(var_z) <= 3
    parts["mc-complete"] = delays.undetected == 0

    right = BeforeTimeDistribution(math.pi / 2, P100.big_k)
    beyond = np.linspace(math.pi / P100.big_k * (1 + 1e-9), 20 / P100.big_k, 2000)
    # cos^2(pi/2) evaluates to ~4e-33, so "exactly zero" is zero to that precision
    parts["zero-beyond"] = bool(np.all(an.before_time_density(right, beyond) <= 1e-28))

    d = BeforeTimeDistribution(THETA_STAR, P100.big_k)
    t0, h = 2 * d.tau, 1e-7
    f = lambda t: float(an.before_time_density(d, t))
    left = (f(t0 - h) - f(t0 - 2 * h)) / h
    right_slope = (f(t0 + 2 * h) - f(t0 + h)) / h
    parts["kink"] = abs(left - right_slope) > 1e-2 * abs(left) and abs(f(t0 + 1e-13) - f(t0 - 1e-13)) < 1e-6 * f(t0)

    bad = [k for k, v in parts.items() if not v]
    record(
        9,
        not bad,
        f"quadrature checks {'ok' if not any(k[:4] in ('norm', 'mean', 'var@') for k in bad) else 'off'}; "
        f"MC delay mean z={mean_z:+.2f}, var z={var_z:+.2f}; zero beyond pi/K, kink at 2Theta/K"
        + (f"; failing: {', '.join(bad)}" if bad else ""),
    )


# ---------------------------------------------------------------- 10


def _figure_points():
    pts = [("ideal", P100, IDEAL)]
    pts += [(f"dtheta={d}", P100, ImperfectionConfig(delta_theta=d)) for d in FIG4_DTHETA if d]
    pts += [(f"dkappa={d}", P20, ImperfectionConfig(delta_kappa=d)) for d in FIG5_DKAPPA if d]
    pts += [(f"theta_sr={t}", P100, ImperfectionConfig(theta_sr=t)) for t in FIG7_THETA_SR if t]
    pts += [(f"eps={e}", P100, ImperfectionConfig(eps=e)) for e in FIG8_EPS]
    pts += [(f"tau_dd={kt:.3g}/K", P100, ImperfectionConfig(tau_dd=kt / 100)) for kt in DEAD_TIME_GRID[1:]]
    pts += [(f"chi={c}", P100, ImperfectionConfig(chi=c)) for c in (0.5, 2.0)]
    return pts


def test_criterion_10_oracle_equivalence():
    # 3 sigma is applied family-wise over every (configuration, step) comparison; any
    # step beyond plain 3 sigma is then re-run at ten times the samples and must hold there
    n_steps = 18
    points = _figure_points()
    n_cmp = len(points) * n_steps
    limit = float(normal.isf((1 - 0.9973 ** (1 / n_cmp)) / 2))
    worst_z, where, excursions, failures = 0.0, "", [], []
    for i, (name, p, imp) in enumerate(points):
        exact = sop_coherence(p, imp, THETA_STAR, n_steps).coherence
        mc = mc_coherence(p, imp, THETA_STAR, n_steps, 100_000, seed=1000 + i)
        z = np.abs(mc.coherence - exact) / mc.stderr
        if z.max() > worst_z:
            worst_z, where = float(z.max()), f"{name} step {int(z.argmax()) + 1}"
        if np.any(z > limit):
            failures.append(name)
        elif np.any(z > 3):
            big = mc_coherence(p, imp, THETA_STAR, n_steps, 1_000_000, seed=5000 + i)
            z_big = float(np.max(np.abs(big.coherence - exact) / big.stderr))
            excursions.append(f"{name} {z.max():.2f}->{z_big:.2f}")
            if z_big > 3:
                failures.append(name + " (confirmed at 1e6)")
    record(
        10,
        not failures,
        f"{len(points)} configurations x {n_steps} steps at 1e5 samples; max |z|={worst_z:.2f} ({where}), "
        f"family-wise limit {limit:.2f}"
        + (f"; re-run at 1e6: {', '.join(excursions)}" if excursions else "")
        + (f"; failing: {', '.join(failures)}" if failures else ""),
    )


# ---------------------------------------------------------------- 11

_params = st.builds(RtpParams, st.floats(0.1, 5.0), st.floats(0.1, 5.0), st.floats(0.01, 1.0), st.floats(5.0, 200.0))
_setting = st.builds(MeasurementSetting, st.floats(-3.0, 3.0), st.floats(1e-4, 0.5))
_flavor = st.one_of(
    st.just(Likelihood()),
    st.builds(lambda d: Likelihood("angle-shifted", delta_theta=d), st.floats(-0.5, 0.5)),
    st.builds(lambda e: Likelihood("errored", eps=e), st.floats(0, 0.5)),
    st.builds(lambda c, t: Likelihood("dephased", chi=c, tau=t), st.floats(0, 10), st.floats(0, 0.1)),
    st.builds(lambda d, e: Likelihood("errored", eps=e, delta_theta=d), st.floats(-0.5, 0.5), st.floats(0, 0.5)),
)
_structural_failures: list[str] = []


@settings(max_examples=300, deadline=None)
@given(_params, _setting, st.floats(0, 0.5), st.sampled_from([0, 1]))
def _check_maps(p, s, eps, y):
    h = h_map(p, s.tau, p.kappa)
    if not np.allclose(f_map(p, s, 0) + f_map(p, s, 1), h, atol=1e-14, rtol=0):
        _structural_failures.append("F(0)+F(1)=H")
    if not np.allclose(f_map_eps(p, s, y, eps), (1 - 2 * eps) * f_map(p, s, y) + eps * h, atol=1e-13, rtol=0):
        _structural_failures.append("F^eps identity")


@settings(max_examples=300, deadline=None)
@given(
    _params,
    st.sampled_from([0.001, 0.01, 0.1, 1.0]),
    st.sampled_from([0.001, 0.01, 0.1, 1.0]),
    st.sampled_from(["0", "kappa", "kappa+K", "kappa-K"]),
)
def _check_semigroup(p, t1, t2, which):
    k = {"0": 0.0, "kappa": p.kappa, "kappa+K": p.kappa + p.big_k, "kappa-K": p.kappa - p.big_k}[which]
    t1, t2 = t1 / p.gamma_bar, t2 / p.gamma_bar
    if not np.allclose(h_map(p, t1 + t2, k), h_map(p, t2, k) @ h_map(p, t1, k), atol=1e-10, rtol=0):
        _structural_failures.append("semigroup")


@settings(max_examples=300, deadline=None)
@given(_flavor, st.integers(0, 2**32 - 1))
def _check_likelihood(flavor, seed):
    rng = np.random.default_rng(seed)
    theta = rng.uniform(-7, 7, 1000)
    x = rng.uniform(-0.1, 0.1, 1000)
    total = likelihood(flavor, 0, theta, x, 100.0) + likelihood(flavor, 1, theta, x, 100.0)
    if not np.allclose(total, 1.0, atol=1e-14, rtol=0):
        _structural_failures.append(f"likelihood normalisation ({flavor.kind})")


@settings(max_examples=200, deadline=None)
@given(st.floats(0.3, 2.8), st.floats(5.0, 1000.0))
def _check_slope_identity(theta, k):
    closed = (1 / math.tan(theta) + theta / math.sin(theta) ** 2) / theta
    via_tb = -1 + 2 * an.mean_before_time(theta, k) / (theta / k)
    if abs(closed - via_tb) > 1e-6:
        _structural_failures.append("lambda_1 identity")


def test_criterion_11_structural_invariants():
    _structural_failures.clear()
    for check in (_check_maps, _check_semigroup, _check_likelihood, _check_slope_identity):
        check()
    bad = sorted(set(_structural_failures))
    record(
        11,
        not bad,
        "F(0)+F(1)=H, F^eps identity, semigroup, likelihood normalisation, lambda_1 identity"
        + (f"; failing: {', '.join(bad)}" if bad else ": all hold"),
    )
