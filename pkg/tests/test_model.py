import math

import numpy as np
import pytest

from recare.model import (
    DIV_GUARD,
    PARAM_NAMES,
    DivisionGuardError,
    RecareParams,
    SignViolationError,
    check_stationarity,
    default_init,
    filter_ig,
    filter_sav,
    forecast_next,
    in_support,
    initial_expectile,
    joint_loglik,
    loglik_kernel,
    run_filter,
)
from recare.simulation import RgarchSimParams, map_rgarch_to_recare, simulate_rgarch


def P(b1=-0.1, b2=0.5, b3=-0.2, xi=0.0, phi=0.5, t1=0.0, t2=0.0, su=1.0, tau=0.01, variant="SAV"):
    return RecareParams(b1, b2, b3, xi, phi, t1, t2, su, tau=tau, variant=variant)


def reference_filter(p, r, x, mu0):
    """Plain-Python recursion and likelihood used as an oracle."""
    n = len(r)
    mu = [mu0]
    for t in range(1, n):
        if p.variant == "IG":
            mu.append(-math.sqrt(p.beta1 + p.beta2 * mu[-1] ** 2 + p.beta3 * x[t - 1] ** 2))
        else:
            mu.append(p.beta1 + p.beta2 * mu[-1] + p.beta3 * x[t - 1])
    eps = [r[t] / mu[t] for t in range(n)]
    e2bar = sum(e * e for e in eps) / n
    u = []
    for t in range(n):
        if p.variant == "IG":
            level = x[t] ** 2 - p.xi - p.phi * mu[t] ** 2
        else:
            level = x[t] - p.xi - p.phi * abs(mu[t])
        u.append(level - p.tau1 * eps[t] - p.tau2 * (eps[t] ** 2 - e2bar))
    als = sum((1 - p.tau if r[t] < mu[t] else p.tau) * (r[t] - mu[t]) ** 2 for t in range(n))
    ll_r = -n / 2 * math.log(als)
    ll_x = -0.5 * sum(math.log(2 * math.pi) + math.log(p.sigma_u**2) + ut**2 / p.sigma_u**2 for ut in u)
    return np.array(mu), np.array(u), ll_r, ll_x


def test_sav_constant_when_no_dynamics():
    p = P(b1=-0.3, b2=0.0, b3=0.0)
    out = filter_sav(p, np.ones(5), np.ones(5), -1.0)
    np.testing.assert_array_equal(out.mu[1:], -0.3)


def test_sav_hand_recursion():
    out = filter_sav(P(), np.array([-0.5, 0.2, 0.1]), np.ones(3), -1.0)
    np.testing.assert_allclose(out.mu, [-1.0, -0.8, -0.7], rtol=1e-15)


def test_sav_zero_returns():
    p = P(xi=0.1, phi=0.3, t1=0.2, t2=0.4)
    x = np.array([1.0, 2.0, 0.5, 1.5])
    out = filter_sav(p, np.zeros(4), x, -1.0)
    assert np.all(out.eps == 0) and out.eps2_bar == 0
    np.testing.assert_allclose(out.u, x - 0.1 - 0.3 * np.abs(out.mu), rtol=1e-15)


def test_sav_matches_reference(rng):
    ds = simulate_rgarch(RgarchSimParams(n=400), seed=3)
    p = map_rgarch_to_recare().replace(tau=0.0015)
    mu0 = initial_expectile(ds.r, 0.01)
    out = filter_sav(p, ds.r, ds.x, mu0)
    mu, u, ll_r, ll_x = reference_filter(p, list(ds.r), list(ds.x), mu0)
    np.testing.assert_allclose(out.mu, mu, rtol=1e-12)
    np.testing.assert_allclose(out.u, u, rtol=1e-10, atol=1e-12)
    assert out.loglik_r == pytest.approx(ll_r, rel=1e-12)
    assert out.loglik_x == pytest.approx(ll_x, rel=1e-12)
    assert joint_loglik(p, ds.r, ds.x, mu0) == pytest.approx(ll_r + ll_x, rel=1e-12)


def test_sav_sign_violation_and_guard():
    with pytest.raises(SignViolationError):
        filter_sav(P(b1=0.5, b2=0.0, b3=0.0), np.ones(3), np.ones(3), -1.0)
    with pytest.raises(DivisionGuardError):
        filter_sav(P(b1=-DIV_GUARD / 10, b2=0.0, b3=0.0), np.ones(3), np.ones(3), -1.0)
    assert joint_loglik(P(b1=0.5, b2=0.0, b3=0.0), np.ones(3), np.ones(3), -1.0) == -np.inf
    with pytest.raises(SignViolationError):
        filter_sav(P(), np.ones(3), np.ones(3), 0.5)


def test_ig_hand_value():
    p = P(b1=0.01, b2=0.25, b3=0.04, variant="IG")
    out = filter_ig(p, np.array([-0.5, -0.1]), np.array([2.0, 1.0]), -1.0)
    assert out.mu[1] == pytest.approx(-math.sqrt(0.42), rel=1e-15)


def test_ig_constant_and_negative(rng):
    p = P(b1=0.04, b2=1e-12, b3=1e-12, variant="IG")
    out = filter_ig(p, rng.standard_normal(20), rng.random(20), -1.0)
    np.testing.assert_allclose(out.mu[1:], -0.2, rtol=1e-9)
    q = P(b1=0.05, b2=0.6, b3=0.2, xi=0.1, phi=0.5, t1=0.1, t2=0.1, variant="IG")
    r, x = rng.standard_normal(200), np.abs(rng.standard_normal(200))
    out = filter_ig(q, r, x, -1.0)
    assert np.all(out.mu < 0)
    mu, u, ll_r, ll_x = reference_filter(q, list(r), list(x), -1.0)
    np.testing.assert_allclose(out.u, u, rtol=1e-10, atol=1e-12)
    assert out.loglik == pytest.approx(ll_r + ll_x, rel=1e-12)
    assert run_filter(q, r, x, -1.0).loglik == out.loglik


def test_measurement_term_with_zero_residuals():
    # beta3 = 0 decouples mu from x, so x can be set to make u identically zero
    p = P(b3=0.0, xi=0.2, phi=0.5)
    mu = filter_sav(p, np.zeros(6), np.ones(6), -1.0).mu
    out = filter_sav(p, np.zeros(6), 0.2 + 0.5 * np.abs(mu), -1.0)
    np.testing.assert_allclose(out.u, 0.0, atol=1e-15)
    assert out.loglik_x == pytest.approx(-3 * math.log(2 * math.pi), rel=1e-14)


@pytest.mark.parametrize("k", [0, 4, 9])
def test_measurement_term_decreases_with_residual(rng, k):
    p = P(b3=0.0, xi=0.1, phi=0.2, t1=0.1, su=0.5)
    r, x = rng.standard_normal(10) * 0.1, rng.random(10) + 0.5
    base = filter_sav(p, r, x, -1.0)
    x2 = x.copy()
    x2[k] += (1.0 if base.u[k] >= 0 else -1.0) * 0.5
    assert filter_sav(p, r, x2, -1.0).loglik_x < base.loglik_x


def test_centering_and_decomposition(rng):
    ds = simulate_rgarch(RgarchSimParams(n=300), seed=5)
    p = map_rgarch_to_recare().replace(tau=0.0015)
    out = filter_sav(p, ds.r, ds.x, initial_expectile(ds.r, 0.01))
    assert abs(np.mean(out.eps**2 - out.eps2_bar)) < 1e-12
    ll, _, status = loglik_kernel(p.as_array(), p.tau, 0.01, ds.r, ds.x, initial_expectile(ds.r, 0.01), False)
    assert status == 0
    assert ll == pytest.approx(out.loglik_r + out.loglik_x, rel=1e-12)


def test_deterministic():
    ds = simulate_rgarch(RgarchSimParams(n=200), seed=8)
    p = map_rgarch_to_recare().replace(tau=0.0015)
    a = filter_sav(p, ds.r, ds.x, -2.0)
    b = filter_sav(p, ds.r, ds.x, -2.0)
    np.testing.assert_array_equal(a.mu, b.mu)
    np.testing.assert_array_equal(a.u, b.u)


def test_true_parameters_beat_perturbed_on_average():
    # Monte Carlo oracle: average over 50 simulated datasets
    truth = map_rgarch_to_recare().replace(tau=0.001452)
    bumped = truth.replace(beta2=truth.beta2 + 0.2)
    diffs = []
    for s in range(50):
        ds = simulate_rgarch(RgarchSimParams(n=1000), seed=1000 + s)
        mu0 = initial_expectile(ds.r, 0.01)
        diffs.append(joint_loglik(truth, ds.r, ds.x, mu0) - joint_loglik(bumped, ds.r, ds.x, mu0))
    assert np.mean(diffs) > 0


def test_stationarity_examples():
    assert check_stationarity(np.array([0, 0.75, -0.58, 0, 0.39, 0, 0, 1]))
    assert not check_stationarity(np.array([0, 1.0, 0.0, 0, 5.0, 0, 0, 1]))
    assert check_stationarity(np.zeros(8))
    assert not in_support(np.array([0, 0.5, 0, 0, 0, 0, 0, 0.0]))
    assert not in_support(np.array([0.1, 0.5, -0.1, 0, 0, 0, 0, 1.0]), "IG")
    assert in_support(np.array([0.1, 0.5, 0.1, 0, 0, 0, 0, 1.0]), "IG")
    with pytest.raises(ValueError):
        P(b2=1.0, b3=0.0)


def test_params_roundtrip():
    p = P(tau=0.002)
    q = RecareParams.from_array(p.as_array(), tau=0.002)
    assert q == p
    assert len(PARAM_NAMES) == 8


def test_forecast_next_matches_recursion():
    th = np.array([-0.1, 0.5, -0.2, 0, 0.5, 0, 0, 1.0])
    assert forecast_next(th, -1.0, 1.0, False) == pytest.approx(-0.8)
    th_ig = np.array([0.01, 0.25, 0.04, 0, 0.5, 0, 0, 1.0])
    assert forecast_next(th_ig, -1.0, 2.0, True) == pytest.approx(-math.sqrt(0.42))


def test_default_init_is_usable():
    ds = simulate_rgarch(RgarchSimParams(n=1000), seed=11)
    th = default_init(ds.r, ds.x, 0.01)
    assert in_support(th)
    p = RecareParams.from_array(th, tau=0.0015)
    assert np.isfinite(joint_loglik(p, ds.r, ds.x, initial_expectile(ds.r, 0.01)))


def test_default_init_survives_negative_measure():
    # a quiet stretch ending in a negative measure value breaks the
    # moment-matched start
    rng = np.random.default_rng(3)
    r = rng.standard_normal(400)
    x = np.full(400, 1.0)
    x[200:230] = 0.05
    x[230] = -3.0
    q = initial_expectile(r, 0.01)
    th = default_init(r, x, 0.01)
    p = RecareParams.from_array(th, tau=0.0015)
    mu = run_filter(p, r, x, q).mu
    assert np.all(mu < 0)
    # the mean level still matches the empirical quantile
    assert th[0] + th[1] * q + th[2] * x.mean() == pytest.approx(q, rel=1e-12)
    b3_full = (q * (1 - th[1]) + 0.01) / x.mean()
    full = RecareParams.from_array(np.r_[-0.01, th[1], b3_full, th[3:]], tau=0.0015)
    with pytest.raises(SignViolationError):
        run_filter(full, r, x, q)
