"""Estimators on synthetic data with closed-form or resampling oracles."""

import math

import numpy as np
import pytest

from tscp import stats
from tscp.breakpoints import Increment
from tscp.estimators import (
    DegenerateFitError,
    clt_report,
    complete_convergence_report,
    density_report,
    estimate_alpha,
    estimate_sigma2,
    estimate_theta,
    fit_decay_curve,
    iid_report,
    tail_fit,
)


def inc(x, psi, m=0):
    return Increment(x=x, psi=psi, m=m)


# --- edge speed ---


def test_alpha_degenerate_sample():
    est = estimate_alpha([inc(2, 1.0)] * 10)
    assert est.alpha_hat == 2.0 and est.stderr == 0.0


def test_alpha_is_ratio_of_means_not_mean_of_ratios():
    est = estimate_alpha([inc(1, 1.0), inc(3, 1.0)])
    assert est.alpha_hat == 2.0


def test_alpha_permutation_invariant():
    incs = [inc(1, 0.5), inc(4, 2.0), inc(2, 1.5), inc(3, 0.7)]
    a = estimate_alpha(incs)
    b = estimate_alpha(list(reversed(incs)))
    assert a == b


def test_alpha_needs_two_increments():
    with pytest.raises(ValueError):
        estimate_alpha([inc(1, 1.0)])


def test_alpha_stderr_against_bootstrap_oracle():
    rng = np.random.default_rng(0)
    n = 4000
    psi = rng.exponential(2.0, n) + 0.2
    x = np.maximum(1, rng.poisson(0.8 * psi))
    est = estimate_alpha((x, psi, np.zeros(n)))
    boots = []
    for _ in range(300):
        idx = rng.integers(0, n, n)
        boots.append(x[idx].mean() / psi[idx].mean())
    assert est.stderr == pytest.approx(np.std(boots), rel=0.25)


# --- sigma2 ---


def test_sigma2_direct_arithmetic():
    s2 = estimate_sigma2([inc(1, 1.0), inc(3, 1.0)], alpha_hat=2.0)
    assert s2 == pytest.approx(1.0)


def test_sigma2_degenerate_warns_and_returns_zero():
    with pytest.warns(UserWarning):
        s2 = estimate_sigma2([inc(2, 1.0)] * 5, alpha_hat=2.0)
    assert s2 == 0.0


# --- CLT report ---


def test_clt_rejects_nonpositive_sigma2():
    with pytest.raises(ValueError):
        clt_report({100.0: np.zeros(200)}, alpha_hat=1.0, sigma2_hat=0.0)


def test_clt_calibration_under_null():
    # z-samples drawn i.i.d. standard normal must pass with prob >= 0.99
    rng = np.random.default_rng(42)
    passes = 0
    trials = 300
    for _ in range(trials):
        r_by_t = {}
        for t in (100.0, 200.0, 400.0):
            z = rng.standard_normal(800)
            r_by_t[t] = 0.5 * t + z * math.sqrt(t * 1.3)
        rep = clt_report(r_by_t, alpha_hat=0.5, sigma2_hat=1.3)
        passes += rep.passed
    assert passes / trials >= 0.97  # nominal >= 0.99 minus binomial noise


def test_clt_detects_wrong_center():
    rng = np.random.default_rng(1)
    t = 400.0
    z = rng.standard_normal(3000)
    r = 0.55 * t + z * math.sqrt(t * 1.3)  # center off by 0.05*t
    rep = clt_report({t: r}, alpha_hat=0.5, sigma2_hat=1.3)
    assert not rep.passed


def test_clt_inconclusive_without_survivors():
    rep = clt_report({100.0: np.zeros(5)}, alpha_hat=0.0, sigma2_hat=1.0)
    assert rep.inconclusive and not rep.passed


# --- theta / density ---


def test_estimate_theta_mean():
    assert estimate_theta(np.array([0.5, 0.7])) == pytest.approx(0.6)


def test_density_report_pass_and_fail():
    counts = np.full(500, 0.40 * 400)
    lefts = np.full(500, -0.33 * 400) + np.random.default_rng(3).normal(0, 2.0, 500)
    rep = density_report(
        {400.0: (counts, lefts)}, alpha_hat=0.33, alpha_stderr=0.003,
        theta_hat=0.61, beta_hat=0.35,
    )
    assert rep.ratio_checks[0].status == "pass"
    assert rep.symmetry_checks[0].within
    rep_bad = density_report(
        {400.0: (counts * 1.5, lefts)}, alpha_hat=0.33, alpha_stderr=0.003,
        theta_hat=0.61, beta_hat=0.35,
    )
    assert rep_bad.ratio_checks[0].status == "fail"


def test_density_inconclusive_without_survivors():
    rep = density_report(
        {400.0: (np.zeros(0), np.zeros(0))}, alpha_hat=0.3, alpha_stderr=0.01,
        theta_hat=0.6, beta_hat=0.3,
    )
    assert rep.ratio_checks[0].status == "inconclusive"


# --- complete convergence ---


def test_complete_convergence_empty_f_is_exact():
    n = 400
    lhs = np.ones((n, 1), dtype=bool)   # empty F: intersection always empty
    phi = np.ones((n, 1), dtype=bool)
    rep = complete_convergence_report([()], lhs, phi, beta_successes=140, beta_n=n, t_eval=100.0)
    e = rep.entries[0]
    assert e.lhs == 1.0 and e.rhs == pytest.approx(1.0) and e.overlap


def test_complete_convergence_detects_mismatch():
    rng = np.random.default_rng(7)
    n = 4000
    lhs = rng.random((n, 1)) < 0.9
    phi = rng.random((n, 1)) < 0.2
    rep = complete_convergence_report([(0,)], lhs, phi, beta_successes=n // 2, beta_n=n, t_eval=1.0)
    assert not rep.entries[0].overlap


# --- tail fits ---


def test_tail_fit_exponential_oracle():
    rng = np.random.default_rng(5)
    samples = rng.exponential(0.5, 20_000)  # rate 2
    thr = np.linspace(0.2, 2.0, 8)
    fit = tail_fit(samples, thr, variable="exp2")
    assert fit.gamma_hat == pytest.approx(2.0, rel=0.1)
    assert fit.r2 > 0.98


def test_tail_fit_constant_samples_degenerate():
    with pytest.raises(DegenerateFitError):
        tail_fit(np.full(100, 3.0), [1.0, 2.0, 2.5, 2.8, 2.9])


def test_tail_fit_all_censored_errors():
    with pytest.raises(ValueError):
        tail_fit(np.full(50, np.nan), [1.0, 2.0])


def test_tail_fit_censored_joint_event():
    # censored entries count in the denominator only: P(X >= x, observed)
    rng = np.random.default_rng(6)
    obs = rng.exponential(1.0, 10_000)
    samples = np.concatenate([obs, np.full(10_000, np.nan)])
    thr = np.linspace(0.5, 3.0, 6)
    fit = tail_fit(samples, thr, variable="half-censored")
    # P(X >= x, observed) = 0.5 * exp(-x): same decay rate
    assert fit.gamma_hat == pytest.approx(1.0, rel=0.1)


def test_fit_decay_curve_needs_five_points():
    with pytest.raises(DegenerateFitError):
        fit_decay_curve(np.arange(4.0), np.array([0.5, 0.4, 0.3, 0.2]), "x")


# --- iid report ---


def _synthetic_batch(rng, n_reps=60, per_rep=12, rho=0.0):
    reps, idxs, xs, psis, ms = [], [], [], [], []
    for r in range(n_reps):
        e = rng.standard_normal(per_rep)
        if rho > 0:
            for i in range(1, per_rep):
                e[i] = rho * e[i - 1] + math.sqrt(1 - rho * rho) * e[i]
        x = np.maximum(1, np.round(3 + e)).astype(float)
        psi = np.maximum(0.1, 2 + 0.5 * e + rng.standard_normal(per_rep) * 0.3)
        m = np.maximum(0, np.round(rng.exponential(1.0, per_rep))).astype(float)
        reps.extend([r] * per_rep)
        idxs.extend(range(1, per_rep + 1))
        xs.extend(x)
        psis.extend(psi)
        ms.extend(m)
    return (
        np.array(reps),
        np.array(idxs),
        (np.array(xs), np.array(psis), np.array(ms)),
    )


def test_iid_calibration_under_null():
    rng = np.random.default_rng(11)
    passes = 0
    trials = 120
    for _ in range(trials):
        reps, idxs, incs = _synthetic_batch(rng)
        rep = iid_report(reps, idxs, incs)
        assert not rep.inconclusive
        passes += rep.passed
    assert passes / trials >= 0.94  # nominal >= 0.97 minus binomial noise


def test_iid_detects_ar1_correlation():
    rng = np.random.default_rng(12)
    rejected = 0
    for _ in range(10):
        reps, idxs, incs = _synthetic_batch(rng, rho=0.5)
        rep = iid_report(reps, idxs, incs)
        rejected += not rep.passed
    assert rejected >= 9  # power sanity check at correlation 0.5


def test_iid_inconclusive_when_small():
    rng = np.random.default_rng(13)
    reps, idxs, incs = _synthetic_batch(rng, n_reps=5, per_rep=4)
    rep = iid_report(reps, idxs, incs)
    assert rep.inconclusive and not rep.passed


# --- shared stats machinery ---


def test_ks_critical_matches_scipy_exact_small_n():
    from scipy import stats as sps

    assert stats.ks_critical_1samp(20, 0.01) == pytest.approx(
        float(sps.kstwo.isf(0.01, 20))
    )
    # asymptotic regime
    assert stats.ks_critical_1samp(1000, 0.01) == pytest.approx(1.6276 / math.sqrt(1000), rel=1e-3)


def test_ks_distance_computations():
    z = np.array([-1.0, 0.0, 1.0])
    d = stats.ks_distance_to_standard_normal(z)
    assert 0 < d < 1
    x = np.array([1.0, 2.0, 3.0])
    assert stats.ks_distance_2samp(x, x) == pytest.approx(0.0)
    assert stats.ks_distance_2samp(x, x + 10) == pytest.approx(1.0)


def test_wilson_interval_contains_mle():
    lo, hi = stats.wilson_interval(30, 100)
    assert lo < 0.3 < hi
    lo0, hi0 = stats.wilson_interval(0, 50)
    assert lo0 == pytest.approx(0.0, abs=1e-12) and hi0 > 0.01


def test_lag1_autocorrelation_null_and_signal():
    rng = np.random.default_rng(14)
    groups = [rng.standard_normal(50) for _ in range(40)]
    rho, n = stats.lag1_autocorrelation(groups)
    assert n == 40 * 49
    assert abs(rho) < 4 / math.sqrt(n)
    trending = [np.arange(50, dtype=float) for _ in range(10)]
    rho_t, _ = stats.lag1_autocorrelation(trending)
    assert rho_t > 0.9
