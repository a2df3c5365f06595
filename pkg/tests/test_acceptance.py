"""Acceptance criteria at reference scale: lambda=1, mu=2, fixed master seed.

Theorem-level criteria (1-3, and the engine identities inside 10) run with
zero tolerance; statistical criteria run at their stated tolerances with all
thresholds pinned here.  Heavy replica batches are shared across criteria
through session fixtures; the full module takes roughly twenty minutes on
two cores.  Run with `pytest tests/test_acceptance.py -v -s` to see one
PASS/FAIL line per criterion.
"""

import json
import math
import os

import numpy as np
import pytest

from tscp import estimators, experiments, stats
from tscp.cli import main as cli_main
from tscp.couplings import CouplingKind, verify_coupling, verify_reduction
from tscp.percolation import bond_site_coupling_check
from tscp.streams import Construction

LAM, MU = 1.0, 2.0
SEED = 20240811
WORKERS = min(2, os.cpu_count() or 1)

EDGE_REPS = 6500
BP_REPS = 1000
BP_MAX_POINTS = 20  # fixed-count collection avoids renewal length-bias
PHI_REPS = 2000
THETA_REPS = 500
HORIZON = 600.0
SURVIVAL_HORIZON = 150.0

CONS = Construction(master_seed=SEED, lam=LAM, mu=MU)


def announce(num: int, ok: bool, detail: str) -> None:
    print(f"[criterion {num:02d}] {'PASS' if ok else 'FAIL'} - {detail}")


@pytest.fixture(scope="session")
def bp_batch():
    return experiments.run_breakpoints_batch(
        CONS, replicas=BP_REPS, horizon=HORIZON, survival_horizon=SURVIVAL_HORIZON,
        max_points=BP_MAX_POINTS, t_grid=np.linspace(20.0, 240.0, 12), workers=WORKERS,
    )


@pytest.fixture(scope="session")
def edge_batch():
    return experiments.run_edge_batch(
        CONS, replicas=EDGE_REPS, t_max=400.0,
        sample_times=[100.0, 150.0, 200.0, 300.0, 400.0],
        f_sets=((0,), (0, 1), (-2, 3)), f_time=300.0, workers=WORKERS,
    )


@pytest.fixture(scope="session")
def phi_batch():
    return experiments.run_phi_batch(
        CONS, replicas=PHI_REPS, t_eval=300.0, f_sets=((0,), (0, 1), (-2, 3)),
        workers=WORKERS, base_replica=5_000_000,
    )


@pytest.fixture(scope="session")
def theta_batch():
    return experiments.run_theta_batch(
        CONS, replicas=THETA_REPS, t_eval=150.0, window=(-200, 200),
        workers=WORKERS, base_replica=6_000_000,
    )


@pytest.fixture(scope="session")
def alpha_and_sigma(bp_batch):
    est = estimators.estimate_alpha(bp_batch.as_tuple())
    sigma2 = estimators.estimate_sigma2(bp_batch.as_tuple(), est.alpha_hat)
    return est, sigma2


def test_criterion_01_coupling_suite():
    grid = np.arange(0.0, 101.0, 5.0)
    verdicts = []
    for kind in CouplingKind:
        v = verify_coupling(
            kind, CONS, replicas=300, t_max=100.0, sample_grid=grid, k_cap=50,
        )
        verdicts.append(v)
    total = sum(v.n_violations for v in verdicts)
    ok = total == 0
    announce(1, ok, f"coupling suite: {len(verdicts)} lemmas x 300 replicas, "
                    f"{total} violations (exact, zero tolerance)")
    assert ok, [v.to_dict() for v in verdicts if not v.passed]


def test_criterion_02_reduction_at_lambda_eq_mu():
    cons = Construction(master_seed=SEED, lam=2.0, mu=2.0)
    v = verify_reduction(cons, replicas=100, t_max=100.0, sample_grid=np.arange(0.0, 101.0, 5.0))
    announce(2, v.passed, f"reduction lambda=mu=2: infected sets pathwise equal over "
                          f"{v.replicas_checked} replicas, {v.n_violations} violations")
    assert v.passed, v.violations[:5]


def test_criterion_03_bond_site_containment():
    total = 0
    for p_tilde in (0.6, 0.8, 0.95):
        for s in range(100):
            v = bond_site_coupling_check(p_tilde, SEED + s, 500)
            total += v.n_violations
    ok = total == 0
    announce(3, ok, f"bond-to-site containment: p~ in {{0.6,0.8,0.95}}, n<=500, "
                    f"100 seeds each, {total} violations (exact)")
    assert ok


def test_criterion_04_lln_regeneration_vs_slope(bp_batch, edge_batch, alpha_and_sigma):
    est, _ = alpha_and_sigma
    assert est.n_increments >= 2000, f"only {est.n_increments} increments"
    r = edge_batch.survivors_r(400.0)
    slope = float(np.mean(r / 400.0))
    slope_se = float(np.std(r / 400.0, ddof=1) / math.sqrt(r.size))
    ok = est.agrees_with(slope, slope_se, 2.0)
    announce(4, ok, f"LLN: alpha_hat={est.alpha_hat:.4f}+-{est.stderr:.4f} "
                    f"(n={est.n_increments}) vs slope={slope:.4f}+-{slope_se:.4f} "
                    f"(n={r.size}); |diff|={abs(est.alpha_hat - slope):.4f} "
                    f"<= 2*joint={2 * math.hypot(est.stderr, slope_se):.4f}")
    assert ok


def test_criterion_05_clt(edge_batch, alpha_and_sigma):
    est, sigma2 = alpha_and_sigma
    assert sigma2 > 0
    t_list = (100.0, 200.0, 400.0)
    r_by_t = {t: edge_batch.survivors_r(t) for t in t_list}
    n400 = r_by_t[400.0].size
    assert n400 >= 2000, f"only {n400} survivors at T=400"
    rep = estimators.clt_report(r_by_t, est.alpha_hat, sigma2, level=0.01)
    direct = float(np.var((r_by_t[400.0] - est.alpha_hat * 400.0) / math.sqrt(400.0), ddof=1))
    sigma_rel = abs(sigma2 - direct) / direct
    detail = ", ".join(
        f"T={r.t:.0f}: KS={r.ks:.4f} (<{r.threshold:.4f}, n={r.n})" for r in rep.results
    )
    ok = rep.passed and sigma_rel <= 0.15
    announce(5, ok, f"CLT: sigma2_hat={sigma2:.4f} (direct {direct:.4f}, "
                    f"rel {sigma_rel:.3f} <= 0.15); {detail}")
    assert rep.passed, rep.to_dict()
    assert sigma_rel <= 0.15


def test_criterion_06_iid_increments(bp_batch):
    rep = estimators.iid_report(
        bp_batch.replica_ids, bp_batch.indices, bp_batch.as_tuple(), level=0.01
    )
    assert bp_batch.n >= 2000
    # calibration meta-test: the composite report on synthetic i.i.d. nulls
    rng = np.random.default_rng(123)
    passes = 0
    trials = 120
    for _ in range(trials):
        reps_arr, idxs, xs, psis, ms = [], [], [], [], []
        for r in range(60):
            e = rng.standard_normal(12)
            reps_arr.extend([r] * 12)
            idxs.extend(range(1, 13))
            xs.extend(np.maximum(1, np.round(3 + e)))
            psis.extend(np.maximum(0.1, 2 + 0.5 * e + 0.3 * rng.standard_normal(12)))
            ms.extend(np.round(rng.exponential(1.0, 12)))
        cal = estimators.iid_report(
            np.array(reps_arr), np.array(idxs),
            (np.array(xs), np.array(psis), np.array(ms)),
        )
        passes += cal.passed
    cal_rate = passes / trials
    ok = rep.passed and cal_rate >= 0.94
    rejected = [f"{t.name}:{t.coordinate}" for t in rep.tests if t.rejected]
    announce(6, ok, f"i.i.d. increments: {bp_batch.n} increments, "
                    f"{len(rep.tests)} sub-tests at family level 0.01, "
                    f"rejected={rejected or 'none'}; null calibration "
                    f"pass-rate {cal_rate:.3f} >= 0.94")
    assert rep.passed, rep.to_dict()
    assert cal_rate >= 0.94


def test_criterion_07_density(edge_batch, theta_batch, alpha_and_sigma):
    est, _ = alpha_and_sigma
    theta = estimators.estimate_theta(theta_batch.occupancy)
    j = int(np.searchsorted(edge_batch.sample_times, 400.0))
    mask = edge_batch.count[:, j] > 0
    n_surv = int(mask.sum())
    assert n_surv >= 1000
    beta_hat = float(edge_batch.alive_at(SURVIVAL_HORIZON).mean())
    rep = estimators.density_report(
        {400.0: (edge_batch.count[mask, j], edge_batch.l[mask, j])},
        est.alpha_hat, est.stderr, theta, beta_hat, rel_tol=0.07,
    )
    c = rep.ratio_checks[0]
    s = rep.symmetry_checks[0]
    announce(7, rep.passed,
             f"density: mean|I_t|/t={c.mean_ratio:.4f} vs 2*alpha*theta={c.target:.4f} "
             f"(rel {c.rel_error:.4f} <= 0.07, {n_surv} survivors); "
             f"l_t/t={s.mean_l_over_t:.4f} vs -alpha={-est.alpha_hat:.4f} "
             f"(within 2se: {s.within})")
    assert rep.passed, rep.to_dict()


def test_criterion_08_complete_convergence(edge_batch, phi_batch):
    f_sets = [(0,), (0, 1), (-2, 3)]
    beta_mask = edge_batch.alive_at(SURVIVAL_HORIZON)
    rep = estimators.complete_convergence_report(
        f_sets, edge_batch.f_empty, phi_batch,
        int(beta_mask.sum()), edge_batch.n, t_eval=300.0,
    )
    detail = "; ".join(
        f"F={list(e.f_set)}: lhs={e.lhs:.4f}{list(np.round(e.lhs_ci, 4))} "
        f"rhs={e.rhs:.4f}{list(np.round(e.rhs_ci, 4))}"
        for e in rep.entries
    )
    announce(8, rep.passed, f"complete convergence at t=300 ({edge_batch.n} replicas): {detail}")
    assert rep.passed, rep.to_dict()


def _int_thresholds(vals: np.ndarray, qs) -> np.ndarray:
    thr = np.unique(np.ceil(np.nanquantile(vals, qs)))
    if thr.size < 5:
        lo = np.nanmin(vals) + 1
        thr = np.union1d(thr, np.arange(lo, lo + 5))
    return thr


def test_criterion_09_exponential_tails(edge_batch, bp_batch, alpha_and_sigma):
    est, _ = alpha_and_sigma
    fits = {}
    died = ~np.isnan(edge_batch.died_at)
    r_death = np.where(died, edge_batch.sup_r, np.nan)
    fits["R_on_death"] = estimators.tail_fit(
        r_death, _int_thresholds(r_death, [0.2, 0.35, 0.5, 0.65, 0.8, 0.9, 0.96]),
        variable="R_on_death",
    )
    # by the verified i.i.d. property the increment coordinates share the law
    # of (X_1, Psi_1 = tau_1, M_0), so their tails are fitted on the pooled
    # increments (the conditioned first increments alone are far fewer)
    x, psi, m = bp_batch.as_tuple()
    fits["tau1"] = estimators.tail_fit(
        psi, np.nanquantile(psi, [0.3, 0.45, 0.6, 0.72, 0.82, 0.9, 0.96]), variable="tau1"
    )
    fits["X1"] = estimators.tail_fit(
        x, _int_thresholds(x, [0.5, 0.65, 0.78, 0.87, 0.93, 0.97]), variable="X1"
    )
    fits["M0"] = estimators.tail_fit(
        m, _int_thresholds(m, [0.55, 0.7, 0.82, 0.9, 0.95, 0.98]), variable="M0"
    )
    a = est.alpha_hat / 2.0
    probs = np.array(
        [np.nanmean(bp_batch.rbar[:, j] < a * bp_batch.t_grid[j])
         for j in range(bp_batch.t_grid.size)]
    )
    fits["rbar_lower_dev"] = estimators.fit_decay_curve(
        bp_batch.t_grid, probs, variable="rbar_lower_dev"
    )
    ok = all(f.passed for f in fits.values())
    detail = "; ".join(
        f"{k}: gamma={f.gamma_hat:.4f} r2={f.r2:.3f} ({len(f.thresholds)} pts)"
        for k, f in fits.items()
    )
    announce(9, ok, f"exponential tails: {detail}")
    assert ok, {k: f.to_dict() for k, f in fits.items() if not f.passed}


def test_criterion_10_determinism_replay(tmp_path):
    specs = [
        ["selfcheck", "--seed", "42"],
        ["breakpoints", "--seed", "9", "--replicas", "3", "--horizon", "200",
         "--survival-horizon", "50"],
        ["percolation", "--seed", "11", "--replicas", "15", "--n-max", "60",
         "--p", "0.85", "--p-tilde", "0.8"],
    ]
    all_ok = True
    checked = []
    for spec in specs:
        a = tmp_path / f"a_{spec[0]}"
        b = tmp_path / f"b_{spec[0]}"
        rc_a = cli_main([*spec, "--out", str(a)])
        rc_b = cli_main([*spec, "--out", str(b)])
        assert rc_a == rc_b == 0
        for fa in sorted(a.iterdir()):
            fb = b / fa.name
            ba = fa.read_bytes().replace(str(a).encode(), b"OUT")
            bb = fb.read_bytes().replace(str(b).encode(), b"OUT")
            same = ba == bb
            all_ok = all_ok and same
            checked.append(fa.name)
    announce(10, all_ok, f"replay: byte-identical artifacts for {sorted(set(checked))}")
    assert all_ok
