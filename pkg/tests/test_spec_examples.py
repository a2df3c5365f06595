"""Moderate-scale behavioural checks: survival stability, occupancy
symmetry and monotonicity, hitting-time consistency, percolation speed."""

import numpy as np
import pytest

from tscp import estimators, experiments
from tscp.percolation import percolation_edge_speed
from tscp.process import Configuration, WindowPolicy, evolve
from tscp.streams import Construction

CONS = Construction(master_seed=31415, lam=1.0, mu=2.0)


def test_survival_fraction_positive_and_batch_stable():
    # beta_hat > 0 strictly, stable within +-0.03 across disjoint batches
    def beta(base):
        alive = 0
        for rep in range(base, base + 250):
            traj = evolve(CONS, rep, Configuration.standard(), t_max=200.0,
                          window_policy=WindowPolicy(margin_factor=0.8))
            alive += traj.died_at is None
        return alive / 250

    b1 = beta(0)
    b2 = beta(250)
    assert b1 > 0 and b2 > 0
    assert abs(b1 - b2) <= 0.03 + 2 * np.sqrt(0.35 * 0.65 / 250)


def test_occupancy_in_range_and_side_symmetric():
    batch = experiments.run_theta_batch(
        CONS, replicas=200, t_eval=150.0, window=(-300, 300), workers=2,
    )
    theta = float(batch.occupancy.mean())
    assert 0.1 < theta < 0.9
    diff = abs(batch.occupancy_left.mean() - batch.occupancy_right.mean())
    assert diff <= 0.02


def test_theta_monotone_in_mu():
    thetas = []
    for mu in (2.0, 3.0, 4.0):
        cons = Construction(master_seed=777, lam=1.0, mu=mu)
        batch = experiments.run_theta_batch(
            cons, replicas=40, t_eval=100.0, window=(-150, 150), workers=2,
        )
        thetas.append(float(batch.occupancy.mean()))
    assert thetas[0] < thetas[1] < thetas[2]


def test_theta_batch_split_reproducible():
    a = experiments.run_theta_batch(CONS, replicas=120, t_eval=150.0, window=(-200, 200))
    b = experiments.run_theta_batch(
        CONS, replicas=120, t_eval=150.0, window=(-200, 200), base_replica=120
    )
    assert abs(a.occupancy.mean() - b.occupancy.mean()) <= 0.01 + 2 * np.hypot(
        a.occupancy.std() / np.sqrt(120), b.occupancy.std() / np.sqrt(120)
    )


def test_hitting_time_reciprocal_consistent_with_alpha():
    # mean tau_50/50 over surviving-window half-line replicas within 10% of
    # 1/alpha_hat; also closes the alpha consistency chain
    bp = experiments.run_breakpoints_batch(
        CONS, replicas=80, horizon=400.0, survival_horizon=100.0, max_points=20,
        workers=2,
    )
    est = estimators.estimate_alpha(bp.as_tuple())
    taus = []
    for rep in range(200):
        traj = evolve(CONS, 10_000 + rep, Configuration.half_line(), t_max=300.0,
                      window_policy=WindowPolicy(margin_factor=0.8))
        tau = traj.first_hit_r(50)
        if tau is not None:
            taus.append(tau / 50.0)
    assert len(taus) >= 190
    mean_tau = float(np.mean(taus))
    assert abs(mean_tau - 1.0 / est.alpha_hat) / (1.0 / est.alpha_hat) <= 0.10


def test_percolation_edge_speed_tail():
    # at p=0.95 the edge concentrates so tightly that deviations below
    # a_hat/2 never occur at n <= 300; the decay is measured at a level
    # close enough to a_hat for the event to have positive frequency
    a_hat, _, n_alive = percolation_edge_speed(
        0.95, master_seed=2718, replicas=500, n_max=300
    )
    assert n_alive >= 300
    assert 0.0 < a_hat < 1.0
    _, fit, _ = percolation_edge_speed(
        0.95, master_seed=2718, replicas=500, n_max=300, a=0.90 * a_hat,
        n_grid=np.arange(20, 201, 20),
    )
    assert fit is not None and fit.gamma_hat > 0 and fit.r2 >= 0.9
