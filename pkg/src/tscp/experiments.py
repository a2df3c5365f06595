"""Replica fan-out drivers shared by the CLI and the acceptance suite.

Each driver runs independent replicas (replica_id is part of every stream
key, so fan-out needs no reseeding), optionally across worker processes, and
folds the results into compact arrays ordered by replica id; outputs are
byte-identical for any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .breakpoints import detect_breakpoints
from .process import Configuration, WindowPolicy, contact_evolve, evolve
from .streams import Construction


def _chunks(base: int, n: int, workers: int) -> list[range]:
    per = max(1, math.ceil(n / max(workers, 1) / 4))
    return [range(base + i, base + min(i + per, n)) for i in range(0, n, per)]


def _run_chunked(worker, args_list, workers: int) -> list:
    if workers <= 1 or len(args_list) <= 1:
        return [worker(a) for a in args_list]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(worker, args_list))


# ---------------------------------------------------------------------------
# standard-start batches (LLN / CLT / density / convergence left side / tails)


@dataclass
class EdgeBatch:
    sample_times: np.ndarray
    died_at: np.ndarray          # NaN while alive at t_max
    r: np.ndarray                # (reps, samples), NaN when dead
    l: np.ndarray
    count: np.ndarray            # infected counts (0 when dead)
    sup_r: np.ndarray            # pathwise running maximum of r
    f_sets: tuple[tuple[int, ...], ...]
    f_time: float | None
    f_empty: np.ndarray          # (reps, len(f_sets)) bool

    @property
    def n(self) -> int:
        return self.died_at.size

    def alive_at(self, t: float) -> np.ndarray:
        return np.isnan(self.died_at) | (self.died_at > t)

    def survivors_r(self, t: float) -> np.ndarray:
        j = int(np.searchsorted(self.sample_times, t))
        if j >= self.sample_times.size or self.sample_times[j] != t:
            raise KeyError(f"{t} is not a sample time")
        mask = self.count[:, j] > 0
        return self.r[mask, j]


def _edge_worker(args) -> tuple:
    (cons_args, reps, t_max, samples, f_sets, f_time, margin_factor) = args
    cons = Construction(*cons_args)
    policy = WindowPolicy(margin_factor=margin_factor)
    died, rr, ll, cc, sup, fem = [], [], [], [], [], []
    f_time_idx = None
    samples = list(samples)
    for rep in reps:
        traj = evolve(
            cons, rep, Configuration.standard(), t_max=t_max,
            sample_times=samples, window_policy=policy,
        )
        died.append(np.nan if traj.died_at is None else traj.died_at)
        svals = []
        for i in range(len(samples)):
            st = traj.sample_state(i)
            svals.append((st.r, st.l, st.infected_count))
        rr.append([np.nan if v[0] is None else v[0] for v in svals])
        ll.append([np.nan if v[1] is None else v[1] for v in svals])
        cc.append([v[2] for v in svals])
        sup.append(traj.max_r if traj.max_r is not None else np.nan)
        if f_sets:
            if f_time_idx is None:
                f_time_idx = samples.index(f_time)
            flags = []
            infected = set(traj.infected_at(f_time_idx).tolist())
            for f in f_sets:
                flags.append(len(infected.intersection(f)) == 0)
            fem.append(flags)
    return died, rr, ll, cc, sup, fem


def run_edge_batch(
    construction: Construction,
    replicas: int,
    t_max: float,
    sample_times,
    f_sets: tuple[tuple[int, ...], ...] = (),
    f_time: float | None = None,
    workers: int = 1,
    base_replica: int = 0,
    margin_factor: float = 1.0,
) -> EdgeBatch:
    """Standard-start replicas with edge/count samples and F-set hits."""
    samples = tuple(sorted(float(t) for t in sample_times))
    if f_sets and (f_time is None or float(f_time) not in samples):
        raise ValueError("f_time must be one of the sample times")
    cons_args = (
        construction.master_seed,
        construction.lam,
        construction.mu,
        construction.recovery_rate,
    )
    args_list = [
        (cons_args, ch, t_max, samples, tuple(map(tuple, f_sets)), f_time, margin_factor)
        for ch in _chunks(base_replica, replicas, workers)
    ]
    outs = _run_chunked(_edge_worker, args_list, workers)
    died = np.concatenate([np.asarray(o[0], dtype=float) for o in outs])
    r = np.vstack([np.asarray(o[1], dtype=float) for o in outs])
    l = np.vstack([np.asarray(o[2], dtype=float) for o in outs])
    count = np.vstack([np.asarray(o[3], dtype=float) for o in outs])
    sup_r = np.concatenate([np.asarray(o[4], dtype=float) for o in outs])
    if f_sets:
        f_empty = np.vstack([np.asarray(o[5], dtype=bool) for o in outs])
    else:
        f_empty = np.zeros((replicas, 0), dtype=bool)
    return EdgeBatch(
        sample_times=np.asarray(samples),
        died_at=died,
        r=r,
        l=l,
        count=count,
        sup_r=sup_r,
        f_sets=tuple(map(tuple, f_sets)),
        f_time=f_time,
        f_empty=f_empty,
    )


# ---------------------------------------------------------------------------
# all-infected contact batches (theta, phi_F)


def _theta_worker(args) -> tuple:
    cons_args, reps, t_eval, window, margin_factor = args
    cons = Construction(*cons_args)
    policy = WindowPolicy(margin_factor=margin_factor)
    lo, hi = window
    mid = (lo + hi) // 2
    occ, occ_l, occ_r = [], [], []
    for rep in reps:
        traj = contact_evolve(
            cons, rep, "ALL", t_max=t_eval, sample_times=[t_eval],
            window_policy=policy, track=(lo, hi),
        )
        vals, exact = traj.states_over(0, lo, hi)
        if not exact.all():
            raise RuntimeError("theta window not certified; widen the policy")
        inf_mask = vals == 1
        occ.append(inf_mask.mean())
        occ_l.append(inf_mask[: mid - lo + 1].mean())
        occ_r.append(inf_mask[mid - lo :].mean())
    return occ, occ_l, occ_r


@dataclass
class ThetaBatch:
    window: tuple[int, int]
    t_eval: float
    occupancy: np.ndarray
    occupancy_left: np.ndarray
    occupancy_right: np.ndarray


def run_theta_batch(
    construction: Construction,
    replicas: int,
    t_eval: float,
    window: tuple[int, int] = (-200, 200),
    workers: int = 1,
    base_replica: int = 0,
    margin_factor: float = 0.6,
) -> ThetaBatch:
    cons_args = (
        construction.master_seed,
        construction.lam,
        construction.mu,
        construction.recovery_rate,
    )
    args_list = [
        (cons_args, ch, t_eval, tuple(window), margin_factor)
        for ch in _chunks(base_replica, replicas, workers)
    ]
    outs = _run_chunked(_theta_worker, args_list, workers)
    return ThetaBatch(
        window=tuple(window),
        t_eval=t_eval,
        occupancy=np.concatenate([np.asarray(o[0]) for o in outs]),
        occupancy_left=np.concatenate([np.asarray(o[1]) for o in outs]),
        occupancy_right=np.concatenate([np.asarray(o[2]) for o in outs]),
    )


def _phi_worker(args) -> list:
    cons_args, reps, t_eval, f_sets, margin_factor = args
    cons = Construction(*cons_args)
    policy = WindowPolicy(margin_factor=margin_factor)
    lo = min(min(f) for f in f_sets) - 1
    hi = max(max(f) for f in f_sets) + 1
    rows = []
    for rep in reps:
        traj = contact_evolve(
            cons, rep, "ALL", t_max=t_eval, sample_times=[t_eval],
            window_policy=policy, track=(lo, hi),
        )
        vals, exact = traj.states_over(0, lo, hi)
        if not exact.all():
            raise RuntimeError("phi window not certified; widen the policy")
        rows.append([not any(vals[x - lo] == 1 for x in f) for f in f_sets])
    return rows


def run_phi_batch(
    construction: Construction,
    replicas: int,
    t_eval: float,
    f_sets,
    workers: int = 1,
    base_replica: int = 0,
    margin_factor: float = 0.6,
) -> np.ndarray:
    """phi_F(empty) indicators from the all-infected contact process."""
    cons_args = (
        construction.master_seed,
        construction.lam,
        construction.mu,
        construction.recovery_rate,
    )
    f_sets = tuple(map(tuple, f_sets))
    args_list = [
        (cons_args, ch, t_eval, f_sets, margin_factor)
        for ch in _chunks(base_replica, replicas, workers)
    ]
    outs = _run_chunked(_phi_worker, args_list, workers)
    return np.vstack([np.asarray(o, dtype=bool) for o in outs])


# ---------------------------------------------------------------------------
# break-point batches


@dataclass
class IncrementBatch:
    replica_ids: np.ndarray
    indices: np.ndarray
    x: np.ndarray
    psi: np.ndarray
    m: np.ndarray
    censored_flags: np.ndarray
    dropped: int
    rho_durations: np.ndarray     # death delays of failed launches
    t_grid: np.ndarray
    rbar: np.ndarray              # (reps, len(t_grid)) half-line rightmost
    n_replicas: int = 0
    horizon: float = 0.0
    survival_horizon: float = 0.0

    @property
    def n(self) -> int:
        return self.x.size

    def as_tuple(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.x, self.psi, self.m

    def first_increments(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        mask = self.indices == 1
        return self.x[mask], self.psi[mask], self.m[mask]


def _bp_worker(args) -> tuple:
    cons_args, reps, horizon, surv, max_points, t_grid, margin_factor = args
    cons = Construction(*cons_args)
    policy = WindowPolicy(margin_factor=margin_factor)
    rows, rhos, rbars = [], [], []
    dropped = 0
    for rep in reps:
        res = detect_breakpoints(
            cons, rep, horizon, surv, max_points=max_points,
            window_policy=policy, keep_half_line=True,
        )
        dropped += res.dropped
        rhos.extend(res.rho_durations)
        for n, inc in zip(res.increment_indices, res.increments):
            bp = res.breakpoints[n]
            rows.append((rep, n, inc.x, inc.psi, inc.m, bp.censored))
        vals = [res.half_line.r_at(t) for t in t_grid]
        rbars.append([np.nan if v is None else v for v in vals])
    return rows, rhos, rbars, dropped


def run_breakpoints_batch(
    construction: Construction,
    replicas: int,
    horizon: float,
    survival_horizon: float,
    max_points: int = 10_000,
    t_grid=None,
    workers: int = 1,
    base_replica: int = 0,
    margin_factor: float = 0.8,
) -> IncrementBatch:
    if t_grid is None:
        t_grid = np.linspace(horizon / 15.0, horizon * 2.0 / 3.0, 10)
    t_grid = np.asarray(sorted(float(t) for t in t_grid))
    cons_args = (
        construction.master_seed,
        construction.lam,
        construction.mu,
        construction.recovery_rate,
    )
    args_list = [
        (cons_args, ch, horizon, survival_horizon, max_points, tuple(t_grid), margin_factor)
        for ch in _chunks(base_replica, replicas, workers)
    ]
    outs = _run_chunked(_bp_worker, args_list, workers)
    rows = [r for o in outs for r in o[0]]
    rhos = [x for o in outs for x in o[1]]
    rbars = [rb for o in outs for rb in o[2]]
    rep_ids = np.array([r[0] for r in rows], dtype=np.int64)
    idx = np.array([r[1] for r in rows], dtype=np.int64)
    return IncrementBatch(
        replica_ids=rep_ids,
        indices=idx,
        x=np.array([r[2] for r in rows], dtype=float),
        psi=np.array([r[3] for r in rows], dtype=float),
        m=np.array([r[4] for r in rows], dtype=float),
        censored_flags=np.array([r[5] for r in rows], dtype=bool),
        dropped=sum(o[3] for o in outs),
        rho_durations=np.asarray(rhos, dtype=float),
        t_grid=t_grid,
        rbar=np.asarray(rbars, dtype=float),
        n_replicas=replicas,
        horizon=horizon,
        survival_horizon=survival_horizon,
    )
