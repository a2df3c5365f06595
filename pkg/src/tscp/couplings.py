"""Trajectory-exact verification of the coupling lemmas on shared constructions.

Each verifier runs the coupled processes on the *same* construction (same
arrows, same recovery marks) and asserts the identity pathwise:

  * Monotone            zeta^eta <= zeta^eta' for eta <= eta'
  * RightmostIdentity   zeta^O(x) = zeta^eta'(x) for x >= l_t on {I_t != 0},
                        hence r_t = r'_t (checked at every edge change)
  * Sandwich            I_t = xi^Z_t intersect [l_t, r_t] on {I_t != 0}
  * RestartDomination   zeta^O >= zeta^[eta_k, tau_k] for t >= tau_k, k <= R

These are theorems under mu >= lambda > 0: a single violation is an engine
bug, so verdicts carry per-site diagnostics rather than statistics.  Window
truncation is never allowed to weaken a check: any site a check needs that
cannot be certified exact forces a wider rerun, and ultimately an error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .process import (
    NONE_SITE,
    Configuration,
    Trajectory,
    WindowBreachError,
    WindowPolicy,
    build_cache,
    contact_evolve,
    evolve,
)
from .streams import Construction


class CouplingKind(Enum):
    MONOTONE = "Monotone"
    RIGHTMOST_IDENTITY = "RightmostIdentity"
    SANDWICH = "Sandwich"
    RESTART_DOMINATION = "RestartDomination"


REDUCTION = "Reduction"


@dataclass(frozen=True)
class Violation:
    replica: int
    time: float
    site: int
    detail: str


@dataclass
class Verdict:
    kind: str
    replicas_checked: int = 0
    sample_times_checked: int = 0
    violations: list[Violation] = field(default_factory=list)
    max_violations: int = 64
    n_violations: int = 0

    @property
    def passed(self) -> bool:
        return self.n_violations == 0

    def add(self, replica: int, time: float, site: int, detail: str):
        self.n_violations += 1
        if len(self.violations) < self.max_violations:
            self.violations.append(Violation(replica, float(time), int(site), detail))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "passed": self.passed,
            "replicas_checked": self.replicas_checked,
            "sample_times_checked": self.sample_times_checked,
            "n_violations": self.n_violations,
            "violations": [
                {"replica": v.replica, "time": v.time, "site": v.site, "detail": v.detail}
                for v in self.violations
            ],
        }


def _reachable_min(initial_vals: np.ndarray) -> np.ndarray:
    """Lower bound on any future state given the initial one (-1 can stay -1;
    0/1 can only visit {0,1} because nothing maps back to -1)."""
    return np.where(initial_vals == -1, -1, 0).astype(np.int8)


def _hull(traj: Trajectory) -> tuple[int, int]:
    return traj.act_lo, traj.act_hi


def certify_right_edge(traj: Trajectory) -> bool:
    """True iff the trajectory's r-path is exact despite left truncation.

    Sound criterion: the left contamination cone must stay strictly below the
    computed rightmost infected at every time (then the maximum is attained
    in the certified region, where computed and true states agree).  Checked
    at every change point of either step function.
    """
    if traj.contam_t is None:
        return True  # fully dynamic run, exact by construction
    if traj.right_fixed:
        return False  # rightmost lives against a truncated boundary
    cone = traj.cone_bound_left()
    cone_t, cone_site = cone
    if traj.died_at is not None and traj.died_at <= traj.t_max:
        return False  # no infected set left to dominate the cone
    # r at each cone jump must exceed the newly contaminated site
    idx = np.searchsorted(traj.edge_t, cone_t, side="right") - 1
    inside = cone_t <= traj.t_max
    r_then = traj.edge_r[idx[inside]]
    if np.any(r_then <= cone_site[inside]) or np.any(r_then == NONE_SITE):
        return False
    # cone at each edge change must stay below the new r
    cidx = np.searchsorted(cone_t, traj.edge_t, side="right") - 1
    cone_then = np.where(cidx >= 0, cone_site[np.maximum(cidx, 0)], traj.win_lo - 1)
    return bool(np.all(traj.edge_r > cone_then))


def _run_half_line(
    construction: Construction,
    replica_id: int,
    t_max: float,
    sample_times,
    policy: WindowPolicy,
    start_time: float = 0.0,
) -> Trajectory:
    """Half-line process with a certified-exact right edge (widening retries)."""
    pol = policy
    for _ in range(policy.max_expansions + 1):
        traj = evolve(
            construction,
            replica_id,
            Configuration.half_line(),
            start_time=start_time,
            t_max=t_max,
            sample_times=sample_times,
            window_policy=pol,
        )
        if certify_right_edge(traj):
            return traj
        if not policy.expandable:
            break
        pol = WindowPolicy(
            margin_factor=pol.margin_factor * pol.growth,
            pad=pol.pad,
            growth=pol.growth,
            max_expansions=pol.max_expansions,
            expandable=pol.expandable,
        )
    raise WindowBreachError("half-line right edge could not be certified exact")


def compare_edge_paths(
    a: Trajectory, b: Trajectory, until: float, since: float = -np.inf
) -> list[tuple[float, int, int]]:
    """Pointwise differences of two cadlag r-paths on [since, until).

    Returns (time, r_a, r_b) at every change time of either path where the
    values differ; empty means the step functions are identical there.
    """
    times = np.union1d(a.edge_t, b.edge_t)
    if np.isfinite(since):
        times = np.union1d(times, [since])
    times = times[(times < until) & (times >= since)]
    ia = np.searchsorted(a.edge_t, times, side="right") - 1
    ib = np.searchsorted(b.edge_t, times, side="right") - 1
    ra = a.edge_r[ia]
    rb = b.edge_r[ib]
    bad = np.nonzero(ra != rb)[0]
    return [(float(times[i]), int(ra[i]), int(rb[i])) for i in bad]


def _monotone_once(
    construction: Construction,
    replica: int,
    eta: Configuration,
    eta_hi: Configuration,
    t_max: float,
    grid: np.ndarray,
    policy: WindowPolicy,
    verdict: Verdict,
) -> None:
    pol = policy
    for attempt in range(policy.max_expansions + 1):
        lo_traj = evolve(construction, replica, eta, t_max=t_max, sample_times=grid, window_policy=pol)
        hi_traj = evolve(construction, replica, eta_hi, t_max=t_max, sample_times=grid, window_policy=pol)
        lo_h, hi_h = _hull(lo_traj), _hull(hi_traj)
        region = (min(lo_h[0], hi_h[0]), max(lo_h[1], hi_h[1]))
        init_lo = eta.values_over(*region)
        init_hi = eta_hi.values_over(*region)
        reach_min_hi = _reachable_min(init_hi)
        uncertifiable = False
        pending: list[tuple[float, int, str]] = []
        for i, t in enumerate(grid):
            va, ea = lo_traj.states_over(i, *region)
            vb, eb = hi_traj.states_over(i, *region)
            hi_a = np.where(ea, va, np.int8(1))
            lo_b = np.where(eb, vb, reach_min_hi)
            bad = np.nonzero(hi_a > lo_b)[0]
            for j in bad:
                if ea[j] and eb[j]:
                    pending.append(
                        (t, region[0] + j, f"lower={int(va[j])} > upper={int(vb[j])}")
                    )
                else:
                    uncertifiable = True
        if uncertifiable and policy.expandable and attempt < policy.max_expansions:
            pol = WindowPolicy(
                margin_factor=pol.margin_factor * pol.growth,
                pad=pol.pad,
                growth=pol.growth,
                max_expansions=pol.max_expansions,
                expandable=pol.expandable,
            )
            continue
        if uncertifiable:
            raise WindowBreachError(
                f"monotone check region not certifiable for replica {replica}"
            )
        for t, site, detail in pending:
            verdict.add(replica, t, site, detail)
        verdict.sample_times_checked += grid.size
        return


def _rightmost_once(
    construction, replica, t_max, grid, policy, verdict
) -> None:
    traj_o = evolve(
        construction, replica, Configuration.standard(), t_max=t_max, sample_times=grid,
        window_policy=policy,
    )
    traj_h = _run_half_line(construction, replica, t_max, grid, policy)
    until = traj_o.died_at if traj_o.died_at is not None else np.nextafter(t_max, np.inf)
    for t, ro, rh in compare_edge_paths(traj_o, traj_h, until):
        verdict.add(replica, t, ro if ro != NONE_SITE else 0, f"r={ro} != r'={rh}")
    hull_hi = max(traj_o.act_hi, traj_h.act_hi)
    for i, t in enumerate(grid):
        st = traj_o.sample_state(i)
        if st.infected_count == 0:
            continue  # identity only asserted on {I_t != empty}
        region = (st.l, hull_hi)
        va, ea = traj_o.states_over(i, *region)
        vb, eb = traj_h.states_over(i, *region)
        if not (ea.all() and eb.all()):
            raise WindowBreachError(
                f"rightmost-identity region not certified for replica {replica} at t={t}"
            )
        bad = np.nonzero(va != vb)[0]
        for j in bad:
            verdict.add(
                replica, t, region[0] + j, f"zeta^O={int(va[j])} != zeta^eta'={int(vb[j])}"
            )
        verdict.sample_times_checked += 1


def _sandwich_once(construction, replica, t_max, grid, policy, verdict) -> None:
    traj_o = evolve(
        construction, replica, Configuration.standard(), t_max=t_max, sample_times=grid,
        window_policy=policy,
    )
    lo = traj_o.min_l if traj_o.min_l is not None else 0
    hi = traj_o.max_r if traj_o.max_r is not None else 0
    traj_z = contact_evolve(
        construction, replica, "ALL", t_max=t_max, sample_times=grid,
        window_policy=policy, track=(lo - 1, hi + 1),
    )
    for i, t in enumerate(grid):
        st = traj_o.sample_state(i)
        if st.infected_count == 0:
            continue
        region = (st.l, st.r)
        va, ea = traj_o.states_over(i, *region)
        vz, ez = traj_z.states_over(i, *region)
        if not ez.all():
            raise WindowBreachError(
                f"sandwich region not certified for replica {replica} at t={t}"
            )
        bad = np.nonzero((va == 1) != (vz == 1))[0]
        for j in bad:
            verdict.add(
                replica, t, region[0] + j,
                f"in I_t={bool(va[j] == 1)} but in xi^Z={bool(vz[j] == 1)}",
            )
        verdict.sample_times_checked += 1


def _restart_domination_once(
    construction, replica, t_max, grid, policy, verdict, k_cap
) -> None:
    traj_o = evolve(
        construction, replica, Configuration.standard(), t_max=t_max, sample_times=grid,
        window_policy=policy,
    )
    r_max = traj_o.max_r
    if r_max is None or r_max < 1:
        return
    lo = (traj_o.min_l or 0) - 8
    hi = r_max + 8
    pad = int(math.ceil(2.0 * construction.mu * t_max)) + 16
    cache = build_cache(construction, replica, lo - pad, hi + pad, t_max)
    for k in range(1, min(r_max, k_cap) + 1):
        tau_k = traj_o.first_hit_r(k)
        if tau_k is None:
            break
        try:
            traj_k = evolve(
                construction, replica, Configuration.single_site(k),
                start_time=tau_k, t_max=t_max,
                sample_times=grid[grid >= tau_k],
                window_policy=policy, cache=cache,
            )
        except WindowBreachError:
            traj_k = evolve(
                construction, replica, Configuration.single_site(k),
                start_time=tau_k, t_max=t_max,
                sample_times=grid[grid >= tau_k],
                window_policy=policy,
            )
        region = _hull(traj_k)
        sub = grid[grid >= tau_k]
        for i, t in enumerate(sub):
            vk, ek = traj_k.states_over(i, *region)
            io = int(np.searchsorted(grid, t))
            vo, eo = traj_o.states_over(io, *region)
            assert ek.all() and eo.all()  # both fully dynamic, always exact
            bad = np.nonzero(vo < vk)[0]
            for j in bad:
                verdict.add(
                    replica, t, region[0] + j,
                    f"zeta^O={int(vo[j])} < zeta^[eta_{k},tau_{k}]={int(vk[j])}",
                )
            verdict.sample_times_checked += 1


def verify_coupling(
    kind: CouplingKind,
    construction: Construction,
    replicas: int,
    t_max: float,
    sample_grid,
    monotone_pair: tuple[Configuration, Configuration] | None = None,
    k_cap: int = 50,
    window_policy: WindowPolicy | None = None,
    base_replica: int = 0,
) -> Verdict:
    """Run one coupling check over `replicas` independent constructions.

    All four lemmas require mu >= lambda > 0.  The Monotone check needs a
    comparable pair (defaults to the standard and half-line configurations).
    """
    if construction.lam <= 0:
        raise ValueError("coupling lemmas require lambda > 0")
    grid = np.asarray(sorted(float(t) for t in sample_grid), dtype=np.float64)
    policy = window_policy or WindowPolicy(margin_factor=1.0)
    verdict = Verdict(kind=kind.value)
    if kind is CouplingKind.MONOTONE:
        eta, eta_hi = monotone_pair or (Configuration.standard(), Configuration.half_line())
        if not eta.leq(eta_hi):
            raise ValueError("monotone check requires eta <= eta' componentwise")
    for rep in range(base_replica, base_replica + replicas):
        if kind is CouplingKind.MONOTONE:
            _monotone_once(construction, rep, eta, eta_hi, t_max, grid, policy, verdict)
        elif kind is CouplingKind.RIGHTMOST_IDENTITY:
            _rightmost_once(construction, rep, t_max, grid, policy, verdict)
        elif kind is CouplingKind.SANDWICH:
            _sandwich_once(construction, rep, t_max, grid, policy, verdict)
        elif kind is CouplingKind.RESTART_DOMINATION:
            _restart_domination_once(construction, rep, t_max, grid, policy, verdict, k_cap)
        else:
            raise ValueError(f"unknown coupling kind {kind}")
        verdict.replicas_checked += 1
    return verdict


def verify_reduction(
    construction: Construction,
    replicas: int,
    t_max: float,
    sample_grid,
    window_policy: WindowPolicy | None = None,
    base_replica: int = 0,
) -> Verdict:
    """At lambda = mu the three-state process from {0} must equal the contact
    process from {0}: infected sets compared pathwise at every sample time and
    the full edge logs compared exactly."""
    if construction.lam != construction.mu:
        raise ValueError("reduction check requires lambda = mu")
    grid = np.asarray(sorted(float(t) for t in sample_grid), dtype=np.float64)
    policy = window_policy or WindowPolicy(margin_factor=1.0)
    verdict = Verdict(kind=REDUCTION)
    for rep in range(base_replica, base_replica + replicas):
        a = evolve(
            construction, rep, Configuration.standard(), t_max=t_max,
            sample_times=grid, window_policy=policy,
        )
        b = contact_evolve(
            construction, rep, {0}, t_max=t_max, sample_times=grid, window_policy=policy,
        )
        until = np.nextafter(t_max, np.inf)
        for t, ra, rb in compare_edge_paths(a, b, until):
            verdict.add(rep, t, ra if ra != NONE_SITE else 0, f"r={ra} != r_contact={rb}")
        for i, t in enumerate(grid):
            ia = set(a.infected_at(i).tolist())
            ib = set(b.infected_at(i).tolist())
            for site in ia ^ ib:
                verdict.add(rep, t, site, "infected sets differ")
            verdict.sample_times_checked += 1
        verdict.replicas_checked += 1
    return verdict
