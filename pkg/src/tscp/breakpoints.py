"""Break-point extraction via the restart algorithm on the half-line process.

The half-line process (infected on x <= 0, never infected on x >= 1) is run
once per replica; its rightmost infected site rbar drives the restart loop:
a fresh single-site process is launched at the current edge each time the
previous launch dies, and a break point is declared at the first launch that
is still alive `survival_horizon` time units after its start (the survival
proxy: true survival is undecidable in finite time, and misclassification
decays exponentially in the proxy horizon).

While a launched process is alive its rightmost must coincide with rbar;
this identity is asserted on every launch and a violation raises
EngineViolationError, because it is a theorem of the coupling, not a
statistic.

Increments between consecutive break points are (X, Psi, M) = (space gap,
time gap, backtrack depth); the final increment whose interval is cut by the
horizon is dropped and counted, never truncated into the sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .couplings import certify_right_edge, compare_edge_paths
from .process import (
    Configuration,
    EventCache,
    Trajectory,
    WindowBreachError,
    WindowPolicy,
    build_cache,
    evolve,
)
from .streams import Construction


class EngineViolationError(RuntimeError):
    """A coupling identity that is a theorem failed pathwise: engine bug."""


@dataclass(frozen=True)
class RestartRecord:
    """One launch of the restart loop: process zeta^n started from a single
    infected site Y_n at the hitting time T_{Y_n}; rho_n is its death time,
    None when it outlived the survival proxy."""

    n: int
    y: int
    t_y: float
    rho: float | None


@dataclass(frozen=True)
class BreakPointRecord:
    n: int
    k: int
    tau_k: float
    censored: bool  # survival declared by proxy rather than horizon-confirmed

    def __post_init__(self):
        if self.n == 0 and (self.k != 0 or self.tau_k != 0.0):
            raise ValueError("break point 0 is the origin by definition")


@dataclass(frozen=True)
class Increment:
    """(X_n, Psi_n, M_{n-1}) between consecutive break points."""

    x: int
    psi: float
    m: int

    def __post_init__(self):
        if self.x < 1 or self.psi <= 0 or self.m < 0:
            raise ValueError(f"malformed increment {self}")


@dataclass
class BreakPointResult:
    restarts: list[RestartRecord]
    breakpoints: list[BreakPointRecord]
    increments: list[Increment]
    increment_indices: list[int] = field(default_factory=list)  # aligned with increments
    dropped: int = 0  # increments cut by the horizon (never included)
    rho_durations: list[float] = field(default_factory=list)  # rho_n - T_{Y_n} of dead launches
    standard_start_survived: bool = True
    half_line: Trajectory | None = None

    def __iter__(self):
        return iter((self.restarts, self.breakpoints, self.increments))


def hitting_times(trajectory: Trajectory, k_max: int) -> list[tuple[int, float]]:
    """(k, tau_k) for every level k = 0..k_max reached by the rightmost edge."""
    out = []
    for k in range(0, k_max + 1):
        tau = trajectory.first_hit_r(k)
        if tau is not None:
            out.append((k, tau))
    return out


def _certified_half_line(
    construction: Construction,
    replica_id: int,
    horizon: float,
    policy: WindowPolicy,
) -> Trajectory:
    pol = policy
    for _ in range(policy.max_expansions + 1):
        traj = evolve(
            construction,
            replica_id,
            Configuration.half_line(),
            t_max=horizon,
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


def detect_breakpoints(
    construction: Construction,
    replica_id: int,
    horizon: float,
    survival_horizon: float,
    max_points: int = 10_000,
    window_policy: WindowPolicy | None = None,
    keep_half_line: bool = False,
    condition_first_on_survival: bool = True,
) -> BreakPointResult:
    """Run the restart algorithm on one replica; see the module docstring.

    Only candidates whose survival window fits inside the horizon are tested,
    so every reported death time and every increment is horizon-exact.

    The increments' common law is that of the first break point of the
    standard-start process *conditional on its survival*; increments n >= 2
    inherit the conditioning from the regeneration structure (each follows a
    launch that passed the proxy), but the n = 1 increment read off the
    half-line alone samples the unconditional law, which is visibly heavier.
    With `condition_first_on_survival` the coupled standard-start process is
    run on the same construction and increment 1 is retained exactly when it
    passes the survival proxy, matching the transfer lemma's identification
    of the two extractions on the survival event.
    """
    if survival_horizon > horizon:
        raise ValueError("survival_horizon must be <= horizon")
    if survival_horizon <= 0:
        raise ValueError("survival_horizon must be positive")
    policy = window_policy or WindowPolicy(margin_factor=0.8)

    half = _certified_half_line(construction, replica_id, horizon, policy)
    r_max = half.max_r if half.max_r is not None else 0

    # one pre-drawn event cache serves every launch of this replica
    left_reach = int(math.ceil((construction.mu + 2.0) * survival_horizon)) + 16
    cache = build_cache(
        construction, replica_id, -left_reach, r_max + 16, horizon
    )

    survived = True
    if condition_first_on_survival:
        std = evolve(
            construction,
            replica_id,
            Configuration.standard(),
            t_max=survival_horizon,
            window_policy=WindowPolicy(margin_factor=min(policy.margin_factor, 1.0)),
        )
        survived = std.died_at is None

    result = BreakPointResult(
        restarts=[],
        breakpoints=[BreakPointRecord(0, 0, 0.0, censored=False)],
        increments=[],
        standard_start_survived=survived,
        half_line=half if keep_half_line else None,
    )

    launch_policy = WindowPolicy(
        margin_factor=min(policy.margin_factor, 1.0),
        pad=policy.pad,
        growth=policy.growth,
        max_expansions=policy.max_expansions,
        expandable=policy.expandable,
    )

    k = 1  # next candidate level (Y_1 = 1; after a break point at K, K+1)
    n_launch = 0
    horizon_cut = False
    guard = 0
    while len(result.breakpoints) - 1 < max_points:
        guard += 1
        if guard > 100 * max_points + 10_000:
            raise RuntimeError("restart loop failed to terminate")
        if k > r_max:
            horizon_cut = True
            break
        t_k = half.first_hit_r(k)
        if t_k is None or t_k + survival_horizon > horizon:
            horizon_cut = True
            break
        if t_k > 0.0 and half.max_r_over(0.0, t_k) != k - 1:
            raise EngineViolationError(
                f"hitting time of level {k} is not a running-maximum time "
                f"(replica {replica_id})"
            )
        n_launch += 1
        launch = _launch(
            construction, replica_id, k, t_k, t_k + survival_horizon, cache, launch_policy
        )
        _assert_edge_consistency(launch, half, replica_id)
        if launch.died_at is not None:
            rho = launch.died_at
            result.restarts.append(RestartRecord(n_launch, k, t_k, rho))
            result.rho_durations.append(rho - t_k)
            k = 1 + half.max_r_over(t_k, rho)
        else:
            result.restarts.append(RestartRecord(n_launch, k, t_k, None))
            prev = result.breakpoints[-1]
            n = prev.n + 1
            result.breakpoints.append(BreakPointRecord(n, k, t_k, censored=True))
            if n > 1 or survived:
                result.increments.append(
                    Increment(
                        x=k - prev.k,
                        psi=t_k - prev.tau_k,
                        m=prev.k - half.min_r_over(prev.tau_k, t_k),
                    )
                )
                result.increment_indices.append(n)
            k = k + 1

    if horizon_cut and len(result.breakpoints) > 1:
        result.dropped = 1  # the open interval after the last break point
    if horizon_cut and len(result.breakpoints) == 1:
        result.dropped = 1  # not even the first break point completed
    return result


def first_breakpoint_standard(
    construction: Construction,
    replica_id: int,
    horizon: float,
    survival_horizon: float,
    window_policy: WindowPolicy | None = None,
) -> tuple[int, float, int] | None:
    """(K_1, tau_{K_1}, M_0) extracted from the standard-start process itself.

    Runs the restart search along the standard-start edge instead of the
    half-line edge; by the transfer lemma the two extractions coincide
    pathwise on the survival event, which makes this the definition-side
    oracle for the half-line algorithm.  Returns None when the process dies
    before the proxy horizon or the search is cut by the global horizon.
    """
    if survival_horizon > horizon:
        raise ValueError("survival_horizon must be <= horizon")
    policy = window_policy or WindowPolicy(margin_factor=1.0)
    traj = evolve(
        construction, replica_id, Configuration.standard(), t_max=horizon,
        window_policy=policy,
    )
    if traj.died_at is not None:
        return None
    r_max = traj.max_r if traj.max_r is not None else 0
    left_reach = int(math.ceil((construction.mu + 2.0) * survival_horizon)) + 16
    cache = build_cache(construction, replica_id, -left_reach, r_max + 16, horizon)
    k = 1
    while True:
        if k > r_max:
            return None
        t_k = traj.first_hit_r(k)
        if t_k is None or t_k + survival_horizon > horizon:
            return None
        launch = _launch(
            construction, replica_id, k, t_k, t_k + survival_horizon, cache, policy
        )
        if launch.died_at is None:
            m0 = -traj.min_r_over(0.0, t_k) if t_k > 0 else 0
            return k, t_k, m0
        k = 1 + traj.max_r_over(t_k, launch.died_at)


def _launch(
    construction: Construction,
    replica_id: int,
    y: int,
    t_y: float,
    t_end: float,
    cache: EventCache,
    policy: WindowPolicy,
) -> Trajectory:
    try:
        return evolve(
            construction,
            replica_id,
            Configuration.single_site(y),
            start_time=t_y,
            t_max=t_end,
            window_policy=policy,
            cache=cache,
        )
    except WindowBreachError:
        # launch outgrew the shared cache (rare deep excursion): run live
        return evolve(
            construction,
            replica_id,
            Configuration.single_site(y),
            start_time=t_y,
            t_max=t_end,
            window_policy=policy,
        )


def _assert_edge_consistency(launch: Trajectory, half: Trajectory, replica_id: int):
    """While the launched process is alive its rightmost must equal rbar."""
    until = launch.died_at if launch.died_at is not None else np.nextafter(launch.t_max, np.inf)
    diffs = compare_edge_paths(launch, half, until=until, since=launch.start_time)
    if diffs:
        t, rl, rh = diffs[0]
        raise EngineViolationError(
            f"restart edge identity violated (replica {replica_id}): "
            f"launch r={rl} vs half-line r={rh} at t={t}"
        )
