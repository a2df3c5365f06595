"""Three-state and plain contact processes over a shared construction.

A Configuration is a {-1,0,1}-valued lattice state with finite deviation
from per-side defaults; `evolve` runs the three-state rules and
`contact_evolve` the plain contact process (both arrow types infect any
susceptible target), each returning a Trajectory with snapshots at the
requested sample times plus an edge log at every change of the rightmost or
leftmost infected site.

Windowing: sides whose default is susceptible are simulated with an exact
dynamically-expanding active range; sides whose default is infected are
truncated to a finite window whose boundary columns are marked contaminated,
with contamination tracked along realized arrows.  A run whose tracked
quantities would depend on untracked territory is rerun on a wider window
(geometrically, up to the policy's limit) rather than silently degraded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

import numpy as np

from . import _kernel
from .streams import Construction, Event, StreamKind

NONE_SITE = _kernel.NONE_SITE

STATE_NAMES = {-1: "never_infected", 0: "susceptible", 1: "infected"}


class WindowBreachError(RuntimeError):
    """The simulation window could not certify all tracked quantities."""


@dataclass(frozen=True)
class Configuration:
    """Lattice state: sites < split take left_default, sites >= split take
    right_default, and `deviations` overrides finitely many sites."""

    left_default: int = -1
    right_default: int = -1
    split: int = 0
    deviations: Mapping[int, int] = field(default_factory=dict)

    def __post_init__(self):
        for v in (self.left_default, self.right_default):
            if v not in (-1, 0, 1):
                raise ValueError(f"states must be in {{-1,0,1}}, got {v}")
        devs = {}
        for x, v in self.deviations.items():
            if v not in (-1, 0, 1):
                raise ValueError(f"states must be in {{-1,0,1}}, got {v}")
            if v != self.default_at(x):
                devs[x] = v
        object.__setattr__(self, "deviations", devs)

    def default_at(self, x: int) -> int:
        return self.left_default if x < self.split else self.right_default

    def state_at(self, x: int) -> int:
        v = self.deviations.get(x)
        return self.default_at(x) if v is None else v

    def values_over(self, lo: int, hi: int) -> np.ndarray:
        """States on lo..hi inclusive as an int8 array."""
        xs = np.arange(lo, hi + 1)
        out = np.where(xs < self.split, self.left_default, self.right_default).astype(np.int8)
        for x, v in self.deviations.items():
            if lo <= x <= hi:
                out[x - lo] = v
        return out

    @property
    def finite_infected(self) -> bool:
        return self.left_default != 1 and self.right_default != 1

    def infected_deviations(self) -> list[int]:
        return sorted(x for x, v in self.deviations.items() if v == 1)

    def deviation_span(self) -> tuple[int, int]:
        keys = list(self.deviations.keys()) + [self.split - 1, self.split]
        return min(keys), max(keys)

    def leq(self, other: "Configuration") -> bool:
        """Componentwise partial order over all of Z."""
        if self.left_default > other.left_default or self.right_default > other.right_default:
            return False
        probe = set(self.deviations) | set(other.deviations)
        probe |= {self.split - 1, self.split, other.split - 1, other.split}
        return all(self.state_at(x) <= other.state_at(x) for x in probe)

    # --- the named configurations ---

    @staticmethod
    def standard() -> "Configuration":
        """Origin infected, everything else never infected."""
        return Configuration(deviations={0: 1})

    @staticmethod
    def single_site(k: int) -> "Configuration":
        """Site k infected, everything else never infected."""
        return Configuration(deviations={k: 1})

    @staticmethod
    def half_line() -> "Configuration":
        """Infected on x <= 0, never infected on x >= 1."""
        return Configuration(left_default=1, right_default=-1, split=1)

    @staticmethod
    def all_infected() -> "Configuration":
        return Configuration(left_default=1, right_default=1)


@dataclass(frozen=True)
class ProcessState:
    time: float
    r: int | None
    l: int | None
    infected_count: int

    def __post_init__(self):
        if (self.infected_count == 0) != (self.r is None and self.l is None):
            raise ValueError("empty infected set iff edges are None")


@dataclass(frozen=True)
class WindowPolicy:
    """How simulation windows are sized and regrown.

    The base margin beyond the configuration's deviations (and any tracked
    sites) is ceil(margin_factor * (2*mu + 1) * time_span); the default
    factor 3 is deliberately far outside any reachable influence cone.  On a
    breach the margin grows by `growth` up to `max_expansions` times.
    """

    margin_factor: float = 3.0
    pad: int = 8
    growth: float = 2.0
    max_expansions: int = 4
    expandable: bool = True

    def margin(self, mu: float, span: float) -> int:
        return int(math.ceil(self.margin_factor * (2.0 * mu + 1.0) * max(span, 1.0))) + self.pad


@dataclass
class EventCache:
    """Pre-drawn per-stream events for one (construction, replica): CSR over
    (site, kind) with times sorted; reused by repeated evolutions."""

    construction: Construction
    replica_id: int
    lo: int
    hi: int
    horizon: float
    ev_time: np.ndarray
    ptr: np.ndarray

    def covers(self, lo: int, hi: int, horizon: float) -> bool:
        return self.lo <= lo and hi <= self.hi and horizon <= self.horizon


def build_cache(
    construction: Construction,
    replica_id: int,
    lo: int,
    hi: int,
    horizon: float,
) -> EventCache:
    """Draw every stream of sites lo..hi up to `horizon` once."""
    width = hi - lo + 1
    mean_total = width * construction.total_site_rate * horizon
    cap = int(mean_total * 1.2 + 10.0 * math.sqrt(mean_total + 1.0)) + 64 * width
    while True:
        ev_time = np.empty(cap, np.float64)
        ptr = np.zeros(5 * width + 1, np.int64)
        n = _kernel.build_cache(
            construction.master_seed,
            replica_id,
            construction.lam,
            construction.mu,
            construction.recovery_rate,
            lo,
            hi,
            horizon,
            ev_time,
            ptr,
        )
        if n >= 0:
            return EventCache(
                construction, replica_id, lo, hi, horizon, ev_time[:n].copy(), ptr
            )
        cap *= 2


@dataclass
class Trajectory:
    """Record of one process run; see the process module docstring."""

    construction: Construction
    replica_id: int
    initial: Configuration
    contact: bool
    start_time: float
    t_max: float
    win_lo: int
    left_fixed: bool
    right_fixed: bool
    sample_times: np.ndarray
    snap_states: np.ndarray
    snap_r: np.ndarray
    snap_l: np.ndarray
    snap_count: np.ndarray
    edge_t: np.ndarray
    edge_r: np.ndarray
    edge_l: np.ndarray
    edge_count: np.ndarray
    edge_arrows: np.ndarray
    died_at: float | None
    contam_t: np.ndarray | None
    act_lo: int
    act_hi: int
    n_events: int

    @property
    def width(self) -> int:
        return self.snap_states.shape[1]

    @property
    def win_hi(self) -> int:
        return self.win_lo + self.width - 1

    @property
    def final(self) -> ProcessState:
        r = int(self.edge_r[-1])
        l = int(self.edge_l[-1])
        return ProcessState(
            time=self.t_max,
            r=None if r == NONE_SITE else r,
            l=None if l == NONE_SITE else l,
            infected_count=int(self.edge_count[-1]),
        )

    def sample_state(self, i: int) -> ProcessState:
        r = int(self.snap_r[i])
        l = int(self.snap_l[i])
        return ProcessState(
            time=float(self.sample_times[i]),
            r=None if r == NONE_SITE else r,
            l=None if l == NONE_SITE else l,
            infected_count=int(self.snap_count[i]),
        )

    # --- edge path (cadlag step function) helpers ---

    def _edge_index(self, t: float) -> int:
        i = int(np.searchsorted(self.edge_t, t, side="right")) - 1
        if i < 0:
            raise ValueError(f"time {t} precedes start_time {self.start_time}")
        return i

    def r_at(self, t: float) -> int | None:
        v = int(self.edge_r[self._edge_index(t)])
        return None if v == NONE_SITE else v

    def l_at(self, t: float) -> int | None:
        v = int(self.edge_l[self._edge_index(t)])
        return None if v == NONE_SITE else v

    def max_r_over(self, a: float, b: float) -> int:
        """sup of r over [a, b); requires the process alive on [a, b)."""
        i = self._edge_index(a)
        j = int(np.searchsorted(self.edge_t, b, side="left"))
        vals = self.edge_r[i:j]
        if np.any(vals == NONE_SITE):
            raise ValueError("process died inside the interval")
        return int(vals.max())

    def min_r_over(self, a: float, b: float) -> int:
        """inf of r over [a, b); requires the process alive on [a, b)."""
        i = self._edge_index(a)
        j = int(np.searchsorted(self.edge_t, b, side="left"))
        vals = self.edge_r[i:j]
        if np.any(vals == NONE_SITE):
            raise ValueError("process died inside the interval")
        return int(vals.min())

    def first_hit_r(self, k: int) -> float | None:
        """inf{t : r_t = k} within the horizon, or None if never reached."""
        r0 = int(self.edge_r[0])
        if r0 == NONE_SITE:
            return None
        valid = self.edge_r != NONE_SITE
        if k >= r0:
            # r climbs in +1 steps, so the first entry with r >= k has r == k
            idx = np.nonzero(valid & (self.edge_r >= k))[0]
        else:
            # below the start r can jump down past k, so require equality
            idx = np.nonzero(valid & (self.edge_r == k))[0]
        if idx.size == 0:
            return None
        return float(self.edge_t[idx[0]])

    @property
    def max_r(self) -> int | None:
        vals = self.edge_r[self.edge_r != NONE_SITE]
        return int(vals.max()) if vals.size else None

    @property
    def min_l(self) -> int | None:
        vals = self.edge_l[self.edge_l != NONE_SITE]
        return int(vals.min()) if vals.size else None

    # --- state resolution over arbitrary site ranges ---

    def states_over(self, i: int, lo: int, hi: int) -> tuple[np.ndarray, np.ndarray]:
        """(values, exact) over sites lo..hi at sample index i.

        `exact` is False where the value cannot be certified (contaminated or
        beyond a truncated infinite side); there the returned value is the
        engine's best belief and must not be asserted on.
        """
        t = float(self.sample_times[i])
        vals = self.initial.values_over(lo, hi)
        exact = np.ones(hi - lo + 1, dtype=bool)
        w_lo, w_hi = self.win_lo, self.win_hi
        o_lo, o_hi = max(lo, w_lo), min(hi, w_hi)
        if o_lo <= o_hi:
            vals[o_lo - lo : o_hi - lo + 1] = self.snap_states[i, o_lo - w_lo : o_hi - w_lo + 1]
            if self.contam_t is not None:
                seg = self.contam_t[o_lo - w_lo : o_hi - w_lo + 1]
                exact[o_lo - lo : o_hi - lo + 1] = seg > t
        if self.left_fixed and lo < w_lo:
            exact[: w_lo - lo] = False
        if self.right_fixed and hi > w_hi:
            exact[w_hi - lo + 1 :] = False
        return vals, exact

    def infected_at(self, i: int) -> np.ndarray:
        """Sites infected at sample index i (certified sites only)."""
        row = self.snap_states[i]
        idx = np.nonzero(row == 1)[0]
        return idx + self.win_lo

    def cone_bound_left(self) -> tuple[np.ndarray, np.ndarray] | None:
        """(times, rightmost contaminated site) steps of the left cone.

        Contamination from the left boundary occupies a prefix interval of
        the window whose entry times increase with the site, so the pairs
        returned are both time- and site-sorted.
        """
        if self.contam_t is None or not self.left_fixed or self.right_fixed:
            return None
        ct = self.contam_t
        finite = np.isfinite(ct)
        n = ct.size if finite.all() else int(np.argmin(finite))
        times = ct[:n]
        sites = np.arange(self.win_lo, self.win_lo + n)
        order = np.argsort(times, kind="stable")
        return times[order], sites[order]

    # --- export ---

    def csv_rows(self, include_config: bool = False) -> Iterable[tuple]:
        """(replica, t, r, l, infected_count, died[, rle_config]) at sample times."""
        for i in range(len(self.sample_times)):
            st = self.sample_state(i)
            died = self.died_at is not None and self.died_at <= st.time
            row = (
                self.replica_id,
                st.time,
                "" if st.r is None else st.r,
                "" if st.l is None else st.l,
                st.infected_count,
                int(died),
            )
            if include_config:
                row = row + (rle_encode(self.snap_states[i]),)
            yield row


def rle_encode(states: np.ndarray) -> str:
    """Run-length encode an int8 state row, e.g. '120:-1,1:1,80:-1'."""
    if states.size == 0:
        return ""
    changes = np.nonzero(np.diff(states))[0]
    starts = np.concatenate(([0], changes + 1))
    ends = np.concatenate((changes + 1, [states.size]))
    return ",".join(f"{e - s}:{int(states[s])}" for s, e in zip(starts, ends))


def apply_event(config: Configuration, event: Event) -> Configuration:
    """Apply one mark of the construction to a configuration.

    Lambda arrows infect a target in state 0 or -1 from an infected source,
    residual (mu-lambda) arrows only a target in state 0, and a recovery mark
    sends state 1 to 0; every other case is a no-op.
    """
    if event.kind is StreamKind.RECOVERY:
        if config.state_at(event.site) == 1:
            devs = dict(config.deviations)
            devs[event.site] = 0
            return replace(config, deviations=devs)
        return config
    tgt = event.target
    if config.state_at(event.site) != 1:
        return config
    s = config.state_at(tgt)
    lam_arrow = event.kind in (StreamKind.LAMBDA_ARROW_RIGHT, StreamKind.LAMBDA_ARROW_LEFT)
    if s == 0 or (s == -1 and lam_arrow):
        devs = dict(config.deviations)
        devs[tgt] = 1
        return replace(config, deviations=devs)
    return config


def _as_sample_array(sample_times, start_time: float, t_max: float) -> np.ndarray:
    st = np.asarray(sorted(float(t) for t in sample_times), dtype=np.float64)
    if st.size and (st[0] < start_time or st[-1] > t_max):
        raise ValueError("sample_times must lie within [start_time, t_max]")
    return st


def evolve(
    construction: Construction,
    replica_id: int,
    initial: Configuration,
    start_time: float = 0.0,
    t_max: float = 100.0,
    sample_times: Iterable[float] = (),
    window_policy: WindowPolicy | None = None,
    contact: bool = False,
    track: tuple[int, int] | None = None,
    cache: EventCache | None = None,
) -> Trajectory:
    """Run one process over the shared construction.

    `track` forces sites lo..hi inside the simulation window (callers that
    will query them on a truncated infinite side).  `cache` substitutes
    pre-drawn events for live stream draws; results are bit-identical.
    """
    if t_max < start_time:
        raise ValueError("t_max must be >= start_time")
    policy = window_policy or WindowPolicy()
    samples = _as_sample_array(sample_times, start_time, t_max)

    left_fixed = initial.left_default == 1
    right_fixed = initial.right_default == 1
    span = t_max - start_time
    margin = policy.margin(construction.mu, span)

    dev_lo, dev_hi = initial.deviation_span()
    core_lo = min(dev_lo, track[0]) if track else dev_lo
    core_hi = max(dev_hi, track[1]) if track else dev_hi

    expansions = 0
    edge_cap = int((2.0 * construction.mu + 4.0) * max(span, 1.0) * 8.0) + 64
    while True:
        win_lo = core_lo - margin
        win_hi = core_hi + margin
        if cache is not None:
            win_lo = max(win_lo, cache.lo)
            win_hi = min(win_hi, cache.hi)
            if t_max > cache.horizon:
                raise ValueError("cache horizon too short for this run")
            if win_lo > core_lo or win_hi < core_hi:
                raise WindowBreachError(
                    "event cache does not cover the configuration's deviations"
                )
        width = win_hi - win_lo + 1
        states = initial.values_over(win_lo, win_hi)

        if left_fixed and right_fixed:
            act_lo, act_hi = 0, width - 1
        else:
            infected = np.nonzero(states == 1)[0]
            if infected.size == 0:
                act_lo, act_hi = 0, min(1, width - 1)
            else:
                act_lo = 0 if left_fixed else max(int(infected[0]) - 1, 0)
                act_hi = width - 1 if right_fixed else min(int(infected[-1]) + 1, width - 1)

        contam = np.full(width, np.inf)
        if left_fixed:
            contam[0] = start_time
        if right_fixed:
            contam[-1] = start_time

        n_samp = samples.size
        snap_states = np.zeros((n_samp, width), np.int8)
        snap_r = np.zeros(n_samp, np.int64)
        snap_l = np.zeros(n_samp, np.int64)
        snap_count = np.zeros(n_samp, np.int64)
        edge_t = np.zeros(edge_cap, np.float64)
        edge_r = np.zeros(edge_cap, np.int64)
        edge_l = np.zeros(edge_cap, np.int64)
        edge_count = np.zeros(edge_cap, np.int64)
        edge_arrows = np.zeros(edge_cap, np.int64)

        if cache is not None:
            use_cache = True
            off = (win_lo - cache.lo) * 5
            cache_time = cache.ev_time
            cache_ptr = cache.ptr[off : off + 5 * width + 1]
        else:
            use_cache = False
            cache_time = np.empty(0, np.float64)
            cache_ptr = np.zeros(5 * width + 1, np.int64)

        status, died_at, n_edge, n_events, arrows, f_act_lo, f_act_hi = _kernel.evolve_kernel(
            construction.master_seed,
            replica_id,
            construction.lam,
            construction.mu,
            construction.recovery_rate,
            contact,
            win_lo,
            states,
            left_fixed,
            right_fixed,
            act_lo,
            act_hi,
            start_time,
            t_max,
            samples,
            snap_states,
            snap_r,
            snap_l,
            snap_count,
            edge_t,
            edge_r,
            edge_l,
            edge_count,
            edge_arrows,
            contam,
            use_cache,
            cache_time,
            cache_ptr,
        )

        if status == _kernel.LOG_FULL:
            edge_cap *= 2
            continue
        if status in (_kernel.BREACH_LEFT, _kernel.BREACH_RIGHT, _kernel.CONE_LEFT, _kernel.CONE_RIGHT):
            if cache is not None:
                raise WindowBreachError(
                    f"run outgrew its event cache (status {status}); "
                    f"rebuild the cache with a wider site range"
                )
            if not policy.expandable or expansions >= policy.max_expansions:
                raise WindowBreachError(
                    f"window breach (status {status}) at margin {margin}; "
                    f"policy forbids further expansion"
                )
            margin = int(margin * policy.growth) + policy.pad
            expansions += 1
            continue

        return Trajectory(
            construction=construction,
            replica_id=replica_id,
            initial=initial,
            contact=contact,
            start_time=start_time,
            t_max=t_max,
            win_lo=win_lo,
            left_fixed=left_fixed,
            right_fixed=right_fixed,
            sample_times=samples,
            snap_states=snap_states,
            snap_r=snap_r,
            snap_l=snap_l,
            snap_count=snap_count,
            edge_t=edge_t[:n_edge],
            edge_r=edge_r[:n_edge],
            edge_l=edge_l[:n_edge],
            edge_count=edge_count[:n_edge],
            edge_arrows=edge_arrows[:n_edge],
            died_at=None if np.isnan(died_at) else float(died_at),
            contam_t=contam if (left_fixed or right_fixed) else None,
            act_lo=win_lo + f_act_lo,
            act_hi=win_lo + f_act_hi,
            n_events=n_events,
        )


ALL = "ALL"


def contact_evolve(
    construction: Construction,
    replica_id: int,
    initial_set,
    start_time: float = 0.0,
    t_max: float = 100.0,
    sample_times: Iterable[float] = (),
    window_policy: WindowPolicy | None = None,
    track: tuple[int, int] | None = None,
    cache: EventCache | None = None,
) -> Trajectory:
    """Plain contact process at rate mu: arrows of either type infect any
    susceptible target.  `initial_set` is a finite iterable of sites or ALL."""
    if isinstance(initial_set, str):
        if initial_set != ALL:
            raise ValueError("initial_set must be a set of sites or ALL")
        config = Configuration.all_infected()
    else:
        sites = sorted(set(int(x) for x in initial_set))
        config = Configuration(
            left_default=0, right_default=0, deviations={x: 1 for x in sites}
        )
    return evolve(
        construction,
        replica_id,
        config,
        start_time=start_time,
        t_max=t_max,
        sample_times=sample_times,
        window_policy=window_policy,
        contact=True,
        track=track,
        cache=cache,
    )
