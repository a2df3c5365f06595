"""Oriented site percolation on L = {(y,n): n >= 0, y+n even}.

Site openness is an independent Bernoulli(p) draw realized lazily from
(seed, y, n) with the same counter-hash discipline as the event streams, so
clusters are replayable and monotone couplings in p come for free (open iff
the site's uniform is below p).

Generation 0 sites are taken as unconditionally present (paths start there);
sites at generations >= 1 must be open.  This matches the bond-to-site
domination construction, where site (y, n+1) is declared open exactly when
at least one of its two incoming bonds (independent Bernoulli(p~)) is open,
giving openness probability p = p~(2-p~).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .couplings import Verdict
from .streams import GOLDEN, mix64, mix64_np

_PERC_SALT = 0x7065726373616C74  # domain separation from event streams
_U64 = np.uint64
_TWO53_INV = 2.0 ** -53

ORIGIN = "origin"
LEFT_HALF_LINE = "left_half_line"


def _row_uniforms(seed: int, n: int, ys: np.ndarray, tag: int) -> np.ndarray:
    """Uniforms in (0,1) keyed by (seed, y, n, tag) for a whole row."""
    h0 = mix64(mix64((seed + _PERC_SALT) & ((1 << 64) - 1)) + n)
    with np.errstate(over="ignore"):
        z = mix64_np(_U64(h0) + ys.astype(np.int64).astype(_U64) * _U64(GOLDEN))
        z = mix64_np(z + _U64(tag))
    return ((z >> _U64(11)).astype(np.float64) + 0.5) * _TWO53_INV


@dataclass(frozen=True)
class SiteField:
    """Lazy Bernoulli(p) site field; distinct (seed) values are independent."""

    p: float
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0,1]")

    def open_row(self, n: int, ys: np.ndarray) -> np.ndarray:
        return _row_uniforms(self.seed, n, ys, tag=0) < self.p

    def is_open(self, y: int, n: int) -> bool:
        return bool(self.open_row(n, np.array([y]))[0])


def field_for_replica(master_seed: int, replica: int, p: float) -> SiteField:
    """Derive an independent SiteField seed for one replica."""
    return SiteField(p=p, seed=mix64(mix64(master_seed + _PERC_SALT) + replica))


@dataclass(frozen=True)
class ClusterSlice:
    n: int
    sites: np.ndarray  # sorted y values with (y, n) reachable

    @property
    def r(self) -> int | None:
        return int(self.sites.max()) if self.sites.size else None

    @property
    def empty(self) -> bool:
        return self.sites.size == 0


def _initial_mask(initial: str, off: int, width: int) -> np.ndarray:
    cur = np.zeros(width, dtype=bool)
    if initial == ORIGIN:
        cur[off] = True
    elif initial == LEFT_HALF_LINE:
        ys = np.arange(width) - off
        cur[(ys <= 0) & (ys % 2 == 0)] = True
    else:
        raise ValueError(f"initial must be {ORIGIN!r} or {LEFT_HALF_LINE!r}")
    return cur


def grow_cluster(field: SiteField, n_max: int, initial: str = ORIGIN) -> list[ClusterSlice]:
    """Generation-by-generation frontier growth; an empty slice is absorbing.

    For the left-half-line start the seeds are truncated at y = -(2*n_max+2):
    a path from further left cannot reach y > -n_max within n_max steps, so
    the rightmost site of any slice is unaffected.
    """
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    left = (2 * n_max + 2) if initial == LEFT_HALF_LINE else (n_max + 2)
    off = left
    width = left + n_max + 3
    ys = np.arange(width) - off
    cur = _initial_mask(initial, off, width)
    slices = [ClusterSlice(0, ys[cur].copy())]
    for n in range(1, n_max + 1):
        if not cur.any():
            slices.append(ClusterSlice(n, np.empty(0, dtype=np.int64)))
            cur = np.zeros(width, dtype=bool)
            continue
        reach = np.zeros(width, dtype=bool)
        reach[1:] |= cur[:-1]
        reach[:-1] |= cur[1:]
        nxt = reach & field.open_row(n, ys)
        slices.append(ClusterSlice(n, ys[nxt].copy()))
        cur = nxt
    return slices


def cluster_edge(
    field: SiteField, n_max: int, initial: str = ORIGIN, return_sizes: bool = False
):
    """R_n for n = 0..n_max (NaN once the cluster has died); lean variant.

    With `return_sizes` also returns |A_n| per generation.
    """
    left = (2 * n_max + 2) if initial == LEFT_HALF_LINE else (n_max + 2)
    off = left
    width = left + n_max + 3
    ys = np.arange(width) - off
    cur = _initial_mask(initial, off, width)
    out = np.full(n_max + 1, np.nan)
    sizes = np.zeros(n_max + 1, dtype=np.int64)
    sizes[0] = int(cur.sum())
    if cur.any():
        out[0] = ys[cur].max()
    for n in range(1, n_max + 1):
        if not cur.any():
            break
        reach = np.zeros(width, dtype=bool)
        reach[1:] |= cur[:-1]
        reach[:-1] |= cur[1:]
        cur = reach & field.open_row(n, ys)
        sizes[n] = int(cur.sum())
        if cur.any():
            out[n] = ys[cur].max()
    if return_sizes:
        return out, sizes
    return out


def bond_site_coupling_check(p_tilde: float, seed: int, n_max: int) -> Verdict:
    """Coupled bond (parameter p~) and site (parameter p~(2-p~)) percolation
    from the left half-line on shared bond uniforms; asserts B'_n within A'_n
    pathwise for every generation."""
    if not 0.0 <= p_tilde <= 1.0:
        raise ValueError("p_tilde must lie in [0,1]")
    verdict = Verdict(kind="BondSiteContainment")
    left = 2 * n_max + 2
    off = left
    width = left + n_max + 3
    ys = np.arange(width) - off
    bonds = np.zeros(width, dtype=bool)
    sites = _initial_mask(LEFT_HALF_LINE, off, width)
    bonds[:] = sites
    for n in range(1, n_max + 1):
        u_left = _row_uniforms(seed, n, ys, tag=1)   # bond from (y-1, n-1)
        u_right = _row_uniforms(seed, n, ys, tag=2)  # bond from (y+1, n-1)
        open_left = u_left < p_tilde
        open_right = u_right < p_tilde
        site_open = open_left | open_right  # Bernoulli(p~(2-p~))
        from_left = np.zeros(width, dtype=bool)
        from_right = np.zeros(width, dtype=bool)
        from_left[1:] = bonds[:-1]
        from_right[:-1] = bonds[1:]
        bonds = (from_left & open_left) | (from_right & open_right)
        reach = np.zeros(width, dtype=bool)
        reach[1:] |= sites[:-1]
        reach[:-1] |= sites[1:]
        sites = reach & site_open
        escaped = bonds & ~sites
        for y in ys[escaped]:
            verdict.add(seed, float(n), int(y), "bond cluster escaped site cluster")
        verdict.sample_times_checked += 1
    verdict.replicas_checked = 1
    return verdict


def percolation_edge_speed(
    p: float,
    master_seed: int,
    replicas: int,
    n_max: int,
    a: float | None = None,
    n_grid: np.ndarray | None = None,
):
    """Edge speed of surviving origin clusters and the lower-deviation tail.

    Survivors are clusters alive at n_max; a_hat = mean(R_{n_max}/n_max) over
    them, and the tail P(R_n < a*n, survives) is fitted log-linearly over
    n_grid at a = a_hat/2 unless `a` is given.  Returns (a_hat, TailFit,
    survivors); inconclusive (None fit) without survivors.
    """
    from .estimators import fit_decay_curve

    edges = np.full((replicas, n_max + 1), np.nan)
    for rep in range(replicas):
        field = field_for_replica(master_seed, rep, p)
        edges[rep] = cluster_edge(field, n_max, ORIGIN)
    alive = ~np.isnan(edges[:, n_max])
    n_alive = int(alive.sum())
    if n_alive == 0:
        return None, None, 0
    a_hat = float(np.mean(edges[alive, n_max]) / n_max)
    a_fit = a if a is not None else a_hat / 2.0
    if n_grid is None:
        n_grid = np.unique(np.linspace(max(2, n_max // 12), n_max, 10).astype(int))
    probs = np.array(
        [np.mean(alive & (edges[:, n] < a_fit * n)) for n in n_grid], dtype=float
    )
    from .estimators import DegenerateFitError

    try:
        fit = fit_decay_curve(
            np.asarray(n_grid, dtype=float), probs, variable=f"R_n < {a_fit:.3g}*n"
        )
    except DegenerateFitError:
        fit = None  # e.g. p = 1: the lower-deviation event never occurs
    return a_hat, fit, n_alive


def half_line_edge_identity(
    p: float, master_seed: int, replicas: int, n_max: int
) -> Verdict:
    """R'_n must equal R_n at every generation where the origin cluster is
    alive (pathwise, per replica)."""
    verdict = Verdict(kind="HalfLineEdgeIdentity")
    for rep in range(replicas):
        field = field_for_replica(master_seed, rep, p)
        r_origin = cluster_edge(field, n_max, ORIGIN)
        r_half = cluster_edge(field, n_max, LEFT_HALF_LINE)
        alive = ~np.isnan(r_origin)
        bad = np.nonzero(alive & (r_origin != r_half))[0]
        for n in bad:
            verdict.add(rep, float(n), int(r_origin[n]), f"R_n={r_origin[n]} != R'_n={r_half[n]}")
        verdict.replicas_checked += 1
        verdict.sample_times_checked += int(alive.sum())
    return verdict


def phi_bound(a: float, b: float, c: float) -> float:
    """The largest phi such that x in [-b*phi*t, b*phi*t] guarantees
    [x - c(1-phi)t, x + c(1-phi)t] contains [-a*t, a*t] for all t >= 0:
    phi* = (c-a)/(c+b)."""
    if b <= 0 or c <= 0:
        raise ValueError("b and c must be positive")
    if a >= c:
        raise ValueError("requires a < c")
    return (c - a) / (c + b)
