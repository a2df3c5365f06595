"""Deterministic per-site Poisson event streams (the graphical construction).

Every process in this package is driven by a fixed ensemble of Poisson
processes: for each site x there are two lambda-arrow streams (to x-1 and
x+1, intensity lambda), two residual-arrow streams (intensity mu - lambda)
and one recovery-mark stream (intensity 1).  A stream is a pure function of
(master_seed, replica_id, site, kind): the j-th uniform of a stream is
obtained counter-style as ``finalize(base + (j+1)*GOLDEN)`` where ``base``
hashes the key fields and ``finalize`` is the splitmix64 avalanche.  Streams
are therefore lazily regenerable, bit-identical across calls, and two
processes sharing a Construction consume the very same randomness.

Interarrival times are sampled as -ln(u)/rate with u drawn from the open
interval (0,1), so event times within a stream are strictly increasing and
extending the horizon never changes earlier events.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

_MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_TWO53_INV = 2.0 ** -53

_BLOCK = 2048


class StreamKind(IntEnum):
    """Stream/event kinds; the integer order is the deterministic tie-break order."""

    LAMBDA_ARROW_RIGHT = 0
    LAMBDA_ARROW_LEFT = 1
    MU_LAMBDA_ARROW_RIGHT = 2
    MU_LAMBDA_ARROW_LEFT = 3
    RECOVERY = 4

    @property
    def target_offset(self) -> int:
        if self in (StreamKind.LAMBDA_ARROW_RIGHT, StreamKind.MU_LAMBDA_ARROW_RIGHT):
            return 1
        if self in (StreamKind.LAMBDA_ARROW_LEFT, StreamKind.MU_LAMBDA_ARROW_LEFT):
            return -1
        return 0

    @property
    def is_arrow(self) -> bool:
        return self is not StreamKind.RECOVERY


def mix64(z: int) -> int:
    """Splitmix64 finalizer (full-avalanche 64-bit bijection)."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return (z ^ (z >> 31)) & _MASK


def mix64_np(z: np.ndarray) -> np.ndarray:
    """Vectorized splitmix64 finalizer on uint64 arrays (wraps silently)."""
    z = z.astype(np.uint64, copy=True)
    with np.errstate(over="ignore"):
        z ^= z >> np.uint64(30)
        z *= np.uint64(_M1)
        z ^= z >> np.uint64(27)
        z *= np.uint64(_M2)
        z ^= z >> np.uint64(31)
    return z


def stream_base(master_seed: int, replica_id: int, site: int, kind: int) -> int:
    """Hash the stream key into the 64-bit base state of its counter sequence."""
    h = mix64((master_seed + GOLDEN) & _MASK)
    h = mix64((h + (replica_id & _MASK)) & _MASK)
    h = mix64((h + (site & _MASK)) & _MASK)
    return mix64((h + kind) & _MASK)


def uniform_at(base: int, counter: int) -> float:
    """The counter-th uniform of a stream, in the open interval (0,1)."""
    z = mix64((base + ((counter + 1) * GOLDEN)) & _MASK)
    return ((z >> 11) + 0.5) * _TWO53_INV


@dataclass(frozen=True)
class Construction:
    """A full realization of the graphical construction, identified by its seed.

    Pure value: two equal Constructions generate identical streams for every
    key and horizon.  ``recovery_rate`` is an engine test hook (the model has
    recovery rate 1) and is not exposed on the CLI.
    """

    master_seed: int
    lam: float
    mu: float
    recovery_rate: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError(f"lambda must be a nonnegative real, got {self.lam}")
        if not np.isfinite(self.mu) or self.mu < self.lam:
            raise ValueError(
                f"mu must satisfy mu >= lambda (residual arrow rate mu-lambda "
                f"would be negative): lambda={self.lam}, mu={self.mu}"
            )
        if self.recovery_rate < 0:
            raise ValueError("recovery_rate must be nonnegative")
        if not isinstance(self.master_seed, (int, np.integer)):
            raise ValueError("master_seed must be an integer")

    def rate(self, kind: StreamKind) -> float:
        if kind in (StreamKind.LAMBDA_ARROW_RIGHT, StreamKind.LAMBDA_ARROW_LEFT):
            return self.lam
        if kind in (StreamKind.MU_LAMBDA_ARROW_RIGHT, StreamKind.MU_LAMBDA_ARROW_LEFT):
            return self.mu - self.lam
        return self.recovery_rate

    @property
    def total_site_rate(self) -> float:
        """Total event intensity of one site (all five streams)."""
        return 2.0 * self.lam + 2.0 * (self.mu - self.lam) + self.recovery_rate


@dataclass(frozen=True)
class StreamKey:
    replica_id: int
    site: int
    kind: StreamKind


@dataclass(frozen=True, order=True)
class Event:
    """One mark of the construction: sort order is (time, site, kind, counter)."""

    time: float
    site: int
    kind: StreamKind
    counter: int = field(default=0, compare=True)

    @property
    def target(self) -> int | None:
        off = self.kind.target_offset
        return self.site + off if off != 0 else None


def site_streams(construction: Construction, key: StreamKey, horizon: float) -> list[Event]:
    """All events of one stream with time <= horizon, in increasing time order.

    Deterministic in (construction, key); a longer horizon extends the list
    without altering its prefix.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    rate = construction.rate(key.kind)
    if rate <= 0.0:
        return []
    base = stream_base(construction.master_seed, key.replica_id, key.site, int(key.kind))
    times: list[float] = []
    t = 0.0
    counter = 0
    while True:
        idx = np.arange(counter + 1, counter + _BLOCK + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = mix64_np(np.uint64(base) + idx * np.uint64(GOLDEN))
        u = ((z >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO53_INV
        gaps = -np.log(u) / rate
        cum = t + np.cumsum(gaps)
        inside = cum[cum <= horizon]
        times.extend(inside.tolist())
        if inside.size < _BLOCK:
            break
        t = cum[-1]
        counter += _BLOCK
    return [
        Event(time=tt, site=key.site, kind=key.kind, counter=i)
        for i, tt in enumerate(times)
    ]


def window_events(
    construction: Construction,
    replica_id: int,
    window: tuple[int, int],
    horizon: float,
) -> list[Event]:
    """Time-ordered merge of all site streams in the window [x_lo, x_hi].

    Ties (measure zero in theory, possible in floats) are broken by
    (site, kind order, counter) so re-merging any sub-window is consistent.
    """
    x_lo, x_hi = window
    if x_lo > x_hi:
        raise ValueError(f"window must satisfy x_lo <= x_hi, got {window}")
    merged: list[Event] = []
    for site in range(x_lo, x_hi + 1):
        for kind in StreamKind:
            merged.extend(
                site_streams(construction, StreamKey(replica_id, site, kind), horizon)
            )
    merged.sort(key=lambda e: (e.time, e.site, int(e.kind), e.counter))
    return merged
