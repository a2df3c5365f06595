"""Test helpers: a slow, pure-python reference engine.

The reference consumes the merged window event list through the functional
single-event rule, tracking states over an explicit window.  It knows
nothing about the kernel's heaps, activation windows or caches, so matching
trajectories pin the kernel's physics against an independent path.
"""

from __future__ import annotations

import numpy as np

from tscp.process import Configuration
from tscp.streams import Construction, StreamKind, window_events


def reference_evolve(
    construction: Construction,
    replica_id: int,
    initial: Configuration,
    start_time: float,
    t_max: float,
    sample_times,
    window: tuple[int, int],
    contact: bool = False,
):
    """States over `window` at each sample time, plus (r, l, count, died_at).

    Exact when the dynamics provably stay inside the window; the caller gets
    an assertion if infection ever reaches the two outermost columns.
    """
    lo, hi = window
    states = {x: initial.state_at(x) for x in range(lo, hi + 1)}
    events = window_events(construction, replica_id, window, t_max)
    samples = sorted(float(t) for t in sample_times)
    out = []
    died_at = None

    def infected():
        return [x for x in range(lo, hi + 1) if states[x] == 1]

    def snapshot(t):
        inf = infected()
        assert not inf or (lo + 1 < inf[0] and inf[-1] < hi - 1), (
            "reference window too small for this run"
        )
        row = np.array([states[x] for x in range(lo, hi + 1)], dtype=np.int8)
        out.append(
            {
                "t": t,
                "states": row,
                "r": max(inf) if inf else None,
                "l": min(inf) if inf else None,
                "count": len(inf),
            }
        )

    si = 0
    for ev in events:
        if ev.time <= start_time:
            continue
        if ev.time > t_max:
            break
        while si < len(samples) and samples[si] < ev.time:
            snapshot(samples[si])
            si += 1
        if ev.kind is StreamKind.RECOVERY:
            if states[ev.site] == 1:
                states[ev.site] = 0
        else:
            tgt = ev.target
            if lo <= tgt <= hi and states[ev.site] == 1:
                s = states[tgt]
                lam_arrow = ev.kind in (
                    StreamKind.LAMBDA_ARROW_RIGHT,
                    StreamKind.LAMBDA_ARROW_LEFT,
                )
                if s == 0 or (s == -1 and (contact or lam_arrow)):
                    states[tgt] = 1
        if died_at is None and not infected():
            died_at = ev.time
    while si < len(samples):
        snapshot(samples[si])
        si += 1
    return out, died_at
