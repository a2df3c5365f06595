"""Numba event-loop kernel backing the process engine.

One compiled routine evolves a single process over a site window.  Per-site
stream cursors (five streams per site) feed a binary min-heap of sites keyed
by next-event time; ties break by site index, then stream kind, matching the
documented merge order of the streams module bit-for-bit.

Two event sources share the same physics:
  * live mode draws interarrivals on the fly from the counter-based streams;
  * cached mode walks pre-drawn per-stream event arrays (CSR layout), which
    makes repeated evolutions over the same construction (restart algorithm,
    per-k domination checks) cheap: activation is a binary search instead of
    an O(rate * t) replay.

Exactness bookkeeping:
  * sites outside the active range are provably untouched while every
    infected site stays strictly inside it (dynamic sides expand on demand);
  * on fixed sides (infinite initial configurations truncated to the window)
    the boundary columns are marked contaminated from the start and
    contamination spreads along realized arrows; states at uncontaminated
    sites are exact.  If contamination would ever touch an inactive site the
    run aborts with a cone-breach status instead of silently degrading.
"""

import numpy as np
from numba import njit

U64 = np.uint64
GOLDEN = U64(0x9E3779B97F4A7C15)
M1 = U64(0xBF58476D1CE4E5B9)
M2 = U64(0x94D049BB133111EB)
TWO53_INV = 2.0 ** -53

# stream kinds (order is the tie-break order)
LAM_R, LAM_L, MULAM_R, MULAM_L, REC = 0, 1, 2, 3, 4

# kernel exit statuses
OK = 0
BREACH_LEFT = 1
BREACH_RIGHT = 2
LOG_FULL = 3
CONE_LEFT = 4
CONE_RIGHT = 5

NONE_SITE = -(2 ** 31) + 1  # sentinel for "no infected site" in edge logs
INF = np.inf


@njit(inline="always", cache=True)
def _mix64(z):
    z = (z ^ (z >> U64(30))) * M1
    z = (z ^ (z >> U64(27))) * M2
    return z ^ (z >> U64(31))


@njit(inline="always", cache=True)
def _stream_base(master, replica, site, kind):
    h = _mix64(U64(master) + GOLDEN)
    h = _mix64(h + U64(replica))
    h = _mix64(h + U64(site))
    return _mix64(h + U64(kind))


@njit(inline="always", cache=True)
def _uniform_at(base, counter):
    z = _mix64(base + (U64(counter) + U64(1)) * GOLDEN)
    return (np.float64(z >> U64(11)) + 0.5) * TWO53_INV


@njit(cache=True)
def draw_stream(master, replica, site, kind, rate, horizon, out):
    """Fill `out` with the stream's event times <= horizon; return the count.

    Returns -1 if `out` is too small (caller must retry with more room).
    """
    if rate <= 0.0:
        return 0
    base = _stream_base(master, replica, site, kind)
    t = 0.0
    n = 0
    c = U64(0)
    while True:
        u = _uniform_at(base, c)
        c += U64(1)
        t += -np.log(u) / rate
        if t > horizon:
            return n
        if n >= out.size:
            return -1
        out[n] = t
        n += 1


@njit(cache=True)
def build_cache(master, replica, lam, mu, rec_rate, lo, hi, horizon, ev_time, ptr):
    """Draw all streams for sites lo..hi to `horizon` into CSR arrays.

    ``ptr`` has length 5*(hi-lo+1)+1; stream (site, kind) occupies
    ``ev_time[ptr[5*(site-lo)+kind] : ptr[5*(site-lo)+kind+1]]`` sorted by
    time.  Returns the total event count, or -1 if ev_time is too small.
    """
    rates = np.empty(5, np.float64)
    rates[LAM_R] = lam
    rates[LAM_L] = lam
    rates[MULAM_R] = mu - lam
    rates[MULAM_L] = mu - lam
    rates[REC] = rec_rate
    pos = 0
    ptr[0] = 0
    s = 0
    for site in range(lo, hi + 1):
        for kind in range(5):
            rate = rates[kind]
            if rate > 0.0:
                base = _stream_base(master, replica, site, kind)
                t = 0.0
                c = U64(0)
                while True:
                    u = _uniform_at(base, c)
                    c += U64(1)
                    t += -np.log(u) / rate
                    if t > horizon:
                        break
                    if pos >= ev_time.size:
                        return -1
                    ev_time[pos] = t
                    pos += 1
            s += 1
            ptr[s] = pos
    return pos


@njit(cache=True)
def evolve_kernel(
    master,
    replica,
    lam,
    mu,
    rec_rate,
    contact,
    win_lo,
    states,
    left_fixed,
    right_fixed,
    act_lo,
    act_hi,
    start_time,
    t_max,
    sample_times,
    snap_states,
    snap_r,
    snap_l,
    snap_count,
    edge_t,
    edge_r,
    edge_l,
    edge_count,
    edge_arrows,
    contam_t,
    use_cache,
    cache_time,
    cache_ptr,
):
    """Evolve one process on the shared construction; see module docstring.

    Returns (status, died_at, n_edge, n_events, arrows_total, act_lo, act_hi);
    died_at is NaN while the infected set is nonempty at t_max.
    """
    width = states.size
    edge_cap = edge_t.size
    n_samp = sample_times.size

    rates = np.empty(5, np.float64)
    rates[LAM_R] = lam
    rates[LAM_L] = lam
    rates[MULAM_R] = mu - lam
    rates[MULAM_L] = mu - lam
    rates[REC] = rec_rate

    st_t = np.full((width, 5), INF)
    st_c = np.zeros((width, 5), np.int64)
    st_base = np.zeros((width, 5), np.uint64)
    site_next = np.full(width, INF)
    site_kind = np.zeros(width, np.int8)
    active = np.zeros(width, np.bool_)

    heap = np.empty(width, np.int64)
    hsize = 0

    died_at = np.nan
    n_edge = 0
    n_events = 0
    arrows_total = 0

    # --- initial infected bookkeeping ---
    count = 0
    r_idx = -1
    l_idx = -1
    for i in range(width):
        if states[i] == 1:
            count += 1
            if l_idx < 0:
                l_idx = i
            r_idx = i

    # activate sites act_lo..act_hi (heap/stream bookkeeping is written out
    # inline: numba closures would defeat the point of the kernel)
    for i in range(act_lo, act_hi + 1):
        # init streams for site i, skipping events <= start_time
        for k in range(5):
            rate = rates[k]
            if rate <= 0.0:
                st_t[i, k] = INF
                continue
            base = _stream_base(master, replica, win_lo + i, k)
            st_base[i, k] = base
            if use_cache:
                ci = 5 * i + k
                a = cache_ptr[ci]
                b = cache_ptr[ci + 1]
                # first event strictly after start_time
                lo_j = a
                hi_j = b
                while lo_j < hi_j:
                    mid = (lo_j + hi_j) // 2
                    if cache_time[mid] <= start_time:
                        lo_j = mid + 1
                    else:
                        hi_j = mid
                st_c[i, k] = lo_j
                st_t[i, k] = cache_time[lo_j] if lo_j < b else INF
            else:
                t = 0.0
                c = 0
                while True:
                    u = _uniform_at(base, c)
                    c += 1
                    t += -np.log(u) / rate
                    if t > start_time:
                        break
                st_t[i, k] = t
                st_c[i, k] = c
        # site minimum
        best = INF
        bk = 0
        for k in range(5):
            if st_t[i, k] < best:
                best = st_t[i, k]
                bk = k
        site_next[i] = best
        site_kind[i] = bk
        active[i] = True
        # heap push
        j = hsize
        heap[j] = i
        hsize += 1
        while j > 0:
            p = (j - 1) // 2
            hp = heap[p]
            hj = heap[j]
            if site_next[hj] < site_next[hp] or (
                site_next[hj] == site_next[hp] and hj < hp
            ):
                heap[p], heap[j] = hj, hp
                j = p
            else:
                break

    # initial edge-log entry
    edge_t[0] = start_time
    edge_r[0] = (win_lo + r_idx) if count > 0 else NONE_SITE
    edge_l[0] = (win_lo + l_idx) if count > 0 else NONE_SITE
    edge_count[0] = count
    edge_arrows[0] = 0
    n_edge = 1

    samp_i = 0
    status = OK

    if count == 0:
        died_at = start_time
        while samp_i < n_samp:
            for i in range(width):
                snap_states[samp_i, i] = states[i]
            snap_r[samp_i] = NONE_SITE
            snap_l[samp_i] = NONE_SITE
            snap_count[samp_i] = 0
            samp_i += 1
        return status, died_at, n_edge, n_events, arrows_total, act_lo, act_hi

    while True:
        if hsize > 0:
            top = heap[0]
            t_next = site_next[top]
        else:
            top = -1
            t_next = INF

        # emit snapshots strictly before the next event (cadlag convention)
        while samp_i < n_samp and sample_times[samp_i] < t_next:
            for i in range(width):
                snap_states[samp_i, i] = states[i]
            snap_r[samp_i] = (win_lo + r_idx) if count > 0 else NONE_SITE
            snap_l[samp_i] = (win_lo + l_idx) if count > 0 else NONE_SITE
            snap_count[samp_i] = count
            samp_i += 1

        if t_next > t_max:
            break

        n_events += 1
        i = top
        kind = site_kind[i]
        t = t_next

        # advance the consumed stream and restore the heap
        if use_cache:
            ci = 5 * i + kind
            j = st_c[i, kind] + 1
            st_c[i, kind] = j
            st_t[i, kind] = cache_time[j] if j < cache_ptr[ci + 1] else INF
        else:
            c = st_c[i, kind]
            u = _uniform_at(st_base[i, kind], c)
            st_c[i, kind] = c + 1
            st_t[i, kind] = st_t[i, kind] + (-np.log(u) / rates[kind])
        best = INF
        bk = 0
        for k in range(5):
            if st_t[i, k] < best:
                best = st_t[i, k]
                bk = k
        site_next[i] = best
        site_kind[i] = bk
        # sift down from root
        j = 0
        while True:
            c1 = 2 * j + 1
            if c1 >= hsize:
                break
            c2 = c1 + 1
            m = c1
            if c2 < hsize:
                h1 = heap[c1]
                h2 = heap[c2]
                if site_next[h2] < site_next[h1] or (
                    site_next[h2] == site_next[h1] and h2 < h1
                ):
                    m = c2
            hj = heap[j]
            hm = heap[m]
            if site_next[hm] < site_next[hj] or (
                site_next[hm] == site_next[hj] and hm < hj
            ):
                heap[j], heap[m] = hm, hj
                j = m
            else:
                break

        edge_changed = False

        if kind == REC:
            if states[i] == 1:
                states[i] = 0
                count -= 1
                if count == 0:
                    died_at = t
                    r_idx = -1
                    l_idx = -1
                    edge_changed = True
                else:
                    if i == r_idx:
                        j = i - 1
                        while states[j] != 1:
                            j -= 1
                        r_idx = j
                        edge_changed = True
                    if i == l_idx:
                        j = i + 1
                        while states[j] != 1:
                            j += 1
                        l_idx = j
                        edge_changed = True
        else:
            arrows_total += 1
            tgt = i + 1 if (kind == LAM_R or kind == MULAM_R) else i - 1
            src_contaminated = contam_t[i] <= t
            if tgt < 0 or tgt >= width:
                # arrow leaves the allocated window: harmless on a fixed side
                # (the outside is contaminated territory by definition) but on
                # a dynamic side a contaminated source would leak influence we
                # can no longer track.
                if src_contaminated:
                    if tgt < 0 and not left_fixed:
                        status = CONE_LEFT
                        break
                    if tgt >= width and not right_fixed:
                        status = CONE_RIGHT
                        break
            else:
                if src_contaminated and contam_t[tgt] == INF:
                    if tgt < act_lo or tgt > act_hi:
                        # contamination reaching an inactive site would stop
                        # being tracked (its streams are not consumed)
                        status = CONE_LEFT if tgt < act_lo else CONE_RIGHT
                        break
                    contam_t[tgt] = t
                if states[i] == 1:
                    s_tgt = states[tgt]
                    if s_tgt == 0 or (
                        s_tgt == -1 and (contact or kind == LAM_R or kind == LAM_L)
                    ):
                        states[tgt] = 1
                        count += 1
                        if tgt > r_idx:
                            r_idx = tgt
                            edge_changed = True
                        if tgt < l_idx:
                            l_idx = tgt
                            edge_changed = True
                        # expand the active range if the edge reached it
                        if tgt == act_hi and not right_fixed:
                            na = act_hi + 1
                            if na >= width:
                                status = BREACH_RIGHT
                                break
                            act_hi = na
                            for k in range(5):
                                rate = rates[k]
                                if rate <= 0.0:
                                    st_t[na, k] = INF
                                    continue
                                base = _stream_base(master, replica, win_lo + na, k)
                                st_base[na, k] = base
                                if use_cache:
                                    ci = 5 * na + k
                                    a = cache_ptr[ci]
                                    b = cache_ptr[ci + 1]
                                    lo_j = a
                                    hi_j = b
                                    while lo_j < hi_j:
                                        mid = (lo_j + hi_j) // 2
                                        if cache_time[mid] <= t:
                                            lo_j = mid + 1
                                        else:
                                            hi_j = mid
                                    st_c[na, k] = lo_j
                                    st_t[na, k] = cache_time[lo_j] if lo_j < b else INF
                                else:
                                    tt = 0.0
                                    c = 0
                                    while True:
                                        u = _uniform_at(base, c)
                                        c += 1
                                        tt += -np.log(u) / rate
                                        if tt > t:
                                            break
                                    st_t[na, k] = tt
                                    st_c[na, k] = c
                            best = INF
                            bk = 0
                            for k in range(5):
                                if st_t[na, k] < best:
                                    best = st_t[na, k]
                                    bk = k
                            site_next[na] = best
                            site_kind[na] = bk
                            active[na] = True
                            j = hsize
                            heap[j] = na
                            hsize += 1
                            while j > 0:
                                p = (j - 1) // 2
                                hp = heap[p]
                                hj = heap[j]
                                if site_next[hj] < site_next[hp] or (
                                    site_next[hj] == site_next[hp] and hj < hp
                                ):
                                    heap[p], heap[j] = hj, hp
                                    j = p
                                else:
                                    break
                        if tgt == act_lo and not left_fixed:
                            na = act_lo - 1
                            if na < 0:
                                status = BREACH_LEFT
                                break
                            act_lo = na
                            for k in range(5):
                                rate = rates[k]
                                if rate <= 0.0:
                                    st_t[na, k] = INF
                                    continue
                                base = _stream_base(master, replica, win_lo + na, k)
                                st_base[na, k] = base
                                if use_cache:
                                    ci = 5 * na + k
                                    a = cache_ptr[ci]
                                    b = cache_ptr[ci + 1]
                                    lo_j = a
                                    hi_j = b
                                    while lo_j < hi_j:
                                        mid = (lo_j + hi_j) // 2
                                        if cache_time[mid] <= t:
                                            lo_j = mid + 1
                                        else:
                                            hi_j = mid
                                    st_c[na, k] = lo_j
                                    st_t[na, k] = cache_time[lo_j] if lo_j < b else INF
                                else:
                                    tt = 0.0
                                    c = 0
                                    while True:
                                        u = _uniform_at(base, c)
                                        c += 1
                                        tt += -np.log(u) / rate
                                        if tt > t:
                                            break
                                    st_t[na, k] = tt
                                    st_c[na, k] = c
                            best = INF
                            bk = 0
                            for k in range(5):
                                if st_t[na, k] < best:
                                    best = st_t[na, k]
                                    bk = k
                            site_next[na] = best
                            site_kind[na] = bk
                            active[na] = True
                            j = hsize
                            heap[j] = na
                            hsize += 1
                            while j > 0:
                                p = (j - 1) // 2
                                hp = heap[p]
                                hj = heap[j]
                                if site_next[hj] < site_next[hp] or (
                                    site_next[hj] == site_next[hp] and hj < hp
                                ):
                                    heap[p], heap[j] = hj, hp
                                    j = p
                                else:
                                    break

        if edge_changed:
            if n_edge >= edge_cap:
                status = LOG_FULL
                break
            edge_t[n_edge] = t
            edge_r[n_edge] = (win_lo + r_idx) if count > 0 else NONE_SITE
            edge_l[n_edge] = (win_lo + l_idx) if count > 0 else NONE_SITE
            edge_count[n_edge] = count
            edge_arrows[n_edge] = arrows_total
            n_edge += 1

        if count == 0:
            # absorbing: freeze and emit the remaining snapshots
            while samp_i < n_samp:
                for ii in range(width):
                    snap_states[samp_i, ii] = states[ii]
                snap_r[samp_i] = NONE_SITE
                snap_l[samp_i] = NONE_SITE
                snap_count[samp_i] = 0
                samp_i += 1
            break

    if status != OK:
        return status, died_at, n_edge, n_events, arrows_total, act_lo, act_hi

    # emit any snapshots not reached because the heap drained early
    while samp_i < n_samp:
        for i in range(width):
            snap_states[samp_i, i] = states[i]
        snap_r[samp_i] = (win_lo + r_idx) if count > 0 else NONE_SITE
        snap_l[samp_i] = (win_lo + l_idx) if count > 0 else NONE_SITE
        snap_count[samp_i] = count
        samp_i += 1

    return status, died_at, n_edge, n_events, arrows_total, act_lo, act_hi
