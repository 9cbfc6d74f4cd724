"""Compiled per-window kernels for the tracking filter.

Nodes are the live detections in uid order, so frame indices are
non-decreasing along the node axis. Edges are cached match pairs given as
node indices.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def _find(parent, x):
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


@njit(cache=True)
def _key_less(f0, l0, r0, f1, l1, r1):
    if f0 != f1:
        return f0 < f1
    if l0 != l1:
        return l0 < l1
    return r0 < r1


@njit(cache=True)
def window_groups(n, ea, eb, frames, lefts, rights):
    """Connected components numbered in output order.

    Groups are ranked by (earliest frame, smallest left among members in
    that frame, smallest right). Returns (group per node, first frame per
    group, last frame per group).
    """
    parent = np.arange(n)
    for k in range(ea.size):
        x = _find(parent, ea[k])
        y = _find(parent, eb[k])
        if x < y:
            parent[y] = x
        elif y < x:
            parent[x] = y
    gidx = np.full(n, -1, np.int64)
    comp = np.empty(n, np.int64)
    n_groups = 0
    for i in range(n):
        r = _find(parent, i)
        if gidx[r] < 0:
            gidx[r] = n_groups
            n_groups += 1
        comp[i] = gidx[r]
    first = np.empty(n_groups, np.int64)
    last = np.empty(n_groups, np.int64)
    key_l = np.full(n_groups, np.inf)
    key_r = np.full(n_groups, np.inf)
    seen = np.zeros(n_groups, np.bool_)
    for i in range(n):
        g = comp[i]
        if not seen[g]:
            seen[g] = True
            first[g] = frames[i]
        last[g] = frames[i]
        if frames[i] == first[g] and lefts[i] < key_l[g]:
            key_l[g] = lefts[i]
        if rights[i] < key_r[g]:
            key_r[g] = rights[i]
    # few groups per window: insertion sort on the (first, left, right) key
    o = np.arange(n_groups)
    for k in range(1, n_groups):
        g = o[k]
        j = k - 1
        while j >= 0 and _key_less(first[g], key_l[g], key_r[g], first[o[j]], key_l[o[j]], key_r[o[j]]):
            o[j + 1] = o[j]
            j -= 1
        o[j + 1] = g
    rank = np.empty(n_groups, np.int64)
    for k in range(n_groups):
        rank[o[k]] = k
    for i in range(n):
        comp[i] = rank[comp[i]]
    return comp, first[o], last[o]


@njit(cache=True)
def carry_labels(comp, n_groups, labels, next_gid):
    """Assign persistent group ids in rank order; updates ``labels`` in place.

    A group keeps the smallest id held by any member that no earlier group
    took; otherwise it gets ``next_gid``.
    """
    n = comp.size
    low = np.full(n_groups, -1, np.int64)
    for i in range(n):
        lab = labels[i]
        g = comp[i]
        if lab >= 0 and (low[g] < 0 or lab < low[g]):
            low[g] = lab
    gids = np.empty(n_groups, np.int64)
    for g in range(n_groups):
        gid = low[g]
        if gid >= 0:
            taken = False
            for h in range(g):
                if gids[h] == gid:
                    taken = True
                    break
            if taken:
                gid = -1
                for i in range(n):
                    lab = labels[i]
                    if comp[i] != g or lab < 0 or (gid >= 0 and lab >= gid):
                        continue
                    free = True
                    for h in range(g):
                        if gids[h] == lab:
                            free = False
                            break
                    if free:
                        gid = lab
        if gid < 0:
            gid = next_gid
            next_gid += 1
        gids[g] = gid
    for i in range(n):
        labels[i] = gids[comp[i]]
    return gids, next_gid


@njit(cache=True)
def _lex_order(L, R):
    """Indices sorting integer pairs by (L, R)."""
    lo_l, hi_l, lo_r, hi_r = L.min(), L.max(), R.min(), R.max()
    width = hi_r - lo_r + 1
    if hi_l - lo_l < (1 << 62) // width:
        return np.argsort((L - lo_l) * width + (R - lo_r))
    o = np.argsort(R, kind="mergesort")
    return o[np.argsort(L[o], kind="mergesort")]


@njit(cache=True)
def present_spans(comp, first, last, frames, rlefts, rrights, lots, mid):
    """Plurality span and lot of every group present at ``mid``, in rank order.

    ``rlefts``/``rrights`` are spans already rounded to integer pixels. Span ties go to the span
    observed nearest ``mid``, then smaller left, then smaller right; lot ties
    go to the smaller id.
    """
    n = comp.size
    n_groups = first.size
    start = np.zeros(n_groups + 1, np.int64)
    for i in range(n):
        start[comp[i] + 1] += 1
    for g in range(n_groups):
        start[g + 1] += start[g]
    fill = start[:-1].copy()
    members = np.empty(n, np.int64)
    for i in range(n):
        g = comp[i]
        members[fill[g]] = i
        fill[g] += 1

    out_g = np.empty(n_groups, np.int64)
    out_l = np.empty(n_groups, np.int64)
    out_r = np.empty(n_groups, np.int64)
    out_lot = np.empty(n_groups, np.int64)
    k_out = 0
    for g in range(n_groups):
        if first[g] > mid or last[g] < mid:
            continue
        s, e = start[g], start[g + 1]
        m = e - s
        L = np.empty(m, np.int64)
        R = np.empty(m, np.int64)
        D = np.empty(m, np.int64)
        T = np.empty(m, np.int64)
        for k in range(m):
            i = members[s + k]
            L[k] = rlefts[i]
            R[k] = rrights[i]
            D[k] = abs(frames[i] - mid)
            T[k] = lots[i]
        o = _lex_order(L, R)
        best_c, best_d, best_l, best_r = -1, 0, 0, 0
        k = 0
        while k < m:
            l0, r0 = L[o[k]], R[o[k]]
            c = 0
            d = D[o[k]]
            while k < m and L[o[k]] == l0 and R[o[k]] == r0:
                c += 1
                if D[o[k]] < d:
                    d = D[o[k]]
                k += 1
            # runs arrive in ascending (left, right), so strict comparison keeps the smaller span
            if c > best_c or (c == best_c and d < best_d):
                best_c, best_d, best_l, best_r = c, d, l0, r0
        T.sort()
        best_lot, best_lot_c = T[0], 0
        k = 0
        while k < m:
            v = T[k]
            c = 0
            while k < m and T[k] == v:
                c += 1
                k += 1
            if c > best_lot_c:
                best_lot, best_lot_c = v, c
        out_g[k_out] = g
        out_l[k_out] = best_l
        out_r[k_out] = best_r
        out_lot[k_out] = best_lot
        k_out += 1
    return out_g[:k_out], out_l[:k_out], out_r[:k_out], out_lot[:k_out]


# reassociated sums vectorize; they differ from sequential order only in the last ulps
@njit(cache=True, fastmath=True)
def _l1(x, y):
    s = 0.0
    for c in range(x.size):
        s += abs(x[c] - y[c])
    return s


@njit(cache=True, fastmath=True)
def _dot(x, y):
    s = 0.0
    for c in range(x.size):
        s += x[c] * y[c]
    return s


@njit(cache=True)
def match_new(spans, model, sqrt_hist, start, t_c, t_b, t_l):
    """Match pairs (a, b) with b < a and a >= ``start`` among the given rows."""
    n = spans.shape[0]
    cap = 16
    ea = np.empty(cap, np.int64)
    eb = np.empty(cap, np.int64)
    k = 0
    for a in range(start, n):
        for b in range(a):
            if abs(spans[a, 0] - spans[b, 0]) + abs(spans[a, 1] - spans[b, 1]) >= t_l:
                continue
            if _l1(model[a], model[b]) >= t_c:
                continue
            bc = _dot(sqrt_hist[a], sqrt_hist[b])
            bc = min(max(bc, 0.0), 1.0)
            if np.sqrt(1.0 - bc) >= t_b:
                continue
            if k == cap:
                cap *= 2
                na = np.empty(cap, np.int64)
                nb = np.empty(cap, np.int64)
                na[:k] = ea[:k]
                nb[:k] = eb[:k]
                ea, eb = na, nb
            ea[k] = a
            eb[k] = b
            k += 1
    return ea[:k], eb[:k]


@njit(cache=True)
def lot_utilization(lefts, rights, lots, lot_ids, x_min, x_max):
    """Covered fraction of each lot's extent by the union of its spans."""
    out = np.zeros(lot_ids.size)
    for q in range(lot_ids.size):
        lo, hi = x_min[q], x_max[q]
        m = 0
        for k in range(lots.size):
            if lots[k] == lot_ids[q]:
                m += 1
        if m == 0:
            continue
        cl = np.empty(m)
        cr = np.empty(m)
        j = 0
        for k in range(lots.size):
            if lots[k] == lot_ids[q]:
                cl[j] = max(lefts[k], lo)
                cr[j] = min(rights[k], hi)
                j += 1
        o = np.argsort(cl)
        total = 0.0
        cur_l = cur_r = 0.0
        started = False
        for k in range(m):
            l, r = cl[o[k]], cr[o[k]]
            if r <= l:
                continue
            if not started or l > cur_r:
                if started:
                    total += cur_r - cur_l
                cur_l, cur_r = l, r
                started = True
            elif r > cur_r:
                cur_r = r
        if started:
            total += cur_r - cur_l
        out[q] = min(1.0, max(0.0, total / (hi - lo)))
    return out


@njit(cache=True)
def evaluate_window(
    ea, eb, base, frames, lefts, rights, rlefts, rrights, lots, labels, next_gid, mid, lot_ids, x_min, x_max
):
    """Group, relabel, locate and measure the live window in one call.

    ``ea``/``eb`` are cached edges as uids; edges touching uids below ``base``
    are ignored. Returns (group ids, lefts, rights, lots) of the groups
    present at ``mid`` in output order, per-lot utilization, and the updated
    id counter.
    """
    keep = 0
    for k in range(eb.size):
        if eb[k] >= base:
            keep += 1
    a = np.empty(keep, np.int64)
    b = np.empty(keep, np.int64)
    j = 0
    for k in range(eb.size):
        if eb[k] >= base:
            a[j] = ea[k] - base
            b[j] = eb[k] - base
            j += 1
    comp, first, last = window_groups(frames.size, a, b, frames, lefts, rights)
    gids, next_gid = carry_labels(comp, first.size, labels, next_gid)
    g, l, r, lot = present_spans(comp, first, last, frames, rlefts, rrights, lots, mid)
    util = lot_utilization(l.astype(np.float64), r.astype(np.float64), lot, lot_ids, x_min, x_max)
    return gids[g], l, r, lot, util, next_gid
