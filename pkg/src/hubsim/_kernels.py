"""Compiled inner loops: Fenwick sampling, graph growth, race chain, branching process.

All kernels consume pre-drawn uniform buffers so that their output depends only
on the buffer, never on scheduling.  Kernels that cannot finish return a
negative status (or a resume point) and the Python wrapper retries.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

REBUILD_EVERY = 1 << 20

# state vector layout for the growth kernel
S_K, S_LEADER, S_LEADER_DEG, S_CHANGES, S_UPDATES, S_N = range(6)
STATE_LEN = 6


@njit(cache=True, nogil=True)
def fenwick_add(tree, i, delta):
    j = i + 1
    n = tree.shape[0]
    while j < n:
        tree[j] += delta
        j += j & (-j)


@njit(cache=True, nogil=True)
def fenwick_prefix(tree, i):
    """Sum of weights with index < i."""
    s = 0.0
    j = i
    while j > 0:
        s += tree[j]
        j -= j & (-j)
    return s


@njit(cache=True, nogil=True)
def fenwick_build(tree, w, n):
    tree[:] = 0.0
    for i in range(n):
        tree[i + 1] = w[i]
    for j in range(1, n + 1):
        p = j + (j & (-j))
        if p <= n:
            tree[p] += tree[j]


@njit(cache=True, nogil=True)
def fenwick_find(tree, n, x):
    """Smallest index i < n with prefix(i + 1) > x (clamped to n - 1)."""
    pos = 0
    step = 1
    while step * 2 <= n:
        step *= 2
    while step > 0:
        nxt = pos + step
        if nxt <= n and tree[nxt] <= x:
            pos = nxt
            x -= tree[nxt]
        step //= 2
    if pos >= n:
        pos = n - 1
    return pos


@njit(cache=True, nogil=True)
def _bump(i, degrees, state):
    """Raise degree of i by one and update the leader (ties go to the smaller index)."""
    degrees[i] += 1
    d = degrees[i]
    li = state[S_LEADER]
    if d > state[S_LEADER_DEG] or (d == state[S_LEADER_DEG] and i < li):
        if i != li:
            state[S_CHANGES] += 1
            state[S_LEADER] = i
        state[S_LEADER_DEG] = d


@njit(cache=True, nogil=True)
def _pick(tree, w, n, x):
    i = fenwick_find(tree, n, x)
    while w[i] <= 0.0 and i > 0:  # float slack at a zero-weight boundary
        i -= 1
    return i


@njit(cache=True, nogil=True)
def _rebuild(tree, w, n, total_arr, drift_arr):
    old = fenwick_prefix(tree, n)
    fenwick_build(tree, w, n)
    exact = 0.0
    for i in range(n):
        exact += w[i]
    if exact > 0:
        d = abs(old - exact) / exact
        if d > drift_arr[0]:
            drift_arr[0] = d
    total_arr[0] = exact


@njit(cache=True, nogil=True)
def grow_kernel(f_vals, m, u, n_start, n_end, degrees, w, tree, state, total_arr, drift_arr,
                ck_n, ck_out, ck_pos):
    """Attach vertices ``n_start..n_end``.

    Returns 0 when done, ``n > 0`` to ask for a longer ``f_vals`` before vertex n,
    or ``-n`` when the total weight is zero at vertex n.
    """
    for n in range(n_start, n_end + 1):
        if state[S_LEADER_DEG] + m[n] + 1 >= f_vals.shape[0]:
            return n
        for _ in range(m[n]):
            W = total_arr[0]
            if not W > 0.0:
                return -n
            k = state[S_K]
            i = _pick(tree, w, n, u[k] * W)
            _bump(i, degrees, state)
            nw = f_vals[degrees[i]]
            fenwick_add(tree, i, nw - w[i])
            total_arr[0] += nw - w[i]
            w[i] = nw
            _bump(n, degrees, state)
            state[S_K] = k + 1
            state[S_UPDATES] += 1
            if state[S_UPDATES] >= REBUILD_EVERY:
                _rebuild(tree, w, n, total_arr, drift_arr)
                state[S_UPDATES] = 0
        w[n] = f_vals[degrees[n]]
        fenwick_add(tree, n, w[n])
        total_arr[0] += w[n]
        state[S_N] = n + 1
        p = ck_pos[0]
        if p < ck_n.shape[0] and ck_n[p] == n:
            ck_out[p, 0] = n
            ck_out[p, 1] = state[S_K]
            ck_out[p, 2] = state[S_LEADER_DEG]
            ck_out[p, 3] = state[S_LEADER]
            ck_out[p, 4] = state[S_CHANGES]
            ck_out[p, 5] = degrees[0]
            ck_pos[0] = p + 1
    return 0


@njit(cache=True, nogil=True)
def bound_kernel(f_vals, m, u, k_max, degrees, w, tree, mode, c, l, s_l,
                 chain, target, overflow):
    """Grow the graph edge by edge and run one coupled bound chain.

    ``mode`` 0: lower chain for vertex 0, increment iff ``u < f(d)/(3 c (k+1))``.
    ``mode`` 1: upper chain for vertex l from edge ``s_l``, increment iff ``u`` falls in
    the window of length ``f(d)/(c (k+1) f(0))`` starting at vertex l's own slot.
    ``chain[k]`` and ``target[k]`` hold the chain and the real degree after k edges.
    Returns 0, or -1 if ``f_vals`` is too short.
    """
    n = 0
    k = 0
    W = 0.0
    # vertex 0 exists with degree 0
    w[0] = f_vals[0]
    fenwick_add(tree, 0, w[0])
    W = w[0]
    n = 1
    dc = 0
    chain[0] = 0
    target[0] = 0
    f0 = f_vals[0]
    while k < k_max:
        mn = m[n]
        for _ in range(mn):
            if k >= k_max:
                break
            if dc + 2 >= f_vals.shape[0] or degrees[0] + 2 >= f_vals.shape[0]:
                return -1
            x = u[k]
            watched = 0 if mode == 0 else l
            if mode == 0:
                p = f_vals[dc] / (3.0 * c * (k + 1))
                if x < p:
                    dc += 1
            elif k >= s_l and l < n:
                p = f_vals[dc] / (c * (k + 1) * f0)
                if p >= 1.0:
                    overflow[k] = 1
                    dc += 1
                else:
                    a = fenwick_prefix(tree, l) / W
                    b = a + p
                    if (a <= x < b) or (b > 1.0 and x < b - 1.0):
                        dc += 1
            i = _pick(tree, w, n, x * W)
            degrees[i] += 1
            if degrees[i] + 1 >= f_vals.shape[0]:
                return -1
            nw = f_vals[degrees[i]]
            fenwick_add(tree, i, nw - w[i])
            W += nw - w[i]
            w[i] = nw
            degrees[n] += 1
            k += 1
            if mode == 1 and n == l and k <= s_l:
                dc = degrees[l]
            chain[k] = dc
            target[k] = degrees[watched]
        w[n] = f_vals[degrees[n]]
        fenwick_add(tree, n, w[n])
        W += w[n]
        n += 1
    return 0


@njit(cache=True, nogil=True)
def race_kernel(f_vals, a, b, u, path):
    """Race chain: coordinate 1 steps with probability f(X1) / (f(X1) + f(X2))."""
    x1 = a
    x2 = b
    path[0, 0] = x1
    path[0, 1] = x2
    for j in range(u.shape[0]):
        g1 = f_vals[x1]
        g2 = f_vals[x2]
        if u[j] * (g1 + g2) < g1:
            x1 += 1
        else:
            x2 += 1
        path[j + 1, 0] = x1
        path[j + 1, 1] = x2


@njit(cache=True, nogil=True)
def race_lead_stats(path):
    """(lead changes between strict leaders, visits to a tie after time 0)."""
    changes = 0
    ties = 0
    last = 0
    for j in range(path.shape[0]):
        d = path[j, 0] - path[j, 1]
        s = 1 if d > 0 else (-1 if d < 0 else 0)
        if s == 0:
            if j > 0:
                ties += 1
        else:
            if last != 0 and s != last:
                changes += 1
            last = s
    return changes, ties


@njit(cache=True, nogil=True)
def _heap_push(ht, hi, size, t, i):
    j = size
    ht[j] = t
    hi[j] = i
    while j > 0:
        p = (j - 1) // 2
        if ht[p] < ht[j] or (ht[p] == ht[j] and hi[p] < hi[j]):
            break
        ht[p], ht[j] = ht[j], ht[p]
        hi[p], hi[j] = hi[j], hi[p]
        j = p
    return size + 1


@njit(cache=True, nogil=True)
def _heap_pop(ht, hi, size):
    t = ht[0]
    i = hi[0]
    size -= 1
    ht[0] = ht[size]
    hi[0] = hi[size]
    j = 0
    while True:
        l = 2 * j + 1
        r = l + 1
        s = j
        if l < size and (ht[l] < ht[s] or (ht[l] == ht[s] and hi[l] < hi[s])):
            s = l
        if r < size and (ht[r] < ht[s] or (ht[r] == ht[s] and hi[r] < hi[s])):
            s = r
        if s == j:
            break
        ht[s], ht[j] = ht[j], ht[s]
        hi[s], hi[j] = hi[j], hi[s]
        j = s
    return t, i, size


@njit(cache=True, nogil=True)
def ctbp_kernel(f_vals, root_offset, other_offset, u, target_size, t_stop,
                birth, parent, children):
    """Event-driven branching process, one pending birth per individual.

    Stops when the population reaches ``target_size`` or the next birth is after
    ``t_stop``.  Returns ``(size, status)``: status 0 stopped by size, 1 by time,
    -1 uniforms exhausted, -2 ``f_vals`` too short, -3 arrays full before stopping.
    """
    cap = birth.shape[0]
    ht = np.empty(cap)
    hi = np.empty(cap, dtype=np.int64)
    hs = 0
    pos = 0
    birth[0] = 0.0
    parent[0] = -1
    children[0] = 0
    size = 1
    if size >= target_size:
        return size, 0
    if f_vals[root_offset] > 0.0:
        if pos >= u.shape[0]:
            return size, -1
        hs = _heap_push(ht, hi, hs, -math.log1p(-u[pos]) / f_vals[root_offset], 0)
        pos += 1
    while True:
        if hs == 0:
            return size, 1
        if ht[0] > t_stop:
            return size, 1
        if size >= cap:
            return size, -3
        if pos + 2 > u.shape[0]:
            return size, -1
        t, i, hs = _heap_pop(ht, hi, hs)
        j = size
        birth[j] = t
        parent[j] = i
        children[j] = 0
        size += 1
        children[i] += 1
        off = root_offset if i == 0 else other_offset
        if off + children[i] >= f_vals.shape[0] or other_offset >= f_vals.shape[0]:
            return size, -2
        hs = _heap_push(ht, hi, hs, t - math.log1p(-u[pos]) / f_vals[off + children[i]], i)
        pos += 1
        hs = _heap_push(ht, hi, hs, t - math.log1p(-u[pos]) / f_vals[other_offset], j)
        pos += 1
        if size >= target_size:
            return size, 0
