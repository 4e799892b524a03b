# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; must stay bit-identical to ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t, uint64_t

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL


cdef inline uint64_t _mix(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline uint64_t _next(uint64_t* state) nogil:
    state[0] = state[0] + GOLDEN
    return _mix(state[0])


def splitmix64(uint64_t state):
    state = state + GOLDEN
    return state, _mix(state)


def reach_closure(cnp.int64_t[::1] indptr, cnp.int64_t[::1] indices, seeds):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    out = np.zeros(n, dtype=np.uint8)
    cdef cnp.uint8_t[::1] mask = out
    cdef cnp.int64_t[::1] stack = np.empty(max(n, 1), dtype=np.int64)
    cdef Py_ssize_t top = 0, u, v, k
    for s in seeds:
        u = s
        if not mask[u]:
            mask[u] = 1
            stack[top] = u
            top += 1
    with nogil:
        while top > 0:
            top -= 1
            u = stack[top]
            for k in range(indptr[u], indptr[u + 1]):
                v = indices[k]
                if not mask[v]:
                    mask[v] = 1
                    stack[top] = v
                    top += 1
    return out


cdef bint _quiescent(cnp.int64_t[::1] ip, cnp.int64_t[::1] ix,
                     cnp.int64_t[::1] infected_at) nogil:
    cdef Py_ssize_t n = ip.shape[0] - 1, u, k
    for u in range(n):
        if infected_at[u] < 0:
            continue
        for k in range(ip[u], ip[u + 1]):
            if infected_at[ix[k]] < 0:
                return False
    return True


cdef inline bint _edge_in_row(cnp.int64_t[::1] ix, Py_ssize_t lo,
                              Py_ssize_t hi, int64_t v) nogil:
    # lower_bound in the sorted row slice [lo, hi)
    cdef Py_ssize_t end = hi, mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if ix[mid] < v:
            lo = mid + 1
        else:
            hi = mid
    return lo < end and ix[lo] == v


def worm_spread(cnp.int64_t[::1] indptr, cnp.int64_t[::1] indices, seeds,
                int scan_mode, uint64_t p_threshold, int scan_rate,
                uint64_t rng_seed, int64_t max_ticks):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    out = np.full(n, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] infected_at = out
    cdef cnp.int64_t[::1] active = np.empty(max(n, 1), dtype=np.int64)
    cdef Py_ssize_t n_active, a, u, k, lo, hi, j
    cdef int64_t v, tick = 0
    cdef uint64_t state = rng_seed, x
    for s in seeds:
        infected_at[<Py_ssize_t>s] = 0
    with nogil:
        while tick < max_ticks and not _quiescent(indptr, indices, infected_at):
            tick += 1
            n_active = 0
            for u in range(n):
                if infected_at[u] >= 0 and infected_at[u] < tick:
                    active[n_active] = u
                    n_active += 1
            for a in range(n_active):
                u = active[a]
                lo = indptr[u]
                hi = indptr[u + 1]
                if scan_mode:
                    for j in range(scan_rate):
                        x = _next(&state)
                        v = <int64_t>(((x >> 32) * <uint64_t>n) >> 32)
                        if lo == hi or not _edge_in_row(indices, lo, hi, v):
                            continue
                        if infected_at[v] >= 0:
                            continue
                        x = _next(&state)
                        if (x >> 11) < p_threshold:
                            infected_at[v] = tick
                else:
                    for k in range(lo, hi):
                        v = indices[k]
                        if infected_at[v] >= 0:
                            continue
                        x = _next(&state)
                        if (x >> 11) < p_threshold:
                            infected_at[v] = tick
    return out, tick


cdef struct _PathState:
    int t
    int depth
    int n
    long long limit
    long long found


cdef int _dfs_collect(unsigned long long* adj, int u, unsigned long long visited,
                      int* path, _PathState* st, list out) except -1:
    cdef unsigned long long m = adj[u]
    cdef int v = 0
    while m:
        if (m & 1) and not ((visited >> v) & 1):
            if v == st.t:
                out.append(tuple([path[i] for i in range(st.depth)]) + (v,))
                st.found += 1
                if st.found >= st.limit:
                    return 1
            else:
                path[st.depth] = v
                st.depth += 1
                if _dfs_collect(adj, v, visited | (1ULL << v), path, st, out):
                    return 1
                st.depth -= 1
        m >>= 1
        v += 1
    return 0


def simple_paths(adj, int s, int t, long long limit):
    cdef int n = len(adj)
    cdef unsigned long long cadj[64]
    cdef int path[64]
    cdef _PathState st
    cdef list out = []
    if n > 64:
        raise ValueError("bitmask adjacency supports at most 64 vertices")
    if s == t:
        return out
    for i in range(n):
        cadj[i] = adj[i]
    st.t = t
    st.depth = 1
    st.n = n
    st.limit = limit
    st.found = 0
    path[0] = s
    _dfs_collect(cadj, s, 1ULL << s, path, &st, out)
    return out


cdef inline uint64_t _fingerprint(int* path, int length) nogil:
    cdef uint64_t h = 0xCBF29CE484222325ULL
    cdef int i
    for i in range(length):
        h = (h ^ <uint64_t>(path[i] + 1)) * 0x100000001B3ULL
    return _mix(h + GOLDEN)


cdef void _dfs_census(uint64_t* adj, int u, uint64_t visited, int t,
                      int* path, int depth, int64_t* count,
                      uint64_t* acc) nogil:
    cdef uint64_t m = adj[u]
    cdef int v = 0
    while m:
        if (m & 1) and not ((visited >> v) & 1):
            path[depth] = v
            if v == t:
                count[0] += 1
                acc[0] += _fingerprint(path, depth + 1)
            else:
                _dfs_census(adj, v, visited | (1ULL << v), t, path,
                            depth + 1, count, acc)
        m >>= 1
        v += 1


def path_census(cnp.uint64_t[:, ::1] adj_batch, int s, int t):
    cdef Py_ssize_t g = adj_batch.shape[0], i
    cdef int n = adj_batch.shape[1]
    counts_arr = np.zeros(g, dtype=np.int64)
    fps_arr = np.zeros(g, dtype=np.uint64)
    cdef cnp.int64_t[::1] counts = counts_arr
    cdef cnp.uint64_t[::1] fps = fps_arr
    cdef int path[64]
    cdef int64_t c
    cdef uint64_t acc
    if n > 64:
        raise ValueError("bitmask adjacency supports at most 64 vertices")
    if s == t:
        return counts_arr, fps_arr
    with nogil:
        for i in range(g):
            c = 0
            acc = 0
            path[0] = s
            _dfs_census(&adj_batch[i, 0], s, 1ULL << s, t, path, 1, &c, &acc)
            counts[i] = c
            fps[i] = acc
    return counts_arr, fps_arr
