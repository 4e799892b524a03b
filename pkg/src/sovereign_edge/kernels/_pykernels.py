"""Pure-Python kernels.

Bit-for-bit equivalent to the compiled ``_ckernels`` module: same PRNG
stream, same iteration order, same return types.  Used when the extension
is not built or when ``SOVEREIGN_EDGE_PURE_PYTHON=1`` is set.
"""

from __future__ import annotations

from bisect import bisect_left

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; returns ``(new_state, output)``."""
    state = (state + GOLDEN) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def reach_closure(indptr, indices, seeds) -> np.ndarray:
    n = len(indptr) - 1
    mask = np.zeros(n, dtype=np.uint8)
    ip = indptr.tolist()
    ix = indices.tolist()
    stack = []
    for s in seeds:
        s = int(s)
        if not mask[s]:
            mask[s] = 1
            stack.append(s)
    while stack:
        u = stack.pop()
        for k in range(ip[u], ip[u + 1]):
            v = ix[k]
            if not mask[v]:
                mask[v] = 1
                stack.append(v)
    return mask


def _quiescent(ip, ix, infected_at) -> bool:
    for u in range(len(ip) - 1):
        if infected_at[u] < 0:
            continue
        for k in range(ip[u], ip[u + 1]):
            if infected_at[ix[k]] < 0:
                return False
    return True


def worm_spread(indptr, indices, seeds, scan_mode: int, p_threshold: int,
                scan_rate: int, rng_seed: int, max_ticks: int):
    """Run one worm outbreak; returns ``(infected_at, ticks_run)``.

    ``infected_at[v]`` is the tick at which ``v`` was infected, ``-1`` if
    never.  An infection attempt along ``(u, v)`` succeeds when the top 53
    bits of the next PRNG output are below ``p_threshold`` (``2**53`` means
    always).  Scanning mode draws ``scan_rate`` uniform addresses from V per
    infected node per tick; a scan only lands if ``(u, v)`` is an edge.
    """
    n = len(indptr) - 1
    ip = indptr.tolist()
    ix = indices.tolist()
    infected_at = [-1] * n
    for s in seeds:
        infected_at[int(s)] = 0
    state = rng_seed & MASK64
    tick = 0
    while tick < max_ticks and not _quiescent(ip, ix, infected_at):
        tick += 1
        active = [u for u in range(n) if 0 <= infected_at[u] < tick]
        for u in active:
            lo, hi = ip[u], ip[u + 1]
            if scan_mode:
                for _ in range(scan_rate):
                    state, x = splitmix64(state)
                    v = ((x >> 32) * n) >> 32
                    pos = bisect_left(ix, v, lo, hi)
                    if pos == hi or ix[pos] != v or infected_at[v] >= 0:
                        continue
                    state, x = splitmix64(state)
                    if (x >> 11) < p_threshold:
                        infected_at[v] = tick
            else:
                for k in range(lo, hi):
                    v = ix[k]
                    if infected_at[v] >= 0:
                        continue
                    state, x = splitmix64(state)
                    if (x >> 11) < p_threshold:
                        infected_at[v] = tick
    return np.asarray(infected_at, dtype=np.int64), tick


def simple_paths(adj, s: int, t: int, limit: int) -> list[tuple[int, ...]]:
    """All simple paths s -> t over bitmask adjacency, lexicographic order."""
    out: list[tuple[int, ...]] = []
    if s == t:
        return out
    path = [s]

    def dfs(u: int, visited: int) -> bool:
        m = adj[u]
        v = 0
        while m:
            if m & 1 and not (visited >> v) & 1:
                if v == t:
                    out.append(tuple(path) + (t,))
                    if len(out) >= limit:
                        return True
                else:
                    path.append(v)
                    if dfs(v, visited | (1 << v)):
                        return True
                    path.pop()
            m >>= 1
            v += 1
        return False

    dfs(s, 1 << s)
    return out


def path_fingerprint(path) -> int:
    h = 0xCBF29CE484222325
    for v in path:
        h = ((h ^ (v + 1)) * 0x100000001B3) & MASK64
    return splitmix64(h)[1]


def path_census(adj_batch, s: int, t: int):
    """Per-graph path counts and order-free path-set fingerprints."""
    g = adj_batch.shape[0]
    counts = np.zeros(g, dtype=np.int64)
    fps = np.zeros(g, dtype=np.uint64)
    for i in range(g):
        paths = simple_paths([int(m) for m in adj_batch[i]], s, t, 1 << 62)
        counts[i] = len(paths)
        acc = 0
        for p in paths:
            acc = (acc + path_fingerprint(p)) & MASK64
        fps[i] = acc
    return counts, fps
