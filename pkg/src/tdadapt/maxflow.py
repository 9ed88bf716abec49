"""Two-terminal min-cut by shortest augmenting paths (Edmonds-Karp).

The kernel is compiled with numba; the network is stored as CSR arc arrays
where every arc knows the index of its reverse arc.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _augment(start, head, rev, cap, s, t, eps):
    n = start.size - 1
    parent = np.empty(n, np.int64)
    queue = np.empty(n, np.int64)
    total = 0.0
    while True:
        parent[:] = -1
        parent[s] = -2
        qh = 0
        qt = 1
        queue[0] = s
        found = False
        while qh < qt and not found:
            u = queue[qh]
            qh += 1
            for a in range(start[u], start[u + 1]):
                v = head[a]
                if parent[v] == -1 and cap[a] > eps:
                    parent[v] = a
                    queue[qt] = v
                    qt += 1
                    if v == t:
                        found = True
                        break
        if not found:
            break
        bottleneck = np.inf
        v = t
        while v != s:
            a = parent[v]
            if cap[a] < bottleneck:
                bottleneck = cap[a]
            v = head[rev[a]]
        v = t
        while v != s:
            a = parent[v]
            cap[a] -= bottleneck
            cap[rev[a]] += bottleneck
            v = head[rev[a]]
        total += bottleneck
    return total


@njit(cache=True)
def _reaches_sink(start, head, rev, cap, t, eps):
    # reverse BFS: u reaches t if some arc u->v has residual capacity and v reaches t
    n = start.size - 1
    seen = np.zeros(n, np.bool_)
    queue = np.empty(n, np.int64)
    seen[t] = True
    queue[0] = t
    qh = 0
    qt = 1
    while qh < qt:
        v = queue[qh]
        qh += 1
        for a in range(start[v], start[v + 1]):
            u = head[a]
            if not seen[u] and cap[rev[a]] > eps:
                seen[u] = True
                queue[qt] = u
                qt += 1
    return seen


def min_cut(source_cap: np.ndarray, sink_cap: np.ndarray, edges: np.ndarray, edge_cap: np.ndarray) -> tuple[float, np.ndarray]:
    """Minimum s-t cut of a graph with terminal links and undirected edges.

    Node ``i`` has an arc ``s -> i`` of capacity ``source_cap[i]`` and an arc
    ``i -> t`` of capacity ``sink_cap[i]``; each row ``(i, j)`` of ``edges``
    is an undirected link of capacity ``edge_cap``. All capacities must be
    nonnegative.

    Returns the cut value and a mask of nodes on the sink side. The sink side
    is the smallest one (nodes with a residual path to ``t``), so ties leave
    nodes with the source.
    """
    source_cap = np.asarray(source_cap, dtype=np.float64)
    sink_cap = np.asarray(sink_cap, dtype=np.float64)
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    edge_cap = np.asarray(edge_cap, dtype=np.float64)
    n = source_cap.size
    if min(source_cap.min(initial=0), sink_cap.min(initial=0), edge_cap.min(initial=0)) < 0:
        raise ValueError("capacities must be nonnegative")
    s, t = n, n + 1
    nodes = np.arange(n)
    # forward arcs and their reverses; undirected links are a pair of arcs
    # that act as each other's residual
    tail = np.concatenate([np.full(n, s), nodes, nodes, np.full(n, t), edges[:, 0], edges[:, 1]])
    head = np.concatenate([nodes, np.full(n, s), np.full(n, t), nodes, edges[:, 1], edges[:, 0]])
    cap = np.concatenate([source_cap, np.zeros(n), sink_cap, np.zeros(n), edge_cap, edge_cap])
    m = edges.shape[0]
    base = np.arange(n)
    pair = np.arange(m)
    rev = np.concatenate([base + n, base, base + 3 * n, base + 2 * n, pair + 4 * n + m, pair + 4 * n])

    order = np.argsort(tail, kind="stable")
    inv = np.empty_like(order)
    inv[order] = np.arange(order.size)
    head, cap, rev = head[order], cap[order], inv[rev[order]]
    start = np.searchsorted(tail[order], np.arange(n + 3)).astype(np.int64)

    scale = max(cap.max(initial=0.0), 1.0)
    eps = 1e-12 * scale
    flow = _augment(start, head, rev, cap, s, t, eps)
    sink_side = _reaches_sink(start, head, rev, cap, t, eps)[:n]
    return float(flow), sink_side
