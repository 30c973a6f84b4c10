"""Compiled graph kernels shared by the exploration and percolation modules."""
import numba as nb
import numpy as np


@nb.njit(cache=True)
def jump_target(grid, gi, gj, periodic, u, dx, dy):
    rows, cols = grid.shape
    i = gi[u] + dx
    j = gj[u] + dy
    if periodic:
        i %= rows
        j %= cols
    elif i < 0 or j < 0 or i >= rows or j >= cols:
        return -1
    return grid[i, j]


@nb.njit(cache=True)
def kjump_bfs(grid, gi, gj, periodic, offsets, starts, start_propagates, can_visit, propagates):
    """Breadth-first k-jump closure.

    Start sites are visited unconditionally and propagate iff ``start_propagates``
    (or ``propagates`` for them).  Other sites are visited when they are
    ``can_visit`` and within one jump of a propagating visited site; they
    propagate further iff ``propagates``.  Returns the visited mask.
    """
    n = gi.shape[0]
    visited = np.zeros(n, dtype=np.bool_)
    queue = np.empty(n, dtype=np.int64)
    head = 0
    tail = 0
    for s in starts:
        if not visited[s]:
            visited[s] = True
            if start_propagates or propagates[s]:
                queue[tail] = s
                tail += 1
    while head < tail:
        u = queue[head]
        head += 1
        for r in range(offsets.shape[0]):
            w = jump_target(grid, gi, gj, periodic, u, offsets[r, 0], offsets[r, 1])
            if w < 0 or visited[w] or not can_visit[w]:
                continue
            visited[w] = True
            if propagates[w]:
                queue[tail] = w
                tail += 1
    return visited


@nb.njit(cache=True)
def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


@nb.njit(cache=True)
def kjump_labels(grid, gi, gj, periodic, offsets, mask):
    """Union-find labels of ``mask`` under jumps in ``offsets`` (-1 off the mask)."""
    n = gi.shape[0]
    parent = np.arange(n)
    for u in range(n):
        if not mask[u]:
            continue
        for r in range(offsets.shape[0]):
            w = jump_target(grid, gi, gj, periodic, u, offsets[r, 0], offsets[r, 1])
            if w < 0 or not mask[w]:
                continue
            a = _find(parent, u)
            b = _find(parent, w)
            if a != b:
                if a < b:
                    parent[b] = a
                else:
                    parent[a] = b
    labels = np.full(n, -1, dtype=np.int64)
    remap = np.full(n, -1, dtype=np.int64)
    nl = 0
    for u in range(n):
        if mask[u]:
            r = _find(parent, u)
            if remap[r] < 0:
                remap[r] = nl
                nl += 1
            labels[u] = remap[r]
    return labels


@nb.njit(cache=True)
def edge_labels(n, edges, open_edge, site_mask):
    """Union-find labels over open edges; sites off ``site_mask`` get -1."""
    parent = np.arange(n)
    for e in range(edges.shape[0]):
        if not open_edge[e]:
            continue
        a = _find(parent, edges[e, 0])
        b = _find(parent, edges[e, 1])
        if a != b:
            if a < b:
                parent[b] = a
            else:
                parent[a] = b
    labels = np.full(n, -1, dtype=np.int64)
    remap = np.full(n, -1, dtype=np.int64)
    nl = 0
    for u in range(n):
        if site_mask[u]:
            r = _find(parent, u)
            if remap[r] < 0:
                remap[r] = nl
                nl += 1
            labels[u] = remap[r]
    return labels
