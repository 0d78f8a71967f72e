"""Compiled kernels: Kuhn-Munkres assignment and a median-split k-d tree.

All kernels release the GIL so a thread pool can fan them out over a batch.
"""
import numpy as np
from numba import njit

LEAF_SIZE = 16


@njit(cache=True, nogil=True)
def hungarian(cost):
    """Minimum-cost perfect assignment on a square matrix.

    Shortest-augmenting-path Hungarian method with row/column potentials,
    O(n^3). Returns ``perm`` with row ``i`` assigned to column ``perm[i]``.
    """
    n = cost.shape[0]
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)   # p[j]: row matched to column j (1-based, 0 = free)
    way = np.zeros(n + 1, dtype=np.int64)
    minv = np.empty(n + 1)
    used = np.empty(n + 1, dtype=np.bool_)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv[:] = inf
        used[:] = False
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    perm = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        perm[p[j] - 1] = j - 1
    return perm


@njit(cache=True, nogil=True)
def build_kdtree(points, leaf_size):
    """Build a k-d tree splitting on the widest axis at the median.

    Returns ``(order, start, stop, dim, split, left, right)``; node 0 is the
    root, leaves have ``dim == -1`` and own ``order[start:stop]``.
    """
    n = points.shape[0]
    order = np.arange(n)
    max_nodes = 2 * (n // max(leaf_size, 1) + 1) * 2 + 1
    start = np.zeros(max_nodes, dtype=np.int64)
    stop = np.zeros(max_nodes, dtype=np.int64)
    dim = np.full(max_nodes, -1, dtype=np.int64)
    split = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, dtype=np.int64)
    right = np.full(max_nodes, -1, dtype=np.int64)
    stack = np.empty(max_nodes, dtype=np.int64)
    start[0] = 0
    stop[0] = n
    count = 1
    top = 0
    stack[top] = 0
    top += 1
    while top > 0:
        top -= 1
        node = stack[top]
        s = start[node]
        e = stop[node]
        if e - s <= leaf_size:
            continue
        best_axis = 0
        best_extent = -1.0
        for a in range(points.shape[1]):
            lo = np.inf
            hi = -np.inf
            for k in range(s, e):
                c = points[order[k], a]
                if c < lo:
                    lo = c
                if c > hi:
                    hi = c
            if hi - lo > best_extent:
                best_extent = hi - lo
                best_axis = a
        if best_extent <= 0.0:
            continue  # all points coincide; keep as an oversized leaf
        seg = order[s:e].copy()
        keys = np.empty(e - s)
        for k in range(e - s):
            keys[k] = points[seg[k], best_axis]
        idx = np.argsort(keys, kind="mergesort")
        for k in range(e - s):
            order[s + k] = seg[idx[k]]
        mid = s + (e - s) // 2
        dim[node] = best_axis
        split[node] = points[order[mid], best_axis]
        lch = count
        rch = count + 1
        count += 2
        start[lch] = s
        stop[lch] = mid
        start[rch] = mid
        stop[rch] = e
        left[node] = lch
        right[node] = rch
        stack[top] = lch
        top += 1
        stack[top] = rch
        top += 1
    return order, start[:count], stop[:count], dim[:count], split[:count], left[:count], right[:count]


@njit(cache=True, nogil=True)
def query_kdtree(points, order, start, stop, dim, split, left, right, queries):
    """Exact nearest neighbour of every query; ties go to the lowest index.

    Returns ``(index, squared_distance)`` arrays.
    """
    m = queries.shape[0]
    d = points.shape[1]
    out_idx = np.empty(m, dtype=np.int64)
    out_d2 = np.empty(m)
    stack = np.empty(start.shape[0] + 1, dtype=np.int64)
    bounds = np.empty(start.shape[0] + 1)
    for q in range(m):
        best = np.inf
        best_i = -1
        top = 0
        stack[top] = 0
        bounds[top] = 0.0
        top += 1
        while top > 0:
            top -= 1
            node = stack[top]
            if bounds[top] > best:
                continue
            if dim[node] == -1:
                for k in range(start[node], stop[node]):
                    i = order[k]
                    d2 = 0.0
                    for a in range(d):
                        diff = queries[q, a] - points[i, a]
                        d2 += diff * diff
                    if d2 < best or (d2 == best and i < best_i):
                        best = d2
                        best_i = i
                continue
            diff = queries[q, dim[node]] - split[node]
            plane = diff * diff
            if diff < 0.0:
                near = left[node]
                far = right[node]
            else:
                near = right[node]
                far = left[node]
            # far child first so the near child is popped next
            stack[top] = far
            bounds[top] = plane
            top += 1
            stack[top] = near
            bounds[top] = 0.0
            top += 1
        out_idx[q] = best_i
        out_d2[q] = best
    return out_idx, out_d2
