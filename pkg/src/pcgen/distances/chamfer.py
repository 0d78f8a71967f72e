from __future__ import annotations

import numpy as np

from ._kernels import LEAF_SIZE, build_kdtree, query_kdtree
from .emd import DistanceError, _points


class KDTree:
    """Static k-d tree, median split on the widest axis, rebuilt per call site."""

    def __init__(self, points, leaf_size: int = LEAF_SIZE):
        self.points = np.ascontiguousarray(_points(points))
        if len(self.points) == 0:
            raise DistanceError("cannot index an empty set")
        self._arrays = build_kdtree(self.points, leaf_size)

    def query(self, queries) -> tuple[np.ndarray, np.ndarray]:
        """Nearest index and squared distance for each query row."""
        q = np.ascontiguousarray(_points(queries))
        return query_kdtree(self.points, *self._arrays, q)


def nearest(s_from, s_to) -> tuple[np.ndarray, np.ndarray]:
    return KDTree(s_to).query(s_from)


def _check(a, b):
    if len(a) == 0 or len(b) == 0:
        raise DistanceError("Chamfer distance of an empty set")


def chamfer(s1, s2) -> float:
    """Sum of squared nearest-neighbour distances, in both directions."""
    a, b = _points(s1), _points(s2)
    _check(a, b)
    _, d_ab = nearest(a, b)
    _, d_ba = nearest(b, a)
    return float(d_ab.sum() + d_ba.sum())


def chamfer_brute_force(s1, s2) -> float:
    """O(N M) reference evaluated in blocks."""
    a, b = _points(s1), _points(s2)
    _check(a, b)
    row_min = np.full(len(a), np.inf)
    col_min = np.full(len(b), np.inf)
    for lo in range(0, len(a), 256):
        block = ((a[lo:lo + 256, None, :] - b[None, :, :]) ** 2).sum(axis=-1)
        row_min[lo:lo + 256] = block.min(axis=1)
        col_min = np.minimum(col_min, block.min(axis=0))
    return float(row_min.sum() + col_min.sum())


def chamfer_grad(s_pred, s_target) -> np.ndarray:
    """Gradient w.r.t. ``s_pred`` with both nearest-neighbour maps held fixed."""
    x, y = _points(s_pred), _points(s_target)
    _check(x, y)
    nn_xy, _ = nearest(x, y)
    nn_yx, _ = nearest(y, x)
    g = 2.0 * (x - y[nn_xy])
    np.add.at(g, nn_yx, 2.0 * (x[nn_yx] - y))
    return g
