from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import logsumexp

from ._kernels import hungarian


class DistanceError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class CostKind(str, Enum):
    SQUARED_HALVED = "squared_halved"
    UNSQUARED = "unsquared"


@dataclass
class Matching:
    """Bijection ``permutation[i]``: partner in the second set of point ``i``."""
    permutation: np.ndarray
    cost: float


@dataclass
class ApproxMatching(Matching):
    iterations: int = 0
    residual: float = 0.0
    reg: float = 0.0


def _points(s) -> np.ndarray:
    data = getattr(s, "points", getattr(s, "data", s))
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise DistanceError(f"expected an N x d point array, got shape {arr.shape}")
    return arr


def cost_matrix(s1, s2, kind=CostKind.SQUARED_HALVED) -> np.ndarray:
    a, b = _points(s1), _points(s2)
    sq = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)
    return 0.5 * sq if CostKind(kind) is CostKind.SQUARED_HALVED else np.sqrt(sq)


def _check_sizes(a, b):
    if len(a) != len(b):
        raise DistanceError(f"EMD needs equally sized sets, got {len(a)} and {len(b)}")
    if len(a) == 0:
        raise DistanceError("EMD of empty sets")


def matched_cost(s1, s2, permutation, kind=CostKind.SQUARED_HALVED) -> float:
    a, b = _points(s1), _points(s2)
    d = a - b[np.asarray(permutation)]
    sq = (d ** 2).sum(axis=1)
    per = 0.5 * sq if CostKind(kind) is CostKind.SQUARED_HALVED else np.sqrt(sq)
    return float(per.sum())


def emd_exact(s1, s2, kind=CostKind.SQUARED_HALVED) -> Matching:
    """Optimal bijection between two equal-size sets (Hungarian method)."""
    a, b = _points(s1), _points(s2)
    _check_sizes(a, b)
    perm = hungarian(cost_matrix(a, b, kind))
    return Matching(perm, matched_cost(a, b, perm, kind))


def emd_brute_force(s1, s2, kind=CostKind.SQUARED_HALVED) -> Matching:
    """Minimum over all N! bijections; for N up to about 8."""
    a, b = _points(s1), _points(s2)
    _check_sizes(a, b)
    c = cost_matrix(a, b, kind)
    rows = np.arange(len(a))
    best, best_perm = np.inf, None
    for perm in itertools.permutations(rows):
        total = c[rows, perm].sum()
        if total < best:
            best, best_perm = total, np.array(perm)
    return Matching(best_perm, float(best))


def sinkhorn_plan(c: np.ndarray, reg: float, max_iters: int, tol: float):
    """Log-domain Sinkhorn with uniform marginals.

    Returns ``(plan, iterations, residual)`` where the residual is the L1
    violation of the row marginal (columns are exact after each sweep).
    """
    n, m = c.shape
    log_a, log_b = -np.log(n), -np.log(m)
    f = np.zeros(n)
    g = np.zeros(m)
    residual = np.inf
    for it in range(1, max_iters + 1):
        f = reg * (log_a - logsumexp((g[None, :] - c) / reg, axis=1))
        g = reg * (log_b - logsumexp((f[:, None] - c) / reg, axis=0))
        if it % 10 == 0 or it == max_iters:
            log_plan = (f[:, None] + g[None, :] - c) / reg
            residual = float(np.abs(np.exp(logsumexp(log_plan, axis=1)) - 1.0 / n).sum())
            if residual < tol:
                return np.exp(log_plan), it, residual
    raise ConvergenceError(f"Sinkhorn did not converge in {max_iters} iterations "
                           f"(marginal residual {residual:.3g})", residual)


def round_plan(plan: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Round a transport plan to a permutation.

    Every row proposes its argmax column.  A column claimed by several rows
    goes to the claimant with the largest plan mass; the losing rows and the
    unclaimed columns are then re-assigned optimally among themselves.
    """
    n = plan.shape[0]
    choice = np.argmax(plan, axis=1)
    strength = plan[np.arange(n), choice]
    perm = np.full(n, -1)
    taken = np.zeros(n, dtype=bool)
    for i in np.argsort(-strength, kind="stable"):
        j = choice[i]
        if not taken[j]:
            perm[i] = j
            taken[j] = True
    rows = np.flatnonzero(perm < 0)
    if len(rows):
        cols = np.flatnonzero(~taken)
        sub = hungarian(np.ascontiguousarray(c[np.ix_(rows, cols)]))
        perm[rows] = cols[sub]
    return perm


def local_search(perm: np.ndarray, c: np.ndarray, neighbours: int = 8,
                 max_moves: int = 100000) -> np.ndarray:
    """Improve a bijection by exchanging partners along 2- and 3-cycles.

    2-cycles are searched over all row pairs; 3-cycles only through rows that
    currently own one of each row's ``neighbours`` cheapest columns.  Every
    accepted move strictly lowers the total cost.
    """
    perm = perm.copy()
    n = len(perm)
    k = min(neighbours, n)
    near = np.argsort(c, axis=1, kind="stable")[:, :k]
    rows = np.arange(n)[:, None, None]
    for _ in range(max_moves):
        d = c[:, perm]                      # d[i, j]: cost of row i taking row j's partner
        gain = d - np.diag(d)[:, None]
        pair = gain + gain.T
        i2, j2 = divmod(int(np.argmin(pair)), n)
        best = pair[i2, j2]
        owner = np.empty(n, dtype=np.int64)
        owner[perm] = np.arange(n)
        hop1 = owner[near]                  # (n, k)
        hop2 = owner[near[hop1]]            # (n, k, k)
        tri = gain[rows[:, :, 0], hop1][:, :, None] + gain[hop1[:, :, None], hop2] + gain[hop2, rows]
        t = int(np.argmin(tri))
        tri_best = tri.flat[t]
        tol = -1e-12 * max(1.0, float(np.abs(np.diag(d)).sum()))
        if min(best, tri_best) >= tol:
            break
        if best <= tri_best:
            perm[i2], perm[j2] = perm[j2], perm[i2]
        else:
            i, a_, b_ = np.unravel_index(t, tri.shape)
            j, l = hop1[i, a_], hop2[i, a_, b_]
            if len({i, j, l}) == 3:
                perm[i], perm[j], perm[l] = perm[j], perm[l], perm[i]
            else:  # degenerate cycle collapses to a swap
                perm[i2], perm[j2] = perm[j2], perm[i2]
                if best >= tol:
                    break
    return perm


def cancel_cycles(perm: np.ndarray, c: np.ndarray, candidates: np.ndarray,
                  max_rounds: int = 10000) -> np.ndarray:
    """Cancel negative exchange cycles on a sparse candidate graph.

    Row ``i`` may move to any column in ``candidates[i]``; the displaced
    owner continues the chain.  Negative cycles are found with Bellman-Ford
    relaxations from a virtual source and applied until none is left.
    """
    perm = perm.copy()
    n, k = candidates.shape
    rows = np.arange(n)
    src = np.repeat(rows, k)
    cols = candidates.ravel()
    for _ in range(max_rounds):
        owner = np.empty(n, dtype=np.int64)
        owner[perm] = rows
        dst = owner[cols]
        w = c[src, cols] - c[src, perm[src]]
        keep = dst != src
        s_, d_, w_ = src[keep], dst[keep], w[keep]
        current = c[rows, perm].sum()
        tol = 1e-12 * max(1.0, abs(current))
        dist = np.zeros(n)
        succ = np.full(n, -1)
        last = -1
        for _ in range(n):
            reach = w_ + dist[d_]
            best = np.full(n, np.inf)
            np.minimum.at(best, s_, reach)
            better = best < dist - tol
            if not better.any():
                return perm
            hit = np.flatnonzero((reach <= best[s_]) & better[s_])
            succ[s_[hit]] = d_[hit]
            dist = np.where(better, best, dist)
            last = int(np.flatnonzero(better)[0])
        v = last
        for _ in range(n):  # n hops from a still-improving node land on a cycle
            v = succ[v]
        cycle = [v]
        u = succ[v]
        while u != v:
            cycle.append(u)
            u = succ[u]
        new = perm.copy()
        for t, r in enumerate(cycle):
            new[r] = perm[cycle[(t + 1) % len(cycle)]]
        if c[rows, new].sum() >= current - tol:
            return perm
        perm = new
    return perm


def emd_approx(s1, s2, kind=CostKind.SQUARED_HALVED, epsilon: float = 0.01,
               max_iters: int = 20000, tol: float = 1e-3, candidates: int = 4) -> ApproxMatching:
    """Entropic-regularized EMD rounded to a feasible bijection.

    ``epsilon`` is relative to the mean pairwise cost, so the result does not
    depend on the units of the clouds.  After rounding, exchange cycles are
    cancelled over each row's ``candidates`` heaviest plan entries and
    ``candidates`` cheapest columns, then polished by 2-/3-cycle search.
    The returned cost belongs to an actual bijection and therefore never
    undercuts :func:`emd_exact`.
    """
    a, b = _points(s1), _points(s2)
    _check_sizes(a, b)
    if not epsilon > 0:
        raise DistanceError("epsilon must be positive")
    c = cost_matrix(a, b, kind)
    scale = c.mean()
    if scale == 0.0:
        perm = np.arange(len(a))
        return ApproxMatching(perm, 0.0, 0, 0.0, 0.0)
    reg = epsilon * scale
    plan, iters, residual = sinkhorn_plan(c, reg, max_iters, tol)
    perm = round_plan(plan, c)
    if candidates > 0:
        k = min(candidates, len(a))
        cand = np.concatenate([np.argsort(-plan, axis=1, kind="stable")[:, :k],
                               np.argsort(c, axis=1, kind="stable")[:, :k]], axis=1)
        perm = cancel_cycles(perm, c, cand)
    perm = local_search(perm, c)
    return ApproxMatching(perm, matched_cost(a, b, perm, kind), iters, residual, reg)


def emd_grad(s_pred, s_target, matching: Matching, kind=CostKind.SQUARED_HALVED) -> np.ndarray:
    """Gradient of the matched cost w.r.t. ``s_pred`` with the matching held fixed."""
    x, y = _points(s_pred), _points(s_target)
    perm = np.asarray(matching.permutation)
    if len(perm) != len(x) or len(y) != len(x):
        raise DistanceError(f"stale matching: {len(perm)} entries for sets of {len(x)} and {len(y)}")
    d = x - y[perm]
    if CostKind(kind) is CostKind.SQUARED_HALVED:
        return d
    norm = np.sqrt((d ** 2).sum(axis=1, keepdims=True))
    safe = np.where(norm > 0, norm, 1.0)
    return np.where(norm > 0, d / safe, 0.0)  # coincident pairs: zero subgradient
