"""Operations on latent codes: interpolation, arithmetic, binary codes,
retrieval, a linear probe and cluster assignment."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class LatentError(ValueError):
    pass


def _vec(z, name="z") -> np.ndarray:
    z = np.asarray(getattr(z, "data", z), dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise LatentError(f"{name} has non-finite entries")
    return z


def _same_dim(*zs):
    if len({z.shape for z in zs}) != 1:
        raise LatentError(f"latent dimensions differ: {[z.shape for z in zs]}")


# ---------------------------------------------------------------------------
# interpolation / arithmetic
# ---------------------------------------------------------------------------

def interpolate(z1, z2, steps: int) -> list[np.ndarray]:
    """``(1 - t) z1 + t z2`` at ``t = k / (steps - 1)``; endpoints are exact."""
    a, b = _vec(z1, "z1"), _vec(z2, "z2")
    _same_dim(a, b)
    if steps < 2:
        raise LatentError("interpolation needs steps >= 2")
    return [(1.0 - k / (steps - 1)) * a + (k / (steps - 1)) * b for k in range(steps)]


def arithmetic(z_base, z_plus, z_minus) -> np.ndarray:
    # difference first, so that z_plus == z_minus leaves z_base untouched
    a, p, m = _vec(z_base), _vec(z_plus), _vec(z_minus)
    _same_dim(a, p, m)
    return a + (p - m)


# ---------------------------------------------------------------------------
# binary codes
# ---------------------------------------------------------------------------

@dataclass
class BinaryCode:
    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits)
        if not np.all((self.bits == 0) | (self.bits == 1)):
            raise LatentError("binary code entries must be 0 or 1")
        self.bits = self.bits.astype(np.uint8)

    def __str__(self):
        return "".join(map(str, self.bits.reshape(-1)))


def binarize(z, threshold: float = 0.5) -> BinaryCode:
    """Bit i is 1 iff z_i >= threshold."""
    return BinaryCode((_vec(z) >= threshold).astype(np.uint8))


def _bits(x) -> np.ndarray:
    return np.asarray(x.bits if isinstance(x, BinaryCode) else x)


# ---------------------------------------------------------------------------
# retrieval
# ---------------------------------------------------------------------------

def distances(query, gallery, metric: str = "hamming") -> np.ndarray:
    q = _bits(query).astype(np.float64)
    g = _bits(gallery).astype(np.float64)
    if g.ndim != 2 or len(g) == 0:
        raise LatentError("gallery must be a non-empty [M, d] array")
    if q.shape[-1] != g.shape[1]:
        raise LatentError(f"query width {q.shape[-1]} vs gallery width {g.shape[1]}")
    if metric == "hamming":
        return np.abs(g - q).sum(axis=1)
    if metric == "euclidean":
        return np.sqrt(((g - q) ** 2).sum(axis=1))
    if metric == "sqeuclidean":
        return ((g - q) ** 2).sum(axis=1)
    raise LatentError(f"unknown metric {metric!r}")


def retrieve(query_code, gallery_codes, k: int | None = None, metric: str = "hamming",
             exclude: int | None = None) -> np.ndarray:
    """Gallery indices ranked by distance; ties keep gallery order."""
    d = distances(query_code, gallery_codes, metric)
    order = np.argsort(d, kind="stable")
    if exclude is not None:
        order = order[order != exclude]
    return order if k is None else order[:k]


def average_precision(ranked_labels, label) -> float:
    """Mean of precision@rank over the ranks of the relevant items (0 if none)."""
    rel = np.asarray([r == label for r in ranked_labels], dtype=bool)
    if not rel.any():
        return 0.0
    hits = np.cumsum(rel)
    ranks = np.nonzero(rel)[0] + 1
    return float(np.mean(hits[rel] / ranks))


def _retrieval_setup(queries, gallery, gallery_labels, query_labels, exclude_self):
    gallery_labels = list(gallery_labels)
    if len(gallery_labels) != len(_bits(gallery)):
        raise LatentError("gallery labels and gallery differ in length")
    if query_labels is None:
        query_labels = gallery_labels
        exclude_self = True if exclude_self is None else exclude_self
    query_labels = list(query_labels)
    if len(query_labels) != len(_bits(queries)):
        raise LatentError("query labels and queries differ in length")
    return gallery_labels, query_labels, bool(exclude_self)


def retrieval_map(queries, gallery, gallery_labels, query_labels=None, metric: str = "hamming",
                  exclude_self: bool | None = None) -> float:
    """Mean average precision of ``queries`` against ``gallery``.

    Without ``query_labels`` the queries are the gallery itself and each
    query's own entry is left out of its ranking.
    """
    g_lab, q_lab, excl = _retrieval_setup(queries, gallery, gallery_labels, query_labels, exclude_self)
    q = _bits(queries)
    aps = []
    for i in range(len(q)):
        order = retrieve(q[i], gallery, metric=metric, exclude=i if excl else None)
        aps.append(average_precision([g_lab[j] for j in order], q_lab[i]))
    return float(np.mean(aps))


def precision_at_1(queries, gallery, gallery_labels, query_labels=None, metric: str = "hamming",
                   exclude_self: bool | None = None) -> float:
    g_lab, q_lab, excl = _retrieval_setup(queries, gallery, gallery_labels, query_labels, exclude_self)
    q = _bits(queries)
    hits = [g_lab[retrieve(q[i], gallery, 1, metric, i if excl else None)[0]] == q_lab[i] for i in range(len(q))]
    return float(np.mean(hits))


# ---------------------------------------------------------------------------
# linear probe
# ---------------------------------------------------------------------------

def linear_probe(train_codes, train_labels, test_codes, test_labels, epochs: int = 200,
                 l2: float = 1e-3, lr: float = 0.1) -> float:
    """One-vs-rest linear classifier (hinge loss + L2) fit by full-batch gradient descent.

    Features are standardized with training statistics; weights start at zero,
    so the result is deterministic.  Returns test accuracy.
    """
    x = np.asarray(train_codes, dtype=np.float64)
    xt = np.asarray(test_codes, dtype=np.float64)
    classes = sorted(set(train_labels))
    if len(classes) < 2:
        raise LatentError("the linear probe needs at least two classes")
    mean, std = x.mean(0), x.std(0)
    std = np.where(std > 0, std, 1.0)
    x, xt = (x - mean) / std, (xt - mean) / std
    index = {c: i for i, c in enumerate(classes)}
    y = -np.ones((len(x), len(classes)))
    y[np.arange(len(x)), [index[c] for c in train_labels]] = 1.0
    w = np.zeros((x.shape[1], len(classes)))
    b = np.zeros(len(classes))
    for _ in range(epochs):
        margin = y * (x @ w + b)
        active = (margin < 1.0) * -y / len(x)
        w -= lr * (x.T @ active + 2.0 * l2 * w)
        b -= lr * active.sum(0)
    pred = np.argmax(xt @ w + b, axis=1)
    return float(np.mean([classes[p] == t for p, t in zip(pred, test_labels)]))


# ---------------------------------------------------------------------------
# clustering
# ---------------------------------------------------------------------------

def cluster_assign(code) -> int | np.ndarray:
    """Argmax of the categorical head; ties go to the lowest index."""
    y = getattr(code, "y", code)
    if y is None:
        raise LatentError("code has no categorical head")
    y = np.asarray(getattr(y, "data", y), dtype=np.float64)
    out = np.argmax(y, axis=-1)
    return int(out) if out.ndim == 0 else out


def purity(clusters, labels) -> float:
    """Fraction of items whose cluster's majority label equals their own."""
    clusters, labels = np.asarray(clusters), np.asarray(labels)
    if len(clusters) != len(labels) or len(labels) == 0:
        raise LatentError("clusters and labels must be equal-length and non-empty")
    total = 0
    for c in np.unique(clusters):
        _, counts = np.unique(labels[clusters == c], return_counts=True)
        total += counts.max()
    return float(total / len(labels))


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def format_codes(codes, binary=None) -> str:
    """One line per cloud: space-separated floats, then a tab and the 0/1 string if given."""
    codes = np.atleast_2d(np.asarray(codes, dtype=np.float64))
    lines = []
    for i, z in enumerate(codes):
        line = " ".join(repr(float(v)) for v in z)
        if binary is not None:
            line += "\t" + str(binary[i] if isinstance(binary[i], BinaryCode) else BinaryCode(binary[i]))
        lines.append(line)
    return "\n".join(lines) + ("\n" if lines else "")


def parse_codes(text: str):
    codes, bits = [], []
    for line in text.splitlines():
        if not line.strip():
            continue
        head, _, tail = line.partition("\t")
        codes.append([float(v) for v in head.split()])
        if tail:
            bits.append([int(c) for c in tail.strip()])
    return np.array(codes), (np.array(bits, dtype=np.uint8) if bits else None)
