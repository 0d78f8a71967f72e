"""Generative-quality metrics: occupancy JSD, MMD and coverage under CD / EMD.

Conventions (see README): EMD inside MMD/COV is the unsquared-cost optimal
matching divided by N; Chamfer is the sum of squared nearest-neighbour
distances divided by each set's size, per direction.  MMD averages, over
reference clouds, the distance to the closest sample; COV is the percentage of
reference clouds that are the nearest reference of at least one sample.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .distances import CostKind, emd_exact, nearest
from .parallel import ordered_map
from .pointcloud import Dataset

GRID = 28
CUBE_TOL = 1e-9
KINDS = ("cd", "emd")
ALL_METRICS = ("jsd", "mmd_cd", "mmd_emd", "cov_cd", "cov_emd")


class MetricError(ValueError):
    pass


class EvaluationError(FloatingPointError):
    pass


def as_array(clouds) -> np.ndarray:
    """Stack a Dataset, list of PointClouds/arrays or an [M, N, 3] array."""
    if isinstance(clouds, Dataset):
        clouds = clouds.clouds
    if isinstance(clouds, np.ndarray):
        arr = clouds if clouds.ndim == 3 else clouds[None]
    else:
        arr = np.stack([getattr(c, "points", c) for c in clouds]) if len(clouds) else np.zeros((0, 0, 3))
    return np.asarray(arr, dtype=np.float64)


# ---------------------------------------------------------------------------
# occupancy grid and JSD
# ---------------------------------------------------------------------------

@dataclass
class VoxelHistogram:
    grid: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        if self.grid.shape != (GRID,) * 3 or np.any(self.grid < 0):
            raise MetricError("voxel histogram must be a non-negative 28^3 grid")
        if self.normalized and abs(self.grid.sum() - 1.0) > 1e-9:
            raise MetricError("normalized histogram does not sum to 1")


def voxelize(clouds, normalized: bool = True) -> VoxelHistogram:
    pts = as_array(clouds).reshape(-1, 3)
    if len(pts) == 0:
        raise MetricError("nothing to voxelize")
    if not np.all(np.isfinite(pts)) or np.abs(pts).max() > 0.5 + CUBE_TOL:
        raise MetricError("points outside the [-0.5, 0.5]^3 cube; normalize first")
    idx = np.clip(np.floor((pts + 0.5) * GRID).astype(np.int64), 0, GRID - 1)
    flat = np.ravel_multi_index(idx.T, (GRID,) * 3)
    counts = np.bincount(flat, minlength=GRID ** 3).astype(np.float64).reshape((GRID,) * 3)
    return VoxelHistogram(counts / counts.sum() if normalized else counts, normalized)


def _kl_to_mixture(p: np.ndarray, m: np.ndarray) -> float:
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / m[nz])))


def jsd(p, q) -> float:
    """Jensen-Shannon divergence in nats between two normalized histograms."""
    a = p.grid if isinstance(p, VoxelHistogram) else np.asarray(p, dtype=np.float64)
    b = q.grid if isinstance(q, VoxelHistogram) else np.asarray(q, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"histogram shapes differ: {a.shape} vs {b.shape}")
    for h in (a, b):
        if np.any(h < 0) or abs(h.sum() - 1.0) > 1e-9:
            raise MetricError("jsd needs normalized histograms")
    m = 0.5 * (a + b)
    return 0.5 * _kl_to_mixture(a, m) + 0.5 * _kl_to_mixture(b, m)


def set_jsd(samples, reference) -> float:
    return jsd(voxelize(samples), voxelize(reference))


# ---------------------------------------------------------------------------
# cloud-to-cloud distances
# ---------------------------------------------------------------------------

def cloud_distance(a, b, kind: str) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if kind == "emd":
        return emd_exact(a, b, CostKind.UNSQUARED).cost / len(a)
    if kind == "cd":
        return float(nearest(a, b)[1].mean() + nearest(b, a)[1].mean())
    raise MetricError(f"unknown distance kind {kind!r}")


def _unique(arr: np.ndarray):
    """Distinct clouds (bitwise) and the inverse map; keeps first-occurrence order."""
    seen: dict[bytes, int] = {}
    inverse = np.empty(len(arr), dtype=np.int64)
    firsts = []
    for i, c in enumerate(arr):
        key = np.ascontiguousarray(c).tobytes()
        if key not in seen:
            seen[key] = len(firsts)
            firsts.append(i)
        inverse[i] = seen[key]
    return arr[firsts], inverse


def pairwise(samples, reference, kind: str, threads: int | None = None) -> np.ndarray:
    """Distance matrix [len(samples), len(reference)]; repeated clouds are computed once."""
    s, r = as_array(samples), as_array(reference)
    if len(s) == 0 or len(r) == 0:
        raise MetricError("empty sample or reference set")
    su, si = _unique(s)
    ru, ri = _unique(r)
    pairs = [(i, j) for i in range(len(su)) for j in range(len(ru))]
    vals = ordered_map(lambda ij: cloud_distance(su[ij[0]], ru[ij[1]], kind), pairs, threads)
    d = np.array(vals, dtype=np.float64).reshape(len(su), len(ru))
    return d[np.ix_(si, ri)]


def mmd_from_matrix(d: np.ndarray) -> float:
    return float(d.min(axis=0).mean())


def coverage_from_matrix(d: np.ndarray) -> float:
    return 100.0 * len(np.unique(d.argmin(axis=1))) / d.shape[1]


def mmd(sample_set, reference_set, kind: str = "emd", threads: int | None = None) -> float:
    return mmd_from_matrix(pairwise(sample_set, reference_set, kind, threads))


def coverage(sample_set, reference_set, kind: str = "emd", threads: int | None = None) -> float:
    return coverage_from_matrix(pairwise(sample_set, reference_set, kind, threads))


# ---------------------------------------------------------------------------
# evaluation protocol
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    jsd: float = float("nan")
    mmd_cd: float = float("nan")
    mmd_emd: float = float("nan")
    cov_cd: float = float("nan")
    cov_emd: float = float("nan")
    repeats: int = 1
    sample_multiplier: int = 1

    def to_text(self) -> str:
        lines = []
        for k, v in asdict(self).items():
            lines.append(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EvalReport":
        kinds = {f.name: f.type for f in fields(cls)}
        vals = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            k, _, v = line.partition("=")
            if k not in kinds:
                raise MetricError(f"unknown report key {k!r}")
            vals[k] = int(v) if kinds[k] in (int, "int") else float(v)
        return cls(**vals)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())


def normalize_samples(arr: np.ndarray) -> np.ndarray:
    """Per-cloud centering and scaling to max norm 0.5 (collapsed clouds are only centered)."""
    c = arr - arr.mean(axis=1, keepdims=True)
    r = np.sqrt((c ** 2).sum(-1)).max(axis=1)
    scale = np.where(r > 1e-12, 0.5 / np.maximum(r, 1e-300), 1.0)
    return c * scale[:, None, None]


def evaluate_generator(generator, comparison_set, multiplier: int = 3, repeats: int = 3,
                       rng: np.random.Generator | None = None, metrics=ALL_METRICS,
                       threads: int | None = None) -> EvalReport:
    """Sample ``multiplier * |set|`` clouds per repeat and average the metrics.

    ``generator`` is anything with ``sample(count, rng) -> [count, N, 3]``.
    """
    ref = as_array(comparison_set)
    if len(ref) == 0:
        raise MetricError("empty comparison set")
    # both sides through the same normalization, so identical clouds stay bit-identical
    ref = normalize_samples(ref)
    if multiplier < 1 or repeats < 1:
        raise MetricError("multiplier and repeats must be >= 1")
    unknown = set(metrics) - set(ALL_METRICS)
    if unknown:
        raise MetricError(f"unknown metrics {sorted(unknown)}")
    rng = np.random.default_rng(0) if rng is None else rng
    ref_hist = voxelize(ref)
    acc = {m: [] for m in metrics}
    for rep in range(repeats):
        raw = np.asarray(generator.sample(multiplier * len(ref), rng), dtype=np.float64)
        if not np.all(np.isfinite(raw)):
            raise EvaluationError(f"non-finite generated points in repeat {rep}")
        s = normalize_samples(raw)
        if "jsd" in acc:
            acc["jsd"].append(jsd(voxelize(s), ref_hist))
        for kind in KINDS:
            if f"mmd_{kind}" in acc or f"cov_{kind}" in acc:
                d = pairwise(s, ref, kind, threads)
                if f"mmd_{kind}" in acc:
                    acc[f"mmd_{kind}"].append(mmd_from_matrix(d))
                if f"cov_{kind}" in acc:
                    acc[f"cov_{kind}"].append(coverage_from_matrix(d))
    return EvalReport(**{k: float(np.mean(v)) for k, v in acc.items()},
                      repeats=repeats, sample_multiplier=multiplier)


# ---------------------------------------------------------------------------
# reference generators
# ---------------------------------------------------------------------------

class MemorizationBaseline:
    """Returns a random subset of the training clouds."""

    def __init__(self, train_set):
        self.clouds = as_array(train_set)

    def sample(self, count, rng):
        replace = count > len(self.clouds)
        return self.clouds[rng.choice(len(self.clouds), size=count, replace=replace)]


class UniformNoiseGenerator:
    def __init__(self, n_points: int = 256):
        self.n_points = n_points

    def sample(self, count, rng):
        return rng.uniform(-0.5, 0.5, size=(count, self.n_points, 3))


class RepeatingGenerator:
    """Emits the same cloud every time."""

    def __init__(self, cloud):
        self.cloud = np.asarray(getattr(cloud, "points", cloud), dtype=np.float64)

    def sample(self, count, rng):
        return np.repeat(self.cloud[None], count, axis=0)


class FixedSetGenerator:
    """Emits a fixed list of clouds in order, cycling if asked for more."""

    def __init__(self, clouds):
        self.clouds = as_array(clouds)

    def sample(self, count, rng):
        return self.clouds[np.arange(count) % len(self.clouds)]


__all__ = [
    "ALL_METRICS", "EvalReport", "EvaluationError", "FixedSetGenerator", "GRID",
    "MemorizationBaseline", "MetricError", "RepeatingGenerator",
    "UniformNoiseGenerator", "VoxelHistogram", "cloud_distance", "coverage", "evaluate_generator",
    "jsd", "mmd", "pairwise", "set_jsd", "voxelize",
]
