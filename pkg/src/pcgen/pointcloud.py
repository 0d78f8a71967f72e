"""Point clouds, ASCII PLY I/O, normalization, splits and synthetic shapes."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .rng import make_rng

SPLITS = ("train", "val", "test")


class PointCloudError(ValueError):
    pass


class PlyError(PointCloudError):
    pass


@dataclass
class PointCloud:
    points: np.ndarray
    label: str | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise PointCloudError(f"points must be N x 3, got {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            raise PointCloudError("point cloud has non-finite coordinates")

    def __len__(self):
        return len(self.points)


@dataclass
class Dataset:
    clouds: list[PointCloud]
    split: list[str] | None = None

    def __len__(self):
        return len(self.clouds)

    @property
    def labels(self) -> list[str | None]:
        return [c.label for c in self.clouds]

    def array(self) -> np.ndarray:
        return np.stack([c.points for c in self.clouds])

    def subset(self, name: str) -> "Dataset":
        if self.split is None:
            raise PointCloudError("dataset has not been split")
        return Dataset([c for c, s in zip(self.clouds, self.split) if s == name])


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def normalize_points(points: np.ndarray) -> np.ndarray:
    """Center at the centroid and scale the farthest point to norm 0.5."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 0:
        raise PointCloudError("cannot normalize an empty cloud")
    centered = points - points.mean(axis=0)
    radius = np.sqrt((centered ** 2).sum(axis=1)).max()
    if not radius > 1e-12:
        raise PointCloudError("degenerate cloud: all points coincide")
    return centered * (0.5 / radius)


def normalize(cloud: PointCloud) -> PointCloud:
    return PointCloud(normalize_points(cloud.points), cloud.label)


def normalize_dataset(dataset: Dataset) -> Dataset:
    return Dataset([normalize(c) for c in dataset.clouds], dataset.split)


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------

def split(dataset: Dataset, fractions=(0.85, 0.05, 0.10), seed: int = 0) -> Dataset:
    """Stratified train/val/test assignment, deterministic per seed."""
    if len(dataset) == 0:
        raise PointCloudError("cannot split an empty dataset")
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise PointCloudError(f"split fractions must be three non-negative numbers summing to 1: {fractions}")
    rng = make_rng(seed)
    assignment = [""] * len(dataset)
    by_label: dict = {}
    for i, c in enumerate(dataset.clouds):
        by_label.setdefault(c.label, []).append(i)
    for label in sorted(by_label, key=lambda x: "" if x is None else str(x)):
        idx = np.array(by_label[label])
        idx = idx[rng.permutation(len(idx))]
        n = len(idx)
        n_train = int(round(fractions[0] * n))
        n_val = min(int(round(fractions[1] * n)), n - n_train)
        for k, i in enumerate(idx):
            assignment[i] = "train" if k < n_train else "val" if k < n_train + n_val else "test"
    return Dataset(list(dataset.clouds), assignment)


# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------

def save_ply(cloud: PointCloud, path) -> None:
    pts = cloud.points
    lines = ["ply", "format ascii 1.0"]
    if cloud.label is not None:
        lines.append(f"comment label {cloud.label}")
    lines += [f"element vertex {len(pts)}", "property float x", "property float y",
              "property float z", "end_header"]
    lines += [f"{x:.9g} {y:.9g} {z:.9g}" for x, y, z in pts]
    Path(path).write_text("\n".join(lines) + "\n")


def load_ply(path) -> PointCloud:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise PlyError(f"{path}: missing 'ply' magic")
    elements: list[tuple[str, int, list[str]]] = []
    label = None
    fmt = None
    pos = 1
    while True:
        if pos >= len(lines):
            raise PlyError(f"{path}: header has no end_header")
        tok = lines[pos].split()
        pos += 1
        if not tok:
            continue
        if tok[0] == "end_header":
            break
        if tok[0] == "format":
            fmt = tok[1:]
        elif tok[0] == "comment":
            if len(tok) >= 3 and tok[1] == "label":
                label = " ".join(tok[2:])
        elif tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise PlyError(f"{path}: malformed element line {lines[pos - 1]!r}")
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise PlyError(f"{path}: property before any element")
            if tok[1] == "list":
                elements[-1][2].append("__list__")
            else:
                elements[-1][2].append(tok[-1])
        elif tok[0] == "obj_info":
            continue
        else:
            raise PlyError(f"{path}: unknown header line {lines[pos - 1]!r}")
    if fmt != ["ascii", "1.0"]:
        raise PlyError(f"{path}: only 'format ascii 1.0' is supported, got {fmt}")
    body = [ln for ln in lines[pos:] if ln.strip()]
    cursor = 0
    points = None
    for name, count, props in elements:
        rows = body[cursor: cursor + count]
        if len(rows) != count:
            raise PlyError(f"{path}: element {name} truncated ({len(rows)} of {count} rows)")
        cursor += count
        if name != "vertex":
            continue
        if count == 0:
            raise PlyError(f"{path}: empty vertex element")
        try:
            cols = [props.index(a) for a in ("x", "y", "z")]
        except ValueError:
            raise PlyError(f"{path}: vertex element lacks x/y/z properties") from None
        if "__list__" in props:
            raise PlyError(f"{path}: list properties on vertices are not supported")
        try:
            table = np.array([[float(v) for v in r.split()] for r in rows])
        except ValueError as exc:
            raise PlyError(f"{path}: bad vertex value ({exc})") from None
        if table.ndim != 2 or table.shape[1] != len(props):
            raise PlyError(f"{path}: vertex rows do not match {len(props)} properties")
        points = table[:, cols]
    if points is None:
        raise PlyError(f"{path}: no vertex element")
    if not np.all(np.isfinite(points)):
        raise PlyError(f"{path}: non-finite vertex coordinates")
    return PointCloud(points, label)


def save_dataset(clouds: Sequence[PointCloud], directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, c in enumerate(clouds):
        p = directory / f"cloud_{i:05d}.ply"
        save_ply(c, p)
        paths.append(p)
    return paths


def load_dataset(directory) -> Dataset:
    paths = sorted(Path(directory).glob("*.ply"))
    if not paths:
        raise PlyError(f"{directory}: no .ply files")
    return Dataset([load_ply(p) for p in paths])


# ---------------------------------------------------------------------------
# synthetic shapes
# ---------------------------------------------------------------------------

FAMILIES = ("sphere", "box", "torus", "chair")

DEFAULT_RANGES = {
    "sphere": {"radius": (0.5, 1.5), "aspect": (0.6, 1.4)},
    "box": {"width": (0.5, 1.5), "depth": (0.5, 1.5), "height": (0.2, 1.5)},
    "torus": {"major": (0.7, 1.0), "minor": (0.15, 0.45)},
    "chair": {"seat": (0.8, 1.2), "seat_thickness": (0.06, 0.15), "leg_height": (0.5, 1.0),
              "leg_radius": (0.04, 0.09), "back_height": (0.4, 1.0), "leg_inset": (0.0, 0.12)},
}


@dataclass
class ShapeFamilySpec:
    family: str
    n_points: int = 256
    seed: int = 0
    ranges: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise PointCloudError(f"unknown shape family {self.family!r}; choose from {FAMILIES}")
        if self.n_points < 1:
            raise PointCloudError("n_points must be >= 1")
        merged = dict(DEFAULT_RANGES[self.family])
        unknown = set(self.ranges) - set(merged)
        if unknown:
            raise PointCloudError(f"unknown parameters for {self.family}: {sorted(unknown)}")
        merged.update(self.ranges)
        for name, (lo, hi) in merged.items():
            floor_ok = lo >= 0 if name == "leg_inset" else lo > 0
            if not (np.isfinite(lo) and np.isfinite(hi) and floor_ok and lo <= hi):
                raise PointCloudError(f"invalid range for {self.family}.{name}: ({lo}, {hi})")
        if self.family == "torus" and merged["minor"][1] >= merged["major"][0]:
            raise PointCloudError("torus minor radius must stay below the major radius")
        self.ranges = merged


# A patch is (surface(u, v) -> points, (u0, u1), (v0, v1), grid resolution).
Patch = tuple[Callable[[np.ndarray, np.ndarray], np.ndarray], tuple, tuple, int]


def _rect(origin, e1, e2) -> Patch:
    o, a, b = (np.asarray(v, dtype=float) for v in (origin, e1, e2))
    return (lambda u, v: o + u[:, None] * a + v[:, None] * b, (0.0, 1.0), (0.0, 1.0), 1)


def _box_patches(center, size) -> list[Patch]:
    c = np.asarray(center, dtype=float)
    sx, sy, sz = size
    lo = c - np.array(size) / 2
    ex, ey, ez = np.array([sx, 0, 0]), np.array([0, sy, 0]), np.array([0, 0, sz])
    return [_rect(lo, ex, ey), _rect(lo + ez, ex, ey), _rect(lo, ex, ez),
            _rect(lo + ey, ex, ez), _rect(lo, ey, ez), _rect(lo + ex, ey, ez)]


def _cylinder_side(cx, cy, z0, z1, r) -> Patch:
    def f(u, v):
        return np.stack([cx + r * np.cos(u), cy + r * np.sin(u), z0 + v * (z1 - z0)], axis=1)
    return (f, (0.0, 2 * math.pi), (0.0, 1.0), 12)


def _shape_patches(family: str, p: dict) -> list[Patch]:
    if family == "sphere":
        r, asp = p["radius"], p["aspect"]

        def f(u, v):
            return r * np.stack([np.sin(v) * np.cos(u), np.sin(v) * np.sin(u), asp * np.cos(v)], axis=1)
        return [(f, (0.0, 2 * math.pi), (0.0, math.pi), 24)]
    if family == "box":
        return _box_patches((0, 0, 0), (p["width"], p["depth"], p["height"]))
    if family == "torus":
        big, small = p["major"], p["minor"]

        def f(u, v):
            ring = big + small * np.cos(v)
            return np.stack([ring * np.cos(u), ring * np.sin(u), small * np.sin(v)], axis=1)
        return [(f, (0.0, 2 * math.pi), (0.0, 2 * math.pi), 24)]
    # chair: seat slab, backrest slab, four cylindrical legs
    s, t, lh = p["seat"], p["seat_thickness"], p["leg_height"]
    lr, bh, inset = p["leg_radius"], p["back_height"], p["leg_inset"]
    patches = _box_patches((0, 0, lh + t / 2), (s, s, t))
    patches += _box_patches((0, -s / 2 + t / 2, lh + t + bh / 2), (s, t, bh))
    off = s / 2 - lr - inset * s
    for cx in (-off, off):
        for cy in (-off, off):
            patches.append(_cylinder_side(cx, cy, 0.0, lh, lr))
    return patches


def _triangulate(patches: list[Patch]):
    """Return per-triangle (patch_index, uv corners[3, 2], 3D area)."""
    owners, uvs, areas = [], [], []
    for k, (f, (u0, u1), (v0, v1), res) in enumerate(patches):
        uu, vv = np.meshgrid(np.linspace(u0, u1, res + 1), np.linspace(v0, v1, res + 1), indexing="ij")
        guv = np.stack([uu, vv], axis=-1)
        gxyz = f(uu.ravel(), vv.ravel()).reshape(res + 1, res + 1, 3)
        for grid, bucket in ((guv, uvs), (gxyz, None)):
            c00, c10 = grid[:-1, :-1], grid[1:, :-1]
            c11, c01 = grid[1:, 1:], grid[:-1, 1:]
            tris = np.concatenate([np.stack([c00, c10, c11], axis=2).reshape(-1, 3, grid.shape[-1]),
                                   np.stack([c00, c11, c01], axis=2).reshape(-1, 3, grid.shape[-1])])
            if bucket is not None:
                bucket.append(tris)
            else:
                cross = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
                areas.append(0.5 * np.linalg.norm(cross, axis=1))
        owners.append(np.full(2 * res * res, k))
    return np.concatenate(owners), np.concatenate(uvs), np.concatenate(areas)


def sample_surface(patches: list[Patch], n: int, rng: np.random.Generator) -> np.ndarray:
    """Area-weighted triangle choice, then uniform barycentric coordinates.

    Barycentric interpolation happens in each patch's (u, v) domain and the
    result is pushed through the exact surface map, so points lie on the
    true surface rather than on the tessellation.
    """
    owners, uvs, areas = _triangulate(patches)
    keep = areas > 0
    owners, uvs, areas = owners[keep], uvs[keep], areas[keep]
    tri = rng.choice(len(areas), size=n, p=areas / areas.sum())
    r1 = np.sqrt(rng.uniform(size=n))
    r2 = rng.uniform(size=n)
    w = np.stack([1 - r1, r1 * (1 - r2), r1 * r2], axis=1)
    uv = np.einsum("nk,nkd->nd", w, uvs[tri])
    out = np.empty((n, 3))
    for k in np.unique(owners[tri]):
        sel = owners[tri] == k
        out[sel] = patches[k][0](uv[sel, 0], uv[sel, 1])
    return out


def _draw_params(spec: ShapeFamilySpec, rng) -> dict:
    return {name: float(rng.uniform(lo, hi)) for name, (lo, hi) in sorted(spec.ranges.items())}


def synth_generate(spec: ShapeFamilySpec, count: int) -> Dataset:
    """``count`` clouds of one family, sampled uniformly by surface area."""
    if count < 1:
        raise PointCloudError("count must be >= 1")
    rng = make_rng(spec.seed)
    clouds = []
    for _ in range(count):
        params = _draw_params(spec, rng)
        pts = sample_surface(_shape_patches(spec.family, params), spec.n_points, rng)
        clouds.append(PointCloud(pts, spec.family))
    return Dataset(clouds)


def synth_families(families: Sequence[str], per_family: int, n_points: int = 256,
                   seed: int = 0, normalized: bool = True) -> Dataset:
    """Several families concatenated; each family gets its own seed offset."""
    clouds = []
    for k, fam in enumerate(families):
        ds = synth_generate(ShapeFamilySpec(fam, n_points=n_points, seed=seed * 1000 + k), per_family)
        clouds += ds.clouds
    out = Dataset(clouds)
    return normalize_dataset(out) if normalized else out
