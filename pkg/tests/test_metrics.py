import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.distance import jensenshannon

from helpers import brute_chamfer, brute_emd
from pcgen import metrics as M


def _hist(v):
    g = np.zeros((M.GRID,) * 3)
    g.reshape(-1)[: len(v)] = v
    return M.VoxelHistogram(g)


def _clouds(rng, m, n):
    return rng.uniform(-0.5, 0.5, size=(m, n, 3))


def test_origin_lands_in_center_bin():
    h = M.voxelize(np.zeros((1, 1, 3)))
    assert h.grid[14, 14, 14] == 1.0 and h.grid.sum() == 1.0


def test_upper_boundary_clamps_to_last_bin():
    h = M.voxelize(np.array([[[0.5, 0.5, -0.5]]]))
    assert h.grid[27, 27, 0] == 1.0


def test_outside_cube_is_error():
    with pytest.raises(M.MetricError):
        M.voxelize(np.array([[[0.5 + 1e-6, 0, 0]]]))
    M.voxelize(np.array([[[0.5 + 1e-10, 0, 0]]]))


def test_union_is_weighted_mix(rng):
    a, b = _clouds(rng, 3, 40), _clouds(rng, 5, 40)
    mixed = (3 * M.voxelize(a).grid + 5 * M.voxelize(b).grid) / 8
    assert np.allclose(M.voxelize(np.concatenate([a, b])).grid, mixed, atol=1e-15)


def test_uniform_points_fill_bins_evenly():
    pts = np.random.default_rng(5).uniform(-0.5, 0.5, size=(1, 1_000_000, 3))
    h = M.voxelize(pts).grid
    p = M.GRID ** -3
    se = math.sqrt(p * (1 - p) / 1_000_000)
    z = np.abs(h - p) / se
    # per-bin 3-sigma band: a Gaussian approximation leaves ~0.27% of bins outside
    assert np.mean(z > 3) < 0.006
    assert z.max() < 5.5


def test_jsd_identity_and_disjoint():
    p = _hist([0.25, 0.25, 0.5])
    assert M.jsd(p, p) == 0.0
    q = _hist([0, 0, 0, 0.5, 0.5])
    assert abs(M.jsd(p, q) - math.log(2)) < 1e-12


def test_jsd_matches_scipy_oracle():
    p, q = [0.5, 0.5, 0.0], [0.0, 0.5, 0.5]
    expected = jensenshannon(p, q) ** 2
    assert M.jsd(_hist(p), _hist(q)) == pytest.approx(expected, abs=1e-12)
    assert M.jsd(_hist(p), _hist(q)) == pytest.approx(0.346574, abs=1e-6)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=6, max_size=6), st.lists(st.floats(0, 1), min_size=6, max_size=6))
def test_jsd_symmetric_and_bounded(a, b):
    a, b = np.array(a) + 1e-3, np.array(b) + 1e-3
    p, q = _hist(a / a.sum()), _hist(b / b.sum())
    d = M.jsd(p, q)
    assert abs(d - M.jsd(q, p)) <= 1e-12
    assert -1e-15 <= d <= math.log(2) + 1e-12
    assert d == pytest.approx(jensenshannon(a / a.sum(), b / b.sum()) ** 2, abs=1e-12)


def test_jsd_rejects_unnormalized():
    g = np.zeros(10)
    g[0] = 2.0
    with pytest.raises(M.MetricError):
        M.jsd(g, g)


def _brute_d(x, y, kind):
    if kind == "emd":
        return brute_emd(x, y, "unsquared") / len(x)
    return brute_chamfer(x, y) / len(x)


@pytest.mark.parametrize("kind", ["cd", "emd"])
def test_mmd_and_coverage_match_brute_force(rng, kind):
    s, r = _clouds(rng, 5, 6), _clouds(rng, 4, 6)
    d = np.array([[_brute_d(x, y, kind) for y in r] for x in s])
    assert M.mmd(s, r, kind) == pytest.approx(d.min(0).mean(), abs=1e-12)
    assert M.coverage(s, r, kind) == 100 * len(set(d.argmin(1))) / 4
    s3, r3 = s[:3], r[:3]
    d3 = d[:3, :3]
    assert M.mmd(s3, r3, kind) == pytest.approx(np.mean([min(d3[i, j] for i in range(3)) for j in range(3)]), abs=1e-12)


@pytest.mark.parametrize("kind", ["cd", "emd"])
def test_mmd_coverage_trivia(rng, kind):
    r = _clouds(rng, 4, 16)
    s = np.concatenate([r, _clouds(rng, 3, 16)])
    assert M.mmd(s, r, kind) == 0.0
    assert M.coverage(r, r, kind) == 100.0
    assert M.coverage(np.repeat(r[:1], 6, axis=0), r, kind) == 25.0
    assert M.mmd(r[:1], r[1:2], kind) == M.cloud_distance(r[0], r[1], kind)
    with pytest.raises(M.MetricError):
        M.mmd(np.zeros((0, 16, 3)), r, kind)


def test_pairwise_deduplicates_without_changing_values(rng):
    r = _clouds(rng, 3, 12)
    s = np.concatenate([r[:1]] * 4 + [r[1:]])
    d = M.pairwise(s, r, "emd")
    direct = np.array([[M.cloud_distance(x, y, "emd") for y in r] for x in s])
    assert np.array_equal(d, direct)


def test_identity_generator_report(rng):
    ref = M.normalize_samples(_clouds(rng, 6, 32))
    rep = M.evaluate_generator(M.FixedSetGenerator(ref), ref, multiplier=1, repeats=1, rng=np.random.default_rng(0))
    assert rep.cov_cd == 100 and rep.cov_emd == 100
    assert rep.mmd_cd < 1e-12 and rep.mmd_emd < 1e-12 and rep.jsd < 1e-12


def test_memorization_beats_noise():
    from pcgen.pointcloud import split, synth_families

    ds = split(synth_families(["sphere", "torus", "chair"], 20, n_points=64), seed=0)
    train, test = ds.subset("train"), ds.subset("test")
    rng = np.random.default_rng(0)
    mem = M.evaluate_generator(M.MemorizationBaseline(train), test, rng=rng, metrics=("jsd",))
    noise = M.evaluate_generator(M.UniformNoiseGenerator(64), test, rng=rng, metrics=("jsd",))
    assert mem.jsd < noise.jsd


def test_evaluation_is_deterministic_and_serializable(rng):
    ref = M.normalize_samples(_clouds(rng, 4, 16))
    gen = M.UniformNoiseGenerator(16)
    a = M.evaluate_generator(gen, ref, multiplier=2, repeats=2, rng=np.random.default_rng(3))
    b = M.evaluate_generator(gen, ref, multiplier=2, repeats=2, rng=np.random.default_rng(3))
    assert a == b
    text = a.to_text()
    assert {line.split("=")[0] for line in text.splitlines()} >= set(M.ALL_METRICS)
    assert M.EvalReport.from_text(text) == a
    assert 0 <= a.cov_emd <= 100 and 0 <= a.jsd <= math.log(2) and a.mmd_cd >= 0


def test_non_finite_samples_name_the_repeat(rng):
    class Bad:
        calls = 0

        def sample(self, count, rng):
            Bad.calls += 1
            out = np.zeros((count, 8, 3)) + np.linspace(-0.1, 0.1, 8)[:, None]
            if Bad.calls == 2:
                out[0, 0, 0] = np.nan
            return out

    with pytest.raises(M.EvaluationError, match="repeat 1"):
        M.evaluate_generator(Bad(), _clouds(rng, 2, 8), repeats=3, metrics=("jsd",))
