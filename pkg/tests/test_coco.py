import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ensamp.coco import (
    OccupancyGrid,
    RankDeficientError,
    back_project,
    bin_occupancy,
    coco_analyze,
    generate_points,
    pca,
    project,
)
from ensamp.config import KernelConfig
from ensamp.executor import Pilot
from ensamp.workflow import run_sal


def dense_pca(X):
    m = X.mean(axis=0)
    C = (X - m).T @ (X - m) / (len(X) - 1)
    vals, vecs = np.linalg.eig(C)
    order = np.argsort(-vals.real)
    return m, vals.real[order], vecs.real[:, order]


def brute_force_distances(occupied):
    """Nearest-sampled-bin distance for every unsampled bin, by exhaustive search."""
    sampled = np.argwhere(occupied)
    out = {}
    for idx in np.argwhere(~occupied):
        out[tuple(idx)] = min(math.dist(idx, s) for s in sampled)
    return out


def grid_from(occupied):
    occupied = np.asarray(occupied, bool)
    d = occupied.ndim
    return OccupancyGrid(np.zeros(d), np.ones(d), occupied.shape[0], occupied.copy())


# -- pca ----------------------------------------------------------------------

def test_line_in_plane():
    t = np.linspace(-2, 3, 11)
    X = np.column_stack([t, 2 * t]) + np.array([1.0, -1.0])
    mean, basis, spectrum = pca(X, 1)
    np.testing.assert_allclose(basis[:, 0], np.array([1, 2]) / math.sqrt(5), atol=1e-12)
    assert abs(spectrum[1]) < 1e-12
    with pytest.raises(RankDeficientError, match="achievable rank is 1") as exc:
        pca(X, 2)
    assert exc.value.achievable == 1


def test_cross_is_deterministic():
    X = np.array([[1.0, 0], [-1, 0], [0, 1], [0, -1]])
    a = pca(X, 2)
    b = pca(X, 2)
    assert a[2][0] == pytest.approx(a[2][1])
    np.testing.assert_array_equal(a[1], b[1])
    np.testing.assert_allclose(a[1].T @ a[1], np.eye(2), atol=1e-10)
    for col in a[1].T:
        assert col[np.argmax(np.abs(col))] > 0


def test_random_sample_matches_dense_eigensolve():
    X = np.random.default_rng(0).normal(size=(20, 6)) * np.arange(1, 7)
    mean, basis, spectrum = pca(X, 4)
    m, vals, vecs = dense_pca(X)
    np.testing.assert_allclose(mean, m, atol=1e-12)
    np.testing.assert_allclose(spectrum, vals, atol=1e-8)
    for j in range(4):
        v = vecs[:, j] * np.sign(vecs[np.argmax(np.abs(vecs[:, j])), j])
        np.testing.assert_allclose(basis[:, j], v, atol=1e-8)


def test_pca_preconditions():
    with pytest.raises(ValueError):
        pca(np.zeros((2, 3)), 2)
    with pytest.raises(ValueError):
        pca(np.zeros((10, 1)), 2)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 4))
def test_basis_orthonormal_and_projections_centred(seed, k):
    X = np.random.default_rng(seed).normal(size=(30, 5))
    mean, basis, _ = pca(X, k)
    np.testing.assert_allclose(basis.T @ basis, np.eye(k), atol=1e-10)
    assert np.max(np.abs(project(X, mean, basis).mean(axis=0))) < 1e-10
    P = np.random.default_rng(seed + 1).normal(size=(7, k))
    np.testing.assert_allclose(project(back_project(P, mean, basis), mean, basis), P, atol=1e-10)


def test_back_project_zero_is_mean():
    mean, basis = np.array([1.0, 2.0, 3.0]), np.eye(3)[:, :2]
    np.testing.assert_array_equal(back_project(np.zeros(2), mean, basis)[0], mean)


# -- occupancy ------------------------------------------------------------------

def test_identical_samples_one_bin():
    assert bin_occupancy(np.ones((6, 3)), 7).n_sampled == 1


def test_opposite_corners():
    grid = bin_occupancy(np.array([[0.0, 0.0], [4.0, 9.0]]), 10)
    assert grid.occupied[0, 0] and grid.occupied[9, 9]
    assert (~grid.occupied).sum() == 98


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(2, 12))
def test_occupancy_matches_rebinning(seed, d, bins):
    P = np.random.default_rng(seed).normal(size=(40, d))
    grid = bin_occupancy(P, bins)
    expected = np.zeros((bins,) * d, bool)
    lo, hi = P.min(axis=0), P.max(axis=0)
    for p in P:
        idx = []
        for j in range(d):
            w = (hi[j] - lo[j]) / (bins - 1)
            idx.append(min(int((p[j] - lo[j] + w / 2) // w), bins - 1))
        expected[tuple(idx)] = True
    np.testing.assert_array_equal(grid.occupied, expected)


# -- point generation -------------------------------------------------------------

def test_five_bin_line():
    occ = np.zeros(5, bool)
    occ[0] = True
    gen = generate_points(grid_from(occ), 2)
    assert gen.bins[:, 0].tolist() == [4, 2]
    assert gen.distances.tolist() == [4.0, 2.0]
    np.testing.assert_allclose(gen.points[:, 0], [4.5, 2.5])


def test_single_unsampled_bin():
    occ = np.ones((3, 3), bool)
    occ[1, 2] = False
    grid = grid_from(occ)
    gen = generate_points(grid, 4)
    assert gen.bins.tolist() == [[1, 2]] and gen.exhausted
    np.testing.assert_allclose(gen.points[0], grid.center([1, 2]))


def test_full_grid_returns_empty(caplog):
    with caplog.at_level(logging.WARNING):
        gen = generate_points(grid_from(np.ones((4, 4), bool)), 3)
    assert len(gen.points) == 0 and gen.exhausted
    assert "fully sampled" in caplog.text


def check_argmax(occupied, n_new):
    grid = grid_from(occupied)
    before = grid.n_sampled
    occ = grid.occupied.copy()
    gen = generate_points(grid, n_new)
    for k, b in enumerate(map(tuple, gen.bins)):
        dist = brute_force_distances(occ)
        best = max(dist.values())
        assert dist[b] == pytest.approx(best, abs=1e-12)
        assert b == min(i for i, v in dist.items() if abs(v - best) < 1e-12)
        assert gen.distances[k] == pytest.approx(best, abs=1e-12)
        occ[b] = True
        assert occ.sum() == before + k + 1
    assert grid.n_sampled == before + len(gen.bins)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 4), st.integers(2, 6))
def test_generated_bins_maximise_distance(seed, d, bins):
    rng = np.random.default_rng(seed)
    occ = rng.random((bins,) * d) < rng.uniform(0.02, 0.3)
    occ.flat[rng.integers(occ.size)] = True
    check_argmax(occ, int(rng.integers(1, 8)))


def test_generated_point_lands_in_unsampled_bin():
    X = np.random.default_rng(3).normal(size=(50, 4)) * [3, 2, 0.5, 0.1]
    mean, basis, _ = pca(X, 2)
    grid = bin_occupancy(project(X, mean, basis), 10)
    was = grid.occupied.copy()
    gen = generate_points(grid, 5)
    configs = back_project(gen.points, mean, basis)
    for c, b in zip(configs, gen.bins):
        idx = grid.bin_of(project(c[None], mean, basis))[0]
        assert idx.tolist() == b.tolist()
        assert not was[tuple(idx)]


# -- full analysis -------------------------------------------------------------------

def test_analysis_is_agglomerative_and_adaptive():
    cfg = KernelConfig("cocomd", num_replicas=6, bins_per_dim=8)
    rng = np.random.default_rng(0)
    first = rng.normal(size=(40, 3)) * [1.0, 0.5, 0.1]
    more = rng.normal(size=(40, 3)) * [0.1, 0.5, 2.0]
    a = coco_analyze(first, cfg)
    b = coco_analyze(np.vstack([first, more]), cfg)
    assert b.n_inputs > a.n_inputs
    assert not np.allclose(np.abs(a.model.basis), np.abs(b.model.basis))
    assert a.configs.shape == (6, 3)
    lines = a.model.to_csv().splitlines()
    assert lines[0].startswith("spectrum,") and lines[-1].startswith("generated,")


def test_crowded_grid_flags_shortfall():
    cfg = KernelConfig("cocomd", num_replicas=10, bins_per_dim=2)
    res = coco_analyze(np.random.default_rng(1).normal(size=(30, 2)), cfg)
    assert res.exhausted and len(res.configs) < 10


def test_generated_configs_cross_the_saddle():
    cfg = KernelConfig("cocomd", num_iterations=20, num_replicas=16, n_steps=10, seed=0)
    with Pilot(2) as pilot:
        report = run_sal(cfg, pilot)
    assert all(f[:, 0].max() < 0 for f in report.frames[:1])
    # replay each iteration's analysis on the data it saw and classify the output against the barrier at x = 0
    crossed = False
    for i in range(len(report.frames)):
        out = coco_analyze(np.concatenate(report.frames[: i + 1]), cfg)
        crossed |= bool(np.any(out.configs[:, 0] > 0))
    assert crossed
