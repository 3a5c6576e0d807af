"""Complementary-coordinates analysis: PCA, bin occupancy, and gap filling.

Distances between bins are measured in bin units (Euclidean distance between
integer bin indices), which keeps every axis at the chosen resolution and makes
tie-breaking exact.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

log = logging.getLogger(__name__)

RANK_TOL = 1e-10


class RankDeficientError(ValueError):
    def __init__(self, achievable: int, requested: int):
        self.achievable = achievable
        self.requested = requested
        super().__init__(
            f"samples span only {achievable} dimension(s); cannot project onto {requested}"
            f" (achievable rank is {achievable})"
        )


def _sign_convention(vecs: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def pca(samples, n_components: int = 2):
    """Return ``(mean, basis, spectrum)`` of the sample covariance.

    ``basis`` has shape ``(dim, n_components)`` with the leading eigenvectors
    as columns; ``spectrum`` holds all eigenvalues in descending order. Each
    basis vector is flipped so that its largest-magnitude entry is positive.
    """
    X = np.asarray(samples, dtype=float)
    if X.ndim != 2:
        raise ValueError("samples must be a 2-D array (n_samples, dim)")
    n, dim = X.shape
    if n < n_components + 1:
        raise ValueError(f"need at least {n_components + 1} samples, got {n}")
    if dim < n_components:
        raise ValueError(f"sample dimension {dim} is smaller than {n_components}")
    mean = X.mean(axis=0)
    C = np.cov(X - mean, rowvar=False).reshape(dim, dim)
    evals, evecs = np.linalg.eigh(C)
    order = np.argsort(-evals, kind="stable")
    evals, evecs = evals[order], evecs[:, order]
    evals = np.where(np.abs(evals) < RANK_TOL * max(evals[0], 1e-300), 0.0, evals)
    rank = int(np.sum(evals > RANK_TOL * max(evals[0], 1e-300))) if evals[0] > 0 else 0
    if rank < n_components:
        raise RankDeficientError(rank, n_components)
    basis = _sign_convention(evecs[:, :n_components])
    return mean, basis, evals


def project(samples, mean, basis) -> np.ndarray:
    return (np.asarray(samples, float) - mean) @ basis


def back_project(points, mean, basis) -> np.ndarray:
    P = np.atleast_2d(np.asarray(points, dtype=float))
    return mean + P @ basis.T


@dataclass
class OccupancyGrid:
    """Axis-aligned grid; bin ``i`` along an axis covers ``[lower + i w, lower + (i+1) w)``."""

    lower: np.ndarray
    width: np.ndarray
    bins_per_dim: int
    occupied: np.ndarray

    @property
    def ndim(self) -> int:
        return len(self.lower)

    def bin_of(self, points) -> np.ndarray:
        P = np.atleast_2d(np.asarray(points, float))
        idx = np.floor((P - self.lower) / self.width).astype(int)
        return np.clip(idx, 0, self.bins_per_dim - 1)

    def center(self, index) -> np.ndarray:
        return self.lower + (np.asarray(index, float) + 0.5) * self.width

    @property
    def n_sampled(self) -> int:
        return int(self.occupied.sum())

    def sampled_bins(self) -> np.ndarray:
        return np.argwhere(self.occupied)

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(self.lower.copy(), self.width.copy(), self.bins_per_dim, self.occupied.copy())


def bin_occupancy(projections, bins_per_dim: int) -> OccupancyGrid:
    """Mark the bins hit by ``projections``.

    The grid spans the bounding box of the data widened by half a bin on each
    side, so the outermost bin centres sit exactly on the data extremes.
    """
    if bins_per_dim < 2:
        raise ValueError("bins_per_dim must be >= 2")
    P = np.atleast_2d(np.asarray(projections, float))
    lo, hi = P.min(axis=0), P.max(axis=0)
    span = hi - lo
    width = np.where(span > 0, span / (bins_per_dim - 1), 1.0)
    lower = lo - 0.5 * width
    # a flat axis puts every sample into the middle bin
    lower = np.where(span > 0, lower, lo - 0.5 * bins_per_dim * width)
    grid = OccupancyGrid(lower, width, bins_per_dim, np.zeros((bins_per_dim,) * P.shape[1], dtype=bool))
    idx = grid.bin_of(P)
    grid.occupied[tuple(idx.T)] = True
    return grid


@dataclass
class Generated:
    points: np.ndarray        # (k, ndim) bin centres in projection space
    bins: np.ndarray          # (k, ndim) integer bin indices, emission order
    distances: np.ndarray     # nearest-sampled distance (bin units) at emission time
    exhausted: bool = False   # ran out of unsampled bins before n_new


def generate_points(grid: OccupancyGrid, n_new: int) -> Generated:
    """Emit centres of the unsampled bins furthest from any sampled bin.

    After each emission the bin is marked sampled. Ties go to the
    lexicographically smallest bin index. ``grid`` is updated in place.
    """
    if n_new < 1:
        raise ValueError("n_new must be >= 1")
    occ = grid.occupied
    shape = occ.shape
    empty = Generated(np.empty((0, grid.ndim)), np.empty((0, grid.ndim), int), np.empty(0), True)
    if occ.all():
        log.warning("occupancy grid is fully sampled; nothing to generate")
        return empty
    if not occ.any():
        raise ValueError("grid has no sampled bins")

    # exact squared distances in bin units via the nearest-sampled-bin indices
    _, nearest = ndimage.distance_transform_edt(~occ, return_indices=True)
    coords = np.indices(shape)
    sq = ((coords - nearest) ** 2).sum(axis=0).astype(np.int64).ravel()
    flat_coords = coords.reshape(grid.ndim, -1)
    sampled = occ.ravel().copy()

    bins, dists = [], []
    for _ in range(n_new):
        if sampled.all():
            break
        cand = np.where(sampled, -1, sq)
        k = int(np.argmax(cand))  # first maximum = lexicographically smallest index
        idx = np.unravel_index(k, shape)
        bins.append(idx)
        dists.append(float(np.sqrt(cand[k])))
        sampled[k] = True
        occ[idx] = True
        new_sq = ((flat_coords - flat_coords[:, k:k + 1]) ** 2).sum(axis=0)
        np.minimum(sq, new_sq, out=sq)

    exhausted = len(bins) < n_new
    if exhausted:
        log.warning("only %d of %d requested points available", len(bins), n_new)
    B = np.array(bins, dtype=int).reshape(-1, grid.ndim)
    return Generated(grid.center(B).reshape(-1, grid.ndim), B, np.array(dists), exhausted)


@dataclass
class CoCoModel:
    mean: np.ndarray
    basis: np.ndarray
    spectrum: np.ndarray
    projections: np.ndarray
    grid: OccupancyGrid
    generated: np.ndarray
    generated_bins: np.ndarray
    initial_sampled: np.ndarray = field(repr=False, default=None)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["spectrum", *[repr(float(v)) for v in self.spectrum]])
        for j, col in enumerate(self.basis.T):
            w.writerow([f"basis{j + 1}", *[repr(float(v)) for v in col]])
        sampled = self.initial_sampled if self.initial_sampled is not None else self.grid.sampled_bins()
        for b in sampled:
            w.writerow(["sampled_bin", *[int(v) for v in b]])
        for p in self.generated:
            w.writerow(["generated", *[repr(float(v)) for v in p]])
        return buf.getvalue()


@dataclass
class CoCoResult:
    configs: np.ndarray
    model: CoCoModel
    exhausted: bool
    n_inputs: int


def coco_analyze(frames, config) -> CoCoResult:
    """One agglomerative CoCo pass over every frame collected so far.

    ``config`` needs ``projection_dims``, ``bins_per_dim`` and
    ``effective_n_new`` (a :class:`~ensamp.config.KernelConfig` works).
    """
    X = np.asarray(frames, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("frame store is empty")
    n_comp = min(config.projection_dims, X.shape[1])
    mean, basis, spectrum = pca(X, n_comp)
    proj = project(X, mean, basis)
    grid = bin_occupancy(proj, config.bins_per_dim)
    before = grid.sampled_bins()
    gen = generate_points(grid, config.effective_n_new)
    configs = back_project(gen.points, mean, basis) if len(gen.points) else np.empty((0, X.shape[1]))
    model = CoCoModel(mean, basis, spectrum, proj, grid, gen.points, gen.bins, before)
    return CoCoResult(configs, model, gen.exhausted, len(X))
