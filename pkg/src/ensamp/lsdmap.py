"""Locally scaled diffusion maps and diffusion-map-directed replica selection.

The kernel bandwidth of each replica is its distance to the k-th nearest other
replica. The kernel is density-normalised once (alpha = 1) before being turned
into a Markov matrix, and the spectrum is taken from the symmetric conjugate of
that matrix so that ``eigh`` can be used.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .core import Ensemble, Replica

SCALE_FLOOR = 1e-12
DENSITY_ALPHA = 1.0


@dataclass(frozen=True)
class DiffusionMap:
    local_scales: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # right eigenvectors of P, one per column, pi-normalised
    n_coords: int = 2

    @property
    def dmap_coords(self) -> np.ndarray:
        k = min(self.n_coords, len(self.eigenvalues) - 1)
        return self.eigenvectors[:, 1:1 + k] * self.eigenvalues[1:1 + k]

    def to_csv(self, ids=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["eigenvalues", *[repr(float(v)) for v in self.eigenvalues]])
        coords = self.dmap_coords
        w.writerow(["replica", "local_scale", *[f"dc{j + 1}" for j in range(coords.shape[1])]])
        ids = range(len(self.local_scales)) if ids is None else ids
        for rid, eps, row in zip(ids, self.local_scales, coords):
            w.writerow([rid, repr(float(eps)), *[repr(float(v)) for v in row]])
        return buf.getvalue()


def pairwise_distances(ensemble_or_configs) -> np.ndarray:
    X = ensemble_or_configs.configs() if isinstance(ensemble_or_configs, Ensemble) else np.asarray(ensemble_or_configs, float)
    if X.ndim == 1:
        X = X[:, None]
    if len(X) < 2:
        raise ValueError("need at least two replicas")
    return squareform(pdist(X, "euclidean"))


def local_scales(distances: np.ndarray, k: int) -> np.ndarray:
    d = np.asarray(distances, dtype=float)
    n = d.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"neighbour count k={k} out of range [1, {n - 1}]")
    off = d[~np.eye(n, dtype=bool)].reshape(n, n - 1)
    eps = np.partition(off, k - 1, axis=1)[:, k - 1]
    dmax = d.max()
    floor = SCALE_FLOOR * dmax if dmax > 0 else SCALE_FLOOR
    return np.maximum(eps, floor)


def markov_matrix(distances: np.ndarray, scales: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Density-normalised kernel and its row sums; ``P = Kt / rowsum[:, None]``."""
    d = np.asarray(distances, dtype=float)
    eps = np.asarray(scales, dtype=float)
    if np.any(eps <= 0):
        raise ValueError("local scales must be strictly positive")
    K = np.exp(-(d ** 2) / (2.0 * np.outer(eps, eps)))
    if not np.all(np.isfinite(K)):
        raise FloatingPointError("non-finite kernel entries")
    q = K.sum(axis=1) ** DENSITY_ALPHA
    Kt = K / np.outer(q, q)
    return Kt, Kt.sum(axis=1)


def _fix_sign(vecs: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def diffusion_map(distances: np.ndarray, scales: np.ndarray, n_coords: int = 2) -> DiffusionMap:
    Kt, row = markov_matrix(distances, scales)
    s = 1.0 / np.sqrt(row)
    S = Kt * np.outer(s, s)
    S = 0.5 * (S + S.T)
    evals, phi = np.linalg.eigh(S)
    order = np.argsort(-evals, kind="stable")
    evals, phi = evals[order], phi[:, order]
    # psi = D^-1/2 phi scaled so that sum_i pi_i psi_i^2 = 1; psi_0 is then all ones
    psi = phi * s[:, None] * math.sqrt(row.sum())
    psi[:, 0] = psi[:, 0] * np.sign(psi[0, 0])
    psi[:, 1:] = _fix_sign(psi[:, 1:])
    return DiffusionMap(np.asarray(scales, float).copy(), evals, psi, n_coords)


def ensemble_dmap(ensemble: Ensemble, k: int, n_coords: int = 2) -> DiffusionMap:
    d = pairwise_distances(ensemble)
    k = min(k, len(ensemble) - 1)
    return diffusion_map(d, local_scales(d, k), n_coords)


# -- replica selection --------------------------------------------------------

def _merge_phase(coords, ids, weights, threshold, n_keep_max):
    """Collapse close pairs, closest first. Returns (alive indices, log of (deleted, into))."""
    n = len(ids)
    alive = list(range(n))
    log = []
    if n < 2:
        return alive, log
    d = squareform(pdist(coords))
    id_arr = np.asarray(ids)
    # lexicographic tie-break on (distance, lower id, higher id)
    lo = np.minimum.outer(id_arr, id_arr)
    hi = np.maximum.outer(id_arr, id_arr)
    masked = d.copy()
    np.fill_diagonal(masked, np.inf)
    while len(alive) > 1:
        dist = masked.min()
        if not (dist < threshold or dist == 0.0 or len(alive) > n_keep_max):
            break
        a_idx, b_idx = np.nonzero(masked == dist)
        keys = sorted(zip(lo[a_idx, b_idx], hi[a_idx, b_idx], a_idx, b_idx))
        _, _, a, b = keys[0]
        loser = int(a if ids[a] > ids[b] else b)
        masked[loser, :] = np.inf
        masked[:, loser] = np.inf
        alive.remove(loser)
        # weight goes to the nearest survivor (ties broken by lower id)
        target = min(alive, key=lambda j: (d[loser, j], ids[j]))
        weights[target] += weights[loser]
        weights[loser] = 0.0
        log.append((ids[loser], ids[target]))
    return alive, log


def _isolation(coords, alive):
    """Distance from each live point to its nearest live neighbour (0 if alone)."""
    if len(alive) < 2:
        return {i: 0.0 for i in alive}
    P = np.asarray(coords)[alive]
    d = squareform(pdist(P))
    np.fill_diagonal(d, np.inf)
    nn = d.min(axis=1)
    return {i: float(v) for i, v in zip(alive, nn)}


@dataclass(frozen=True)
class Selection:
    ensemble: Ensemble
    merged: tuple[tuple[int, int], ...]   # (deleted id, receiving id)
    spawned: tuple[tuple[int, int], ...]  # (new id, parent id)
    filled: tuple[tuple[int, int], ...]   # duplications of high-weight replicas
    unit: float


def diffusion_unit(coords: np.ndarray) -> float:
    """Median pairwise distance in diffusion space; thresholds are expressed in this unit."""
    if len(coords) < 2:
        return 0.0
    return float(np.median(pdist(coords)))


def plan_target(ensemble: Ensemble, dmap: DiffusionMap, merge_threshold: float,
                spawn_threshold: float, n_min: int = 2, n_max: int | None = None) -> int:
    """Replica count chosen by the map itself: survivors of merging plus isolated spawn candidates."""
    coords = dmap.dmap_coords
    unit = diffusion_unit(coords)
    weights = [r.weight for r in ensemble]
    alive, _ = _merge_phase(coords, ensemble.ids, weights, merge_threshold * unit, len(ensemble))
    iso = _isolation(coords, alive)
    n_spawn = sum(1 for i in alive if iso[i] > spawn_threshold * unit)
    target = len(alive) + n_spawn
    if n_max is not None:
        target = min(target, n_max)
    return max(target, n_min)


def select_replicas_detailed(
    ensemble: Ensemble,
    dmap: DiffusionMap,
    n_target: int,
    merge_threshold: float,
    spawn_threshold: float,
    seed: int = 0,
) -> Selection:
    if n_target < 2:
        raise ValueError("n_target must be >= 2")
    if merge_threshold <= 0 or spawn_threshold <= 0:
        raise ValueError("thresholds must be positive")
    coords = np.asarray(dmap.dmap_coords, float)
    if len(coords) != len(ensemble):
        raise ValueError("diffusion map does not match ensemble size")
    ids = ensemble.ids
    weights = [r.weight for r in ensemble]
    unit = diffusion_unit(coords)

    alive, merged = _merge_phase(coords, ids, weights, merge_threshold * unit, n_target)

    # candidates live in diffusion space; a duplicate sits on top of its parent
    pts = [coords[i] for i in range(len(ids))]
    reps = {i: ensemble.replicas[i] for i in alive}
    new_ids = {}
    next_id = ensemble.next_id()
    spawned, filled = [], []

    def duplicate(i):
        nonlocal next_id
        half = weights[i] / 2.0
        weights[i] = half
        j = len(pts)
        pts.append(pts[i].copy())
        weights.append(weights[i])
        parent_id = new_ids.get(i, ids[i] if i < len(ids) else None)
        src = reps[i]
        reps[j] = Replica(next_id, src.config, 0.0, parent=parent_id)
        new_ids[j] = next_id
        alive.append(j)
        next_id += 1
        return j, parent_id

    while len(alive) < n_target:
        P = np.asarray(pts)
        iso = _isolation(P, alive)
        cands = [i for i in alive if iso[i] > spawn_threshold * unit]
        if not cands:
            break
        best = max(cands, key=lambda i: (iso[i], -_rid(i, ids, new_ids)))
        j, parent = duplicate(best)
        spawned.append((new_ids[j], parent))

    while len(alive) < n_target:
        best = max(alive, key=lambda i: (weights[i], -_rid(i, ids, new_ids)))
        j, parent = duplicate(best)
        filled.append((new_ids[j], parent))

    out = []
    for i in sorted(alive, key=lambda i: _rid(i, ids, new_ids)):
        out.append(replace(reps[i], weight=weights[i]))
    return Selection(Ensemble(tuple(out)), tuple(merged), tuple(spawned), tuple(filled), unit)


def _rid(i, ids, new_ids):
    return new_ids[i] if i in new_ids else ids[i]


def select_replicas(ensemble, dmap, n_target, merge_threshold, spawn_threshold, seed: int = 0) -> Ensemble:
    """Delete crowded replicas, duplicate isolated ones, and carry weights along.

    Deleted weight moves to the nearest survivor in diffusion coordinates; a
    duplicated replica splits its weight evenly with the copy. Total weight is
    conserved and exactly ``n_target`` replicas come back. Selection is fully
    deterministic (ties by replica id); ``seed`` is accepted for interface
    symmetry with the other analysis kernels.
    """
    return select_replicas_detailed(ensemble, dmap, n_target, merge_threshold, spawn_threshold, seed).ensemble
