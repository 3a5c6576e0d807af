"""Overdamped Langevin dynamics on analytic model potentials.

Energies are in the same units as ``kT``. The double wells take their barrier
height directly (``height = barrier_in_kT * kT`` when built from a kernel
config). Mueller-Brown uses the standard published constants::

    V(x, y) = sum_k A_k exp(a_k (x - x0_k)^2 + b_k (x - x0_k)(y - y0_k) + c_k (y - y0_k)^2)
    A  = (-200, -100, -170, 15)
    a  = (-1, -1, -6.5, 0.7)
    b  = (0, 0, 11, 0.6)
    c  = (-10, -10, -6.5, 0.7)
    x0 = (1, 0, -0.5, -1)
    y0 = (0, 0.5, 1.5, 1)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .core import Replica, replica_rng

DW1D, DW2D, MB = 0, 1, 2
_KIND_CODES = {"double_well_1d": DW1D, "double_well_2d": DW2D, "mueller_brown": MB}

MB_A = np.array([-200.0, -100.0, -170.0, 15.0])
MB_a = np.array([-1.0, -1.0, -6.5, 0.7])
MB_b = np.array([0.0, 0.0, 11.0, 0.6])
MB_c = np.array([-10.0, -10.0, -6.5, 0.7])
MB_X0 = np.array([1.0, 0.0, -0.5, -1.0])
MB_Y0 = np.array([0.0, 0.5, 1.5, 1.0])

# y-direction stiffness of the 2D double well: V = h (x^2 - 1)^2 + k_y y^2 / 2
DW2D_Y_STIFFNESS = 200.0

_CHUNK = 1 << 16


class IntegrationDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class Potential:
    kind: str
    height: float = 1.0
    y_stiffness: float = DW2D_Y_STIFFNESS

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise ValueError(f"unknown potential {self.kind!r}")

    @property
    def code(self) -> int:
        return _KIND_CODES[self.kind]

    @property
    def dim(self) -> int:
        return 1 if self.kind == "double_well_1d" else 2

    @property
    def params(self) -> np.ndarray:
        return np.array([self.height, self.y_stiffness])

    @property
    def minima(self) -> list[np.ndarray]:
        if self.kind == "double_well_1d":
            return [np.array([-1.0]), np.array([1.0])]
        if self.kind == "double_well_2d":
            return [np.array([-1.0, 0.0]), np.array([1.0, 0.0])]
        # located numerically from the published constants
        return [np.array([-0.5582236346, 1.4417258418]), np.array([0.6234994049, 0.0280377585]),
                np.array([-0.0500108230, 0.4666941049])]

    def energy(self, x) -> float:
        return float(_energy(self.code, self.params, np.asarray(x, dtype=float).reshape(-1)))

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        out = np.empty_like(x)
        _gradient(self.code, self.params, x, out)
        return out

    def basin_of(self, x, margin: float = 0.5) -> int | None:
        """Index into ``minima`` for double wells, ``None`` inside the barrier region."""
        if self.kind == "mueller_brown":
            d = [np.linalg.norm(np.asarray(x) - m) for m in self.minima]
            return int(np.argmin(d))
        x0 = float(np.asarray(x).reshape(-1)[0])
        if x0 <= -margin:
            return 0
        if x0 >= margin:
            return 1
        return None


@numba.njit(cache=True, nogil=True)
def _energy(code, params, x):
    h = params[0]
    if code == DW1D:
        return h * (x[0] * x[0] - 1.0) ** 2
    if code == DW2D:
        return h * (x[0] * x[0] - 1.0) ** 2 + 0.5 * params[1] * x[1] * x[1]
    e = 0.0
    for k in range(4):
        dx = x[0] - MB_X0[k]
        dy = x[1] - MB_Y0[k]
        e += MB_A[k] * np.exp(MB_a[k] * dx * dx + MB_b[k] * dx * dy + MB_c[k] * dy * dy)
    return e


@numba.njit(cache=True, nogil=True)
def _gradient(code, params, x, out):
    h = params[0]
    if code == DW1D:
        out[0] = 4.0 * h * x[0] * (x[0] * x[0] - 1.0)
        return
    if code == DW2D:
        out[0] = 4.0 * h * x[0] * (x[0] * x[0] - 1.0)
        out[1] = params[1] * x[1]
        return
    gx = 0.0
    gy = 0.0
    for k in range(4):
        dx = x[0] - MB_X0[k]
        dy = x[1] - MB_Y0[k]
        e = MB_A[k] * np.exp(MB_a[k] * dx * dx + MB_b[k] * dx * dy + MB_c[k] * dy * dy)
        gx += e * (2.0 * MB_a[k] * dx + MB_b[k] * dy)
        gy += e * (MB_b[k] * dx + 2.0 * MB_c[k] * dy)
    out[0] = gx
    out[1] = gy


@numba.njit(cache=True, nogil=True)
def _integrate(code, params, x, noise, drift, kick, step0, stride, frames, n_frames):
    """Advance ``x`` in place through ``len(noise)`` steps, storing every ``stride``-th.

    Returns the updated frame count, or -1 on a non-finite position.
    """
    g = np.empty_like(x)
    dim = x.shape[0]
    for i in range(noise.shape[0]):
        _gradient(code, params, x, g)
        for j in range(dim):
            x[j] = x[j] - drift * g[j] + kick * noise[i, j]
        for j in range(dim):
            if not np.isfinite(x[j]):
                return -1
        if (step0 + i + 1) % stride == 0:
            for j in range(dim):
                frames[n_frames, j] = x[j]
            n_frames += 1
    return n_frames


@dataclass(frozen=True)
class Trajectory:
    replica_id: int
    frames: np.ndarray
    final: np.ndarray
    stride: int
    n_steps: int
    frame_steps: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.frame_steps is None:
            steps = self.stride * np.arange(1, len(self.frames) + 1)
            object.__setattr__(self, "frame_steps", steps)


def propagate(
    replica: Replica,
    potential: Potential,
    n_steps: int,
    dt: float,
    kT: float,
    friction: float = 1.0,
    seed: int | tuple = 0,
    stride: int | None = None,
) -> Trajectory:
    """Euler-Maruyama overdamped Langevin run starting at ``replica.config``.

    x <- x - (dt / friction) grad V(x) + sqrt(2 kT dt / friction) xi

    The noise stream is keyed by ``(seed, replica.id)`` so results do not depend
    on which worker runs the task or in what order.
    """
    if not (dt > 0 and kT > 0 and friction > 0):
        raise ValueError("dt, kT and friction must be positive")
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    if replica.dim != potential.dim:
        raise ValueError(f"replica has dimension {replica.dim}, potential needs {potential.dim}")
    if stride is None or stride <= 0:
        stride = max(1, n_steps // 10)
    key = tuple(seed) if isinstance(seed, (tuple, list)) else (seed,)
    rng = replica_rng(*key, replica.id)

    x = np.array(replica.config, dtype=float)
    frames = np.empty((n_steps // stride, potential.dim))
    drift = dt / friction
    kick = np.sqrt(2.0 * kT * dt / friction)
    params = potential.params
    n_frames = 0
    done = 0
    while done < n_steps:
        m = min(_CHUNK, n_steps - done)
        noise = rng.standard_normal((m, potential.dim))
        n_frames = _integrate(potential.code, params, x, noise, drift, kick, done, stride, frames, n_frames)
        if n_frames < 0:
            raise IntegrationDiverged(f"integration diverged for replica {replica.id} (dt too large?)")
        done += m
    return Trajectory(replica.id, frames, x, stride, n_steps)


def potential_from_config(cfg) -> Potential:
    height = cfg.barrier_height * cfg.temperature
    return Potential(cfg.potential, height=height)


def format_trajectory(traj: Trajectory, weight: float = 1.0) -> str:
    """Ensemble text format with a leading frame-index column."""
    dim = traj.frames.shape[1] if traj.frames.ndim == 2 else traj.final.shape[0]
    lines = [f"{dim} {len(traj.frames)}"]
    for idx, frame in zip(traj.frame_steps, traj.frames):
        coords = " ".join(repr(float(c)) for c in frame)
        lines.append(f"{int(idx)} {traj.replica_id} {weight!r} {coords}")
    return "\n".join(lines) + "\n"


def parse_trajectory(text: str) -> Trajectory:
    rows = [ln.split() for ln in text.splitlines() if ln.strip()]
    dim, n = int(rows[0][0]), int(rows[0][1])
    body = rows[1:]
    if len(body) != n:
        raise ValueError(f"header declares {n} frames, found {len(body)}")
    if n == 0:
        raise ValueError("trajectory file has no frames")
    steps = np.array([int(r[0]) for r in body])
    frames = np.array([[float(v) for v in r[3:3 + dim]] for r in body])
    rid = int(body[0][1])
    stride = int(steps[0]) if n else 1
    return Trajectory(rid, frames, frames[-1].copy(), stride, int(steps[-1]), frame_steps=steps)
