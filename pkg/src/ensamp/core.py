"""Domain types shared across the package: replicas, ensembles, tasks, resources."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np


class DegenerateEnsembleError(ValueError):
    pass


@dataclass(frozen=True)
class Replica:
    id: int
    config: np.ndarray
    weight: float = 1.0
    parent: int | None = None

    def __post_init__(self):
        cfg = np.array(self.config, dtype=float, copy=True).reshape(-1)
        cfg.setflags(write=False)
        object.__setattr__(self, "config", cfg)
        object.__setattr__(self, "weight", float(self.weight))
        if not self.weight >= 0.0:
            raise ValueError(f"replica {self.id}: weight must be >= 0, got {self.weight}")

    @property
    def dim(self) -> int:
        return self.config.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Replica):
            return NotImplemented
        return (
            self.id == other.id
            and self.weight == other.weight
            and self.parent == other.parent
            and np.array_equal(self.config, other.config)
        )

    __hash__ = None


@dataclass(frozen=True)
class Ensemble:
    replicas: tuple[Replica, ...]

    def __post_init__(self):
        reps = tuple(self.replicas)
        object.__setattr__(self, "replicas", reps)
        if not reps:
            raise DegenerateEnsembleError("ensemble has no replicas")
        dims = {r.dim for r in reps}
        if len(dims) != 1:
            raise ValueError(f"mixed configuration dimensions in ensemble: {sorted(dims)}")
        ids = [r.id for r in reps]
        if len(set(ids)) != len(ids):
            raise ValueError("replica ids must be unique")
        if not self.total_weight > 0.0:
            raise DegenerateEnsembleError("degenerate ensemble: total weight is not positive")

    @property
    def dim(self) -> int:
        return self.replicas[0].dim

    def __len__(self) -> int:
        return len(self.replicas)

    def __iter__(self):
        return iter(self.replicas)

    @property
    def ids(self) -> list[int]:
        return [r.id for r in self.replicas]

    @property
    def weights(self) -> np.ndarray:
        return np.array([r.weight for r in self.replicas])

    @property
    def total_weight(self) -> float:
        return math.fsum(r.weight for r in self.replicas)

    def configs(self) -> np.ndarray:
        """Configurations stacked as an ``(n, dim)`` array."""
        return np.stack([r.config for r in self.replicas])

    def next_id(self) -> int:
        return max(self.ids) + 1


def normalize_weights(ensemble: Ensemble) -> Ensemble:
    total = ensemble.total_weight
    if not total > 0.0:
        raise DegenerateEnsembleError("degenerate ensemble")
    return Ensemble(tuple(replace(r, weight=r.weight / total) for r in ensemble))


def replica_rng(seed: int, *key: int) -> np.random.Generator:
    """Counter-based stream keyed by ``(seed, *key)``; independent of call order."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *key])))


def ensemble_from_seed(
    n: int,
    dim: int,
    init_config: Sequence[float],
    jitter: float = 0.0,
    seed: int = 0,
) -> Ensemble:
    if n < 1:
        raise ValueError("ensemble needs at least one replica")
    if jitter < 0:
        raise ValueError("jitter must be >= 0")
    init = np.asarray(init_config, dtype=float).reshape(-1)
    if init.shape[0] != dim:
        raise ValueError(f"init_config has dimension {init.shape[0]}, expected {dim}")
    reps = []
    for i in range(n):
        cfg = init.copy()
        if jitter > 0:
            cfg += replica_rng(seed, i).uniform(-jitter, jitter, size=dim)
        reps.append(Replica(id=i, config=cfg, weight=1.0 / n))
    return Ensemble(tuple(reps))


def format_ensemble(ensemble: Ensemble) -> str:
    lines = [f"{ensemble.dim} {len(ensemble)}"]
    for r in ensemble:
        coords = " ".join(repr(float(c)) for c in r.config)
        lines.append(f"{r.id} {r.weight!r} {coords}")
    return "\n".join(lines) + "\n"


def parse_ensemble(text: str) -> Ensemble:
    rows = [ln.split() for ln in text.splitlines() if ln.strip()]
    if not rows:
        raise ValueError("empty ensemble file")
    dim, n = int(rows[0][0]), int(rows[0][1])
    body = rows[1:]
    if len(body) != n:
        raise ValueError(f"header declares {n} replicas, found {len(body)}")
    reps = []
    for row in body:
        if len(row) != dim + 2:
            raise ValueError(f"replica line has {len(row) - 2} coordinates, expected {dim}")
        reps.append(Replica(id=int(row[0]), weight=float(row[1]), config=[float(v) for v in row[2:]]))
    return Ensemble(tuple(reps))


class TaskKind(str, enum.Enum):
    SIMULATION = "simulation"
    ANALYSIS = "analysis"
    NULL = "null"


class Outcome(str, enum.Enum):
    SUCCESS = "success"
    FAILURE = "failure"


@dataclass(frozen=True)
class TaskSpec:
    """A unit of work for the pilot.

    ``kernel`` is called as ``kernel(**payload)`` inside a worker; null tasks
    carry no kernel and return immediately.
    """

    id: Any
    kind: TaskKind = TaskKind.NULL
    kernel: Callable[..., Any] | None = None
    payload: Mapping[str, Any] = field(default_factory=dict)
    slots_required: int = 1
    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", TaskKind(self.kind))
        if int(self.slots_required) < 1:
            raise ValueError(f"task {self.id!r}: slots_required must be >= 1")


@dataclass(frozen=True)
class TaskRecord:
    task_id: Any
    kind: TaskKind
    slots: int
    submitted: float
    launched: float
    started: float
    finished: float
    outcome: Outcome
    reason: str = ""
    result: Any = field(default=None, repr=False, compare=False)

    @property
    def ok(self) -> bool:
        return self.outcome is Outcome.SUCCESS

    @property
    def duration(self) -> float:
        return self.finished - self.started

    @property
    def outcome_label(self) -> str:
        if self.ok:
            return "success"
        return f"failure({self.reason})"


@dataclass(frozen=True)
class ResourceHandle:
    name: str
    total_slots: int
    walltime_limit: float | None = None

    def __post_init__(self):
        if int(self.total_slots) < 1:
            raise ValueError("total_slots must be >= 1")


def weights_conserved(before: Iterable[float], after: Iterable[float], tol: float = 1e-12) -> bool:
    a, b = math.fsum(before), math.fsum(after)
    return abs(a - b) <= tol * max(abs(a), 1.0)
