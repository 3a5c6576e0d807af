"""Overhead and scaling measurements on the local pilot.

Every wall time here is derived from :class:`~ensamp.core.TaskRecord`
timestamps (one clock source). Overhead for a fully concurrent batch is
``wall - max(task duration)``, where wall runs from the first submission to the
last finish. The local pilot has no remote bootstrap, so that cost is absent.

Tasks used for controlled experiments come in three flavours: ``null`` (no
work), ``sleep`` (fixed duration, no CPU) and ``burn`` (a compiled busy loop
calibrated to the requested duration; releases the GIL so slots can overlap on
a multi-core host).
"""

from __future__ import annotations

import csv
import functools
import io
import itertools
import math
import time
from dataclasses import dataclass, field

import numba
import numpy as np

from .config import KernelConfig
from .core import TaskKind, TaskSpec
from .executor import Pilot, busy_time, span
from .workflow import SALWorkflow

_tags = itertools.count()

OVERHEAD_NOTE = "overhead_s = wall_s - max task duration; wall_s = last finish - first submit; medians over repeats"


@numba.njit(cache=True, nogil=True)
def _spin(n):
    acc = 0.0
    for i in range(n):
        acc += math.sin(i * 1e-3)
    return acc


@functools.lru_cache(maxsize=1)
def burn_rate() -> float:
    """Busy-loop iterations per second on this host."""
    _spin(10)
    n = 2_000_000
    t0 = time.perf_counter()
    _spin(n)
    return n / max(time.perf_counter() - t0, 1e-9)


def work(seconds: float, mode: str = "sleep") -> float:
    if mode == "sleep":
        time.sleep(seconds)
    elif mode == "burn":
        _spin(int(seconds * burn_rate()))
    elif mode != "null":
        raise ValueError(f"unknown work mode {mode!r}")
    return seconds


def _batch(n: int, seconds: float = 0.0, mode: str = "null") -> list[TaskSpec]:
    tag = next(_tags)
    if mode == "null":
        return [TaskSpec(id=("null", tag, i), kind=TaskKind.NULL) for i in range(n)]
    if mode == "burn":
        burn_rate()  # calibrate here, never inside concurrently running tasks
    return [
        TaskSpec(id=(mode, tag, i), kind=TaskKind.SIMULATION, kernel=work, payload={"seconds": seconds, "mode": mode})
        for i in range(n)
    ]


def _write_csv(columns, rows, note: str = "") -> str:
    buf = io.StringIO()
    if note:
        buf.write(f"# {note}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def _fmt(v):
    return f"{v:.6g}" if isinstance(v, float) else v


# -- overhead -------------------------------------------------------------------

@dataclass(frozen=True)
class OverheadSample:
    wall_s: float
    in_task_s: float
    max_task_s: float
    latencies: tuple[float, ...]

    @property
    def overhead_s(self) -> float:
        return self.wall_s - self.max_task_s


@dataclass
class OverheadReport:
    n_tasks: int
    samples: list[OverheadSample] = field(default_factory=list)

    @property
    def overheads(self) -> np.ndarray:
        return np.array([s.overhead_s for s in self.samples])

    @property
    def overhead_s(self) -> float:
        return float(np.median(self.overheads))

    @property
    def overhead_min(self) -> float:
        return float(self.overheads.min())

    @property
    def overhead_max(self) -> float:
        return float(self.overheads.max())

    @property
    def wall_s(self) -> float:
        return float(np.median([s.wall_s for s in self.samples]))

    @property
    def in_task_s(self) -> float:
        return float(np.median([s.in_task_s for s in self.samples]))

    @property
    def launch_latency_s(self) -> float:
        return float(np.median([lat for s in self.samples for lat in s.latencies]))

    def row(self) -> dict:
        return dict(n_tasks=self.n_tasks, repeats=len(self.samples), wall_s=self.wall_s, in_task_s=self.in_task_s,
                    overhead_s=self.overhead_s, overhead_min_s=self.overhead_min, overhead_max_s=self.overhead_max,
                    launch_latency_s=self.launch_latency_s)


OVERHEAD_COLUMNS = ("n_tasks", "repeats", "wall_s", "in_task_s", "overhead_s", "overhead_min_s", "overhead_max_s",
                    "launch_latency_s")


def sample_from_records(records) -> OverheadSample:
    records = list(records)
    durations = [r.duration for r in records]
    return OverheadSample(
        wall_s=span(records),
        in_task_s=math.fsum(durations),
        max_task_s=max(durations),
        latencies=tuple(r.started - r.submitted for r in records),
    )


def measure_overhead(n_tasks: int, pilot: Pilot | None = None, repeats: int = 5) -> OverheadReport:
    """Run ``n_tasks`` concurrent null tasks ``repeats`` times and collect the overheads."""
    if n_tasks < 1:
        raise ValueError("n_tasks must be >= 1")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    own = pilot is None
    pilot = Pilot(n_tasks).start() if own else pilot
    try:
        if pilot.total_slots < n_tasks:
            raise ValueError(f"pilot has {pilot.total_slots} slots; overhead runs need all {n_tasks} tasks concurrent")
        report = OverheadReport(n_tasks)
        for _ in range(repeats):
            recs = pilot.run(_batch(n_tasks))
            report.samples.append(sample_from_records(recs.values()))
        return report
    finally:
        if own:
            pilot.close()


def overhead_sweep(task_counts, repeats: int = 5) -> list[OverheadReport]:
    return [measure_overhead(n, repeats=repeats) for n in task_counts]


def overhead_csv(reports) -> str:
    return _write_csv(OVERHEAD_COLUMNS, [r.row() for r in reports], OVERHEAD_NOTE)


# -- scaling ----------------------------------------------------------------------

@dataclass
class ScalingReport:
    kind: str
    columns: tuple[str, ...]
    rows: list[dict]
    note: str = ""

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def to_csv(self) -> str:
        return _write_csv(self.columns, self.rows, self.note)


def _add_speedup(rows, wall_key="sim_wall_s"):
    base = rows[0]
    for r in rows:
        k = r["slots"] / base["slots"]
        r["speedup"] = base[wall_key] / r[wall_key]
        r["efficiency"] = base[wall_key] / (k * r[wall_key])


def _workflow_walls(cfg: KernelConfig, slots: int, padding_s: float, repeats: int) -> dict:
    sims, anas, totals = [], [], []
    with Pilot(slots) as pilot:
        for _ in range(repeats):
            rep = SALWorkflow(cfg, padding_s=padding_s).run(pilot)
            if rep.aborted:
                raise RuntimeError(f"workflow aborted during scaling run: {rep.error}")
            sims.append(sum(it.sim_wall_s for it in rep.iterations))
            anas.append(sum(it.analysis_wall_s for it in rep.iterations))
            totals.append(span(rep.records))
    return dict(sim_wall_s=float(np.median(sims)), sim_wall_min_s=min(sims), sim_wall_max_s=max(sims),
                analysis_wall_s=float(np.median(anas)), total_wall_s=float(np.median(totals)))


STRONG_COLUMNS = ("slots", "n_instances", "sim_wall_s", "sim_wall_min_s", "sim_wall_max_s", "analysis_wall_s",
                  "total_wall_s", "speedup", "efficiency")


def strong_scaling(cfg: KernelConfig, slot_counts, padding_s: float = 0.05, repeats: int = 5) -> ScalingReport:
    """Fixed instance count (``cfg.num_replicas``), growing pilot capacity.

    ``speedup = T(base) / T(slots)`` and ``efficiency = T(base) / (k T(slots))``
    with ``k = slots / base_slots`` and the first entry as base.
    """
    slot_counts = list(slot_counts)
    if not slot_counts:
        raise ValueError("need at least one slot count")
    cfg = cfg.replace(dynamic_instances=False)
    rows = []
    for slots in slot_counts:
        row = dict(slots=slots, n_instances=cfg.num_replicas)
        row.update(_workflow_walls(cfg, slots, padding_s, repeats))
        rows.append(row)
    _add_speedup(rows)
    return ScalingReport("strong", STRONG_COLUMNS, rows, "efficiency = T(base) / (k * T(k * base)); walls are medians")


WEAK_COLUMNS = ("n_instances", "slots", "sim_wall_s", "sim_wall_min_s", "sim_wall_max_s", "analysis_wall_s",
                "total_wall_s")


def weak_scaling(cfg: KernelConfig, points, padding_s: float = 0.05, repeats: int = 5) -> ScalingReport:
    """Instances and slots grow together at a fixed ratio; every instance runs concurrently."""
    points = [(int(n), int(s)) for n, s in points]
    if not points:
        raise ValueError("need at least one (instances, slots) pair")
    ratios = {n / s for n, s in points}
    if len(ratios) != 1:
        raise ValueError("instances / slots must be the same for every point")
    if any(n > s for n, s in points):
        raise ValueError("weak scaling needs every instance to run concurrently (instances <= slots)")
    cfg = cfg.replace(dynamic_instances=False)
    rows = []
    for n, slots in points:
        row = dict(n_instances=n, slots=slots)
        row.update(_workflow_walls(cfg.replace(num_replicas=n), slots, padding_s, repeats))
        rows.append(row)
    return ScalingReport("weak", WEAK_COLUMNS, rows, "fixed instances/slots ratio; walls are medians")


TASK_COLUMNS = ("slots", "n_tasks", "wall_s", "wall_min_s", "wall_max_s", "speedup", "efficiency")


def task_scaling(n_tasks: int, slot_counts, task_s: float = 0.05, mode: str = "burn",
                 repeats: int = 5) -> ScalingReport:
    """Controlled strong scaling with ``n_tasks`` equal-duration tasks and no analysis stage."""
    rows = []
    for slots in slot_counts:
        walls = []
        with Pilot(slots) as pilot:
            for _ in range(repeats):
                walls.append(span(pilot.run(_batch(n_tasks, task_s, mode)).values()))
        rows.append(dict(slots=slots, n_tasks=n_tasks, wall_s=float(np.median(walls)),
                         wall_min_s=min(walls), wall_max_s=max(walls)))
    _add_speedup(rows, "wall_s")
    return ScalingReport("tasks", TASK_COLUMNS, rows, f"{mode} tasks of {task_s} s; walls are medians")


OVERSUB_COLUMNS = ("n_instances", "slots", "waves", "wave_time_s", "wall_s", "wall_in_waves", "growth_factor",
                   "work_growth_factor")


def oversubscription_run(n_instances, capacity: int, task_s: float = 0.05, mode: str = "burn",
                         repeats: int = 5) -> ScalingReport:
    """Push more equal tasks than slots through a fixed pilot and measure the waves.

    A wave time is the wall time of one full wave (``capacity`` tasks).
    ``growth_factor`` is wall time relative to that, ``work_growth_factor`` is
    ``n / capacity``.
    """
    counts = [n_instances] if np.isscalar(n_instances) else list(n_instances)
    waves_t = []
    walls = {n: [] for n in counts}
    with Pilot(capacity) as pilot:
        pilot.run(_batch(capacity, 0.0, mode))  # spin up the worker threads
        # interleave the reference wave with the larger batches so host drift hits both alike
        for _ in range(repeats):
            waves_t.append(span(pilot.run(_batch(capacity, task_s, mode)).values()))
            for n in counts:
                walls[n].append(span(pilot.run(_batch(n, task_s, mode)).values()))
    wave_time = float(np.median(waves_t))
    rows = []
    for n in counts:
        wall = float(np.median(walls[n]))
        rows.append(dict(n_instances=n, slots=capacity, waves=math.ceil(n / capacity), wave_time_s=wave_time,
                         wall_s=wall, wall_in_waves=wall / wave_time, growth_factor=wall / wave_time,
                         work_growth_factor=n / capacity))
    return ScalingReport("oversubscription", OVERSUB_COLUMNS, rows,
                         f"{mode} tasks of {task_s} s; wave time = wall of one full wave; medians")


def busy_fraction(records) -> float:
    """Share of the wall time during which at least one task was running."""
    records = list(records)
    wall = span(records)
    return busy_time(records) / wall if wall > 0 else 0.0
