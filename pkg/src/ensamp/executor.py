"""Local pilot: a fixed pool of slots that runs many more tasks than it has room for.

The coordinator (the thread calling :meth:`Pilot.run_to_completion`) owns the
queue and the free-slot count. Workers only run kernels and hand finished
records back through a queue, so no kernel ever touches scheduler state.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
import queue
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, Sequence

from .core import Outcome, ResourceHandle, TaskKind, TaskRecord, TaskSpec

log = logging.getLogger(__name__)

clock = time.perf_counter

CSV_COLUMNS = ("task_id", "kind", "slots", "submitted", "launched", "started", "finished", "outcome")


class CapacityError(ValueError):
    pass


class PilotState(str, enum.Enum):
    PENDING = "pending"
    ACTIVE = "active"
    DONE = "done"
    CANCELED = "canceled"


def _execute(spec: TaskSpec, submitted: float, launched: float, done: queue.SimpleQueue) -> None:
    started = clock()
    result, outcome, reason = None, Outcome.SUCCESS, ""
    try:
        if spec.kernel is not None:
            result = spec.kernel(**spec.payload)
    except Exception as exc:  # kernel failures become records, never escape
        outcome, reason = Outcome.FAILURE, f"{type(exc).__name__}: {exc}"
    finished = clock()
    done.put(
        TaskRecord(
            task_id=spec.id,
            kind=spec.kind,
            slots=spec.slots_required,
            submitted=submitted,
            launched=launched,
            started=started,
            finished=finished,
            outcome=outcome,
            reason=reason,
            result=result,
        )
    )


class Pilot:
    """Bounded-capacity executor with FIFO + first-fit backfill scheduling.

    One worker thread per slot. A task needing ``k`` slots holds ``k`` units of
    capacity for its whole run even though it executes on a single worker.
    """

    def __init__(self, resource: ResourceHandle | int, poll_interval: float = 1e-3):
        if isinstance(resource, int):
            resource = ResourceHandle("local", resource)
        self.resource = resource
        self.poll_interval = poll_interval
        self.state = PilotState.PENDING
        self.queue: deque[tuple[TaskSpec, float]] = deque()
        self.records: dict = {}
        self._ids: set = set()
        self._pool: ThreadPoolExecutor | None = None

    @property
    def total_slots(self) -> int:
        return self.resource.total_slots

    def start(self) -> "Pilot":
        if self.state is PilotState.PENDING:
            self._pool = ThreadPoolExecutor(max_workers=self.total_slots, thread_name_prefix="slot")
            self.state = PilotState.ACTIVE
        return self

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None
        if self.state is PilotState.ACTIVE:
            self.state = PilotState.DONE

    def cancel(self) -> None:
        self.queue.clear()
        if self._pool is not None:
            self._pool.shutdown(wait=True, cancel_futures=True)
            self._pool = None
        self.state = PilotState.CANCELED

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.close()

    def submit(self, tasks: Iterable[TaskSpec]) -> int:
        """Queue tasks in order; returns the number accepted."""
        if self.state not in (PilotState.PENDING, PilotState.ACTIVE):
            raise RuntimeError(f"cannot submit to a {self.state.value} pilot")
        tasks = list(tasks)
        seen = set()
        for spec in tasks:
            if spec.slots_required > self.total_slots:
                raise CapacityError(
                    f"task {spec.id!r} exceeds pilot capacity "
                    f"({spec.slots_required} > {self.total_slots} slots)"
                )
            if spec.id in seen or spec.id in self._ids:
                raise ValueError(f"duplicate task id {spec.id!r}")
            seen.add(spec.id)
        self._ids |= seen
        now = clock()
        self.queue.extend((spec, now) for spec in tasks)
        return len(tasks)

    def _launch_fitting(self, free: int, done: queue.SimpleQueue) -> tuple[int, int]:
        # First fit in FIFO order: a later task only overtakes tasks that do not fit now.
        launched = 0
        if free == 0:
            return free, 0
        kept: deque[tuple[TaskSpec, float]] = deque()
        while self.queue:
            spec, submitted = self.queue.popleft()
            if spec.slots_required <= free:
                free -= spec.slots_required
                self._pool.submit(_execute, spec, submitted, clock(), done)
                launched += 1
            else:
                kept.append((spec, submitted))
            if free == 0:
                break
        kept.extend(self.queue)
        self.queue = kept
        return free, launched

    def run_to_completion(self) -> dict:
        """Run everything queued; returns ``{task_id: TaskRecord}`` for this batch."""
        if self.state is PilotState.CANCELED:
            raise RuntimeError("pilot was canceled")
        self.start()
        done: queue.SimpleQueue = queue.SimpleQueue()
        free = self.total_slots
        running = 0
        batch: dict = {}
        while self.queue or running:
            free, n = self._launch_fitting(free, done)
            running += n
            try:
                rec = done.get(timeout=self.poll_interval)
            except queue.Empty:
                continue
            while True:
                running -= 1
                free += rec.slots
                batch[rec.task_id] = rec
                if not rec.ok:
                    log.warning("task %r failed: %s", rec.task_id, rec.reason)
                try:
                    rec = done.get_nowait()
                except queue.Empty:
                    break
        self.records.update(batch)
        return batch

    def run(self, tasks: Sequence[TaskSpec]) -> dict:
        self.submit(tasks)
        return self.run_to_completion()


def max_concurrency(records: Iterable[TaskRecord], weighted: bool = False) -> int:
    """Peak number of simultaneously running tasks (or slots, if ``weighted``).

    Intervals are half-open ``[started, finished)``: a task that ends exactly
    when another begins does not overlap it.
    """
    events = []
    for r in records:
        w = r.slots if weighted else 1
        events.append((r.started, 1, w))
        events.append((r.finished, 0, -w))
    # finishes (flag 0) sort before starts at equal timestamps
    events.sort(key=lambda e: (e[0], e[1]))
    level = peak = 0
    for _, _, delta in events:
        level += delta
        peak = max(peak, level)
    return peak


def busy_time(records: Iterable[TaskRecord]) -> float:
    """Length of the union of ``[started, finished)`` intervals."""
    spans = sorted((r.started, r.finished) for r in records)
    total = 0.0
    cur_lo = cur_hi = None
    for lo, hi in spans:
        if cur_hi is None or lo > cur_hi:
            if cur_hi is not None:
                total += cur_hi - cur_lo
            cur_lo, cur_hi = lo, hi
        else:
            cur_hi = max(cur_hi, hi)
    if cur_hi is not None:
        total += cur_hi - cur_lo
    return total


def span(records: Iterable[TaskRecord]) -> float:
    """Wall time from the first submission to the last finish."""
    records = list(records)
    if not records:
        return 0.0
    return max(r.finished for r in records) - min(r.submitted for r in records)


def records_to_csv(records: Iterable[TaskRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in sorted(records, key=lambda r: (r.submitted, r.launched)):
        kind = r.kind.value if isinstance(r.kind, TaskKind) else str(r.kind)
        writer.writerow(
            [r.task_id, kind, r.slots, f"{r.submitted:.9f}", f"{r.launched:.9f}",
             f"{r.started:.9f}", f"{r.finished:.9f}", r.outcome_label]
        )
    return buf.getvalue()
