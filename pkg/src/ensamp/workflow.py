"""Simulation-analysis loop driver for DM-d-MD and CoCo-MD.

Each iteration submits one simulation task per replica, waits for all of them
(the stage barrier), then submits a single analysis task whose output becomes
the next ensemble. The replica count may change from one iteration to the next.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .coco import coco_analyze
from .config import KernelConfig
from .core import Ensemble, Replica, TaskKind, TaskRecord, TaskSpec, ensemble_from_seed, format_ensemble, normalize_weights
from .dynamics import Potential, propagate, potential_from_config
from .executor import Pilot, busy_time, clock, records_to_csv, span
from .lsdmap import ensemble_dmap, plan_target, select_replicas_detailed

log = logging.getLogger(__name__)

# keeps task ids unique when several runs share one pilot
_run_counter = itertools.count()


@dataclass
class IterationReport:
    index: int
    n_instances: int
    n_failed: int
    n_analysis_inputs: int
    n_next: int
    sim_wall_s: float
    analysis_wall_s: float
    overhead_s: float
    total_weight: float
    exhausted: bool = False


@dataclass
class WorkflowReport:
    kind: str
    config: KernelConfig
    iterations: list[IterationReport] = field(default_factory=list)
    final_ensemble: Ensemble | None = None
    total_steps: int = 0
    records: list[TaskRecord] = field(default_factory=list, repr=False)
    frames: list[np.ndarray] = field(default_factory=list, repr=False)
    aborted: bool = False
    error: str = ""

    @property
    def instance_counts(self) -> list[int]:
        return [it.n_instances for it in self.iterations]

    def all_frames(self) -> np.ndarray:
        if not self.frames:
            return np.empty((0, self.config_dim))
        return np.concatenate(self.frames)

    @property
    def config_dim(self) -> int:
        return potential_from_config(self.config).dim

    def iteration_records(self, index: int) -> tuple[list[TaskRecord], list[TaskRecord]]:
        sim = [r for r in self.records if r.task_id[0] in ("sim", "md") and r.task_id[1] == index]
        ana = [r for r in self.records if r.task_id[0] == "ana" and r.task_id[1] == index]
        return sim, ana

    def to_dict(self, final_ensemble_path: str | None = None) -> dict:
        return {
            "kind": self.kind,
            "version": __version__,
            "aborted": self.aborted,
            "error": self.error,
            "total_steps": self.total_steps,
            "n_steps_per_task": self.config.n_steps,
            "final_ensemble": final_ensemble_path,
            "final_total_weight": self.final_ensemble.total_weight if self.final_ensemble else None,
            "iterations": [asdict(it) for it in self.iterations],
        }

    def iterations_csv(self) -> str:
        buf = io.StringIO()
        cols = list(IterationReport.__dataclass_fields__)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for it in self.iterations:
            w.writerow([getattr(it, c) for c in cols])
        return buf.getvalue()

    def write(self, outdir) -> dict[str, Path]:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {}
        if self.final_ensemble is not None:
            paths["ensemble"] = out / "final_ensemble.txt"
            paths["ensemble"].write_text(format_ensemble(self.final_ensemble))
        paths["report"] = out / "report.json"
        ens_name = paths["ensemble"].name if "ensemble" in paths else None
        paths["report"].write_text(json.dumps(self.to_dict(ens_name), indent=2) + "\n")
        paths["iterations"] = out / "iterations.csv"
        paths["iterations"].write_text(self.iterations_csv())
        paths["tasks"] = out / "tasks.csv"
        paths["tasks"].write_text(records_to_csv(self.records))
        return paths


def _simulate(replica, potential, n_steps, dt, kT, friction, seed, stride, padding_s=0.0):
    traj = propagate(replica, potential, n_steps, dt, kT, friction, seed=seed, stride=stride)
    if padding_s > 0:
        # stands in for the wall time of a production MD engine in scaling runs
        time.sleep(padding_s)
    return traj


def _dmdmd_analysis(ensemble: Ensemble, cfg: KernelConfig):
    dmap = ensemble_dmap(ensemble, cfg.num_neighbors_for_local_scale, cfg.dmap_dims)
    if cfg.dynamic_instances:
        n_target = plan_target(ensemble, dmap, cfg.merge_threshold, cfg.spawn_threshold,
                               cfg.min_replicas, cfg.effective_max_replicas)
    else:
        n_target = cfg.num_replicas
    sel = select_replicas_detailed(ensemble, dmap, n_target, cfg.merge_threshold, cfg.spawn_threshold, cfg.seed)
    nxt = normalize_weights(sel.ensemble) if cfg.normalize_weights else sel.ensemble
    return nxt, sel, dmap


def _cocomd_analysis(frames: np.ndarray, cfg: KernelConfig):
    return coco_analyze(frames, cfg)


def _transfer_lost_weight(survivors: list[Replica], lost: list[Replica]) -> list[Replica]:
    """Hand each failed replica's weight to the survivor nearest its start point."""
    out = list(survivors)
    for gone in lost:
        d = [float(np.linalg.norm(r.config - gone.config)) for r in out]
        j = min(range(len(out)), key=lambda i: (d[i], out[i].id))
        out[j] = replace(out[j], weight=out[j].weight + gone.weight)
    return out


class SALWorkflow:
    """Iterated simulation/analysis with a pre-processing step that builds the start ensemble.

    ``padding_s`` adds a fixed sleep to every simulation task; the scaling
    harness uses it to give tasks a controlled, equal duration.
    """

    def __init__(self, config: KernelConfig, initial: Ensemble | None = None, slots_per_task: int = 1,
                 padding_s: float = 0.0):
        self.config = config
        self.padding_s = padding_s
        self.kind = config.workflow
        self.potential: Potential = potential_from_config(config)
        self.slots_per_task = slots_per_task
        self.ensemble = initial if initial is not None else self.initial_ensemble(config)
        self.iteration = 0
        self.frame_store: list[np.ndarray] = []
        self.run_id = next(_run_counter)

    @staticmethod
    def initial_ensemble(cfg: KernelConfig) -> Ensemble:
        pot = potential_from_config(cfg)
        start = pot.minima[min(cfg.start_basin, len(pot.minima) - 1)]
        ens = ensemble_from_seed(cfg.num_replicas, pot.dim, start, cfg.jitter, cfg.seed)
        if cfg.workflow == "cocomd":
            ens = Ensemble(tuple(replace(r, weight=1.0) for r in ens))
        return ens

    def _sim_tasks(self, index: int) -> list[TaskSpec]:
        cfg = self.config
        return [
            TaskSpec(
                id=("sim", index, r.id, self.run_id),
                kind=TaskKind.SIMULATION,
                kernel=_simulate,
                payload=dict(replica=r, potential=self.potential, n_steps=cfg.n_steps, dt=cfg.dt,
                             kT=cfg.temperature, friction=cfg.friction, seed=(cfg.seed, index),
                             stride=cfg.effective_stride, padding_s=self.padding_s),
                slots_required=self.slots_per_task,
            )
            for r in self.ensemble
        ]

    def run(self, pilot: Pilot, walltime: float | None = None) -> WorkflowReport:
        """Run every iteration; with ``walltime`` (seconds) no new iteration starts past the limit."""
        cfg = self.config
        report = WorkflowReport(self.kind, cfg)
        t0 = clock()
        for index in range(cfg.num_iterations):
            if walltime is not None and index > 0 and clock() - t0 > walltime:
                return self._abort(report, f"walltime limit of {walltime} s reached before iteration {index}")
            self.iteration = index
            tasks = self._sim_tasks(index)
            sim = pilot.run(tasks)
            report.total_steps += len(tasks) * cfg.n_steps
            sim_recs = [sim[t.id] for t in tasks]
            report.records.extend(sim_recs)

            finals, lost, iter_frames = [], [], []
            for rep, rec in zip(self.ensemble, sim_recs):
                if rec.ok:
                    traj = rec.result
                    finals.append(replace(rep, config=traj.final))
                    iter_frames.append(traj.frames)
                else:
                    log.warning("simulation of replica %d failed in iteration %d: %s", rep.id, index, rec.reason)
                    lost.append(rep)
            frames_now = np.concatenate(iter_frames) if iter_frames else np.empty((0, self.potential.dim))
            self.frame_store.append(frames_now)
            report.frames.append(frames_now)
            if not finals:
                return self._abort(report, f"every simulation failed in iteration {index}")

            if self.kind == "dmdmd":
                if lost:
                    finals = _transfer_lost_weight(finals, lost)
                analysis_input = Ensemble(tuple(finals))
                kernel, payload = _dmdmd_analysis, dict(ensemble=analysis_input, cfg=cfg)
                n_inputs = len(analysis_input)
            else:
                store = np.concatenate(self.frame_store)
                kernel, payload = _cocomd_analysis, dict(frames=store, cfg=cfg)
                n_inputs = len(store)

            ana_spec = TaskSpec(id=("ana", index, None, self.run_id), kind=TaskKind.ANALYSIS, kernel=kernel, payload=payload)
            ana = pilot.run([ana_spec])[ana_spec.id]
            report.records.append(ana)
            if not ana.ok:
                self._record_iteration(report, index, sim_recs, ana, n_inputs, 0, len(lost), False)
                return self._abort(report, f"analysis failed in iteration {index}: {ana.reason}")

            exhausted = False
            if self.kind == "dmdmd":
                self.ensemble = ana.result[0]
            else:
                result = ana.result
                exhausted = result.exhausted
                self.ensemble = self._coco_next(result.configs, finals)
            self._record_iteration(report, index, sim_recs, ana, n_inputs, len(self.ensemble), len(lost), exhausted)

        report.final_ensemble = self.ensemble
        return report

    def _coco_next(self, configs: np.ndarray, finals: list[Replica]) -> Ensemble:
        n = self.config.num_replicas
        start = max(r.id for r in self.ensemble) + 1
        new = [Replica(start + i, c, 1.0) for i, c in enumerate(configs[:n])]
        # top up from the latest end points when the grid ran out of empty bins
        k = 0
        while len(new) < n:
            src = finals[k % len(finals)]
            new.append(Replica(start + len(new), src.config, 1.0, parent=src.id))
            k += 1
        return Ensemble(tuple(new))

    def _record_iteration(self, report, index, sim_recs, ana, n_inputs, n_next, n_failed, exhausted):
        it_records = list(sim_recs) + [ana]
        wall = ana.finished - min(r.submitted for r in sim_recs)
        report.iterations.append(
            IterationReport(
                index=index,
                n_instances=len(sim_recs),
                n_failed=n_failed,
                n_analysis_inputs=n_inputs,
                n_next=n_next,
                sim_wall_s=span(sim_recs),
                analysis_wall_s=span([ana]),
                overhead_s=max(wall - busy_time(it_records), 0.0),
                total_weight=self.ensemble.total_weight,
                exhausted=exhausted,
            )
        )

    def _abort(self, report: WorkflowReport, message: str) -> WorkflowReport:
        log.error(message)
        report.aborted = True
        report.error = message
        report.final_ensemble = self.ensemble
        return report


def run_sal(workflow: SALWorkflow | KernelConfig, pilot: Pilot) -> WorkflowReport:
    if isinstance(workflow, KernelConfig):
        workflow = SALWorkflow(workflow)
    return workflow.run(pilot, pilot.resource.walltime_limit)


def plain_md_baseline(config: KernelConfig, pilot: Pilot, total_steps: int | None = None) -> WorkflowReport:
    """Unsteered comparison run: the same start ensemble and step budget, no analysis.

    The budget defaults to what a constant-size adaptive run would spend; pass
    the ``total_steps`` of an adaptive report to match it exactly.
    """
    wf = SALWorkflow(config)
    pot = wf.potential
    n = len(wf.ensemble)
    if total_steps is None:
        total_steps = config.num_iterations * n * config.n_steps
    base, extra = divmod(total_steps, n)
    tasks = []
    for i, r in enumerate(wf.ensemble):
        steps = base + (1 if i < extra else 0)
        tasks.append(
            TaskSpec(
                id=("md", 0, r.id, wf.run_id),
                kind=TaskKind.SIMULATION,
                kernel=_simulate,
                payload=dict(replica=r, potential=pot, n_steps=steps, dt=config.dt, kT=config.temperature,
                             friction=config.friction, seed=(config.seed, 0), stride=config.effective_stride),
                slots_required=wf.slots_per_task,
            )
        )
    recs = pilot.run(tasks)
    report = WorkflowReport("baseline", config)
    report.total_steps = sum(t.payload["n_steps"] for t in tasks)
    finals, frames, failed = [], [], 0
    for t in tasks:
        rec = recs[t.id]
        report.records.append(rec)
        rep = t.payload["replica"]
        if rec.ok:
            finals.append(replace(rep, config=rec.result.final))
            frames.append(rec.result.frames)
        else:
            failed += 1
    report.frames.append(np.concatenate(frames) if frames else np.empty((0, pot.dim)))
    sim_recs = report.records
    report.iterations.append(
        IterationReport(0, len(tasks), failed, 0, len(finals), span(sim_recs), 0.0,
                        max(span(sim_recs) - busy_time(sim_recs), 0.0),
                        math.fsum(r.weight for r in finals))
    )
    if finals:
        report.final_ensemble = Ensemble(tuple(finals))
    else:
        report.aborted, report.error = True, "every simulation failed"
    return report


def reached_basin(report: WorkflowReport, basin: int, margin: float = 0.5) -> bool:
    """Whether any recorded frame of the run lies in the given basin of the potential."""
    pot = potential_from_config(report.config)
    frames = report.all_frames()
    if len(frames) == 0:
        return False
    if pot.kind == "mueller_brown":
        return any(pot.basin_of(f) == basin for f in frames)
    x = frames[:, 0]
    return bool(np.any(x >= margin)) if basin == 1 else bool(np.any(x <= -margin))
