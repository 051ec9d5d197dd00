"""
Evaluation - Rollout travel-time accuracy, rank correlation, node traces,
flow-only ablation and simulator-versus-surrogate timing.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from .dataset import Dataset, SimulationRun, WindowIndex
from .demand_paths import Assignment, assignment_matrix
from .errors import ValidationError
from .model import GenTTP, aggregate_tt
from .simulator import Scenario, SimConfig
from .training import evaluate_windows

logger = logging.getLogger(__name__)


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Rank correlation: Pearson correlation of average ranks. NaN when either side is constant."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError("spearman needs two equally long 1-d sequences")
    if len(x) < 2:
        raise ValidationError("spearman needs at least two points")
    rx, ry = rankdata(x), rankdata(y)
    rx, ry = rx - rx.mean(), ry - ry.mean()
    denom = math.sqrt(float((rx * rx).sum()) * float((ry * ry).sum()))
    if denom == 0:
        return float("nan")
    return float((rx * ry).sum() / denom)


@dataclass(frozen=True)
class TTRecord:
    sample_id: int
    true_tt: float
    pred_tt: float

    @property
    def delta(self) -> float:
        return abs(self.pred_tt - self.true_tt)

    @property
    def delta_min(self) -> float:
        return self.delta / 60.0

    @property
    def rel_delta(self) -> float:
        if self.true_tt == 0:
            return 0.0 if self.pred_tt == 0 else float("inf")
        return self.delta / self.true_tt


@dataclass
class TTReport:
    records: List[TTRecord] = field(default_factory=list)

    @property
    def deltas_min(self) -> np.ndarray:
        return np.array([r.delta_min for r in self.records])

    @property
    def rel_deltas(self) -> np.ndarray:
        return np.array([r.rel_delta for r in self.records])

    @property
    def mean_delta_min(self) -> float:
        return float(self.deltas_min.mean())

    @property
    def median_delta_min(self) -> float:
        return float(np.median(self.deltas_min))

    @property
    def sum_delta_min(self) -> float:
        return float(self.deltas_min.sum())

    @property
    def mean_rel_delta(self) -> float:
        return float(self.rel_deltas.mean())

    @property
    def median_rel_delta(self) -> float:
        return float(np.median(self.rel_deltas))

    @property
    def spearman(self) -> float:
        if len(self.records) < 2:
            return float("nan")
        return spearman([r.pred_tt for r in self.records], [r.true_tt for r in self.records])

    @property
    def pred_variance(self) -> float:
        return float(np.var([r.pred_tt for r in self.records]))

    def summary(self) -> dict:
        return {
            "assignments": len(self.records),
            "mean_delta_min": self.mean_delta_min,
            "median_delta_min": self.median_delta_min,
            "sum_delta_min": self.sum_delta_min,
            "mean_rel_delta": self.mean_rel_delta,
            "median_rel_delta": self.median_rel_delta,
            "spearman": self.spearman,
        }

    def save(self, path):
        """Per-assignment rows; the rank correlation is repeated on every row."""
        rho = self.spearman
        pd.DataFrame(
            [(r.sample_id, r.true_tt / 60.0, r.pred_tt / 60.0, r.delta_min, r.rel_delta, rho) for r in self.records],
            columns=["sample_id", "true_tt_min", "pred_tt_min", "delta_min", "rel_delta", "spearman"],
        ).to_csv(path, index=False)


def evaluate_tt(model: GenTTP, runs: Sequence[SimulationRun]) -> TTReport:
    """Roll out every run's assignment matrix and compare g(Q̂) with the simulated travel time."""
    if not runs:
        raise ValidationError("no test runs to evaluate")
    report = TTReport()
    for run in runs:
        predicted = model.rollout(run.assignments)
        report.records.append(TTRecord(run.sim_id, run.travel_time, aggregate_tt(predicted, model.cfg.interval)))
    logger.info("Travel time over %d runs: median relative error %.3f, Spearman %.3f",
                len(runs), report.median_rel_delta, report.spearman)
    return report


@dataclass(frozen=True, eq=False)
class NodeTrace:
    cell: int
    true: np.ndarray
    predicted: np.ndarray

    def save(self, path):
        pd.DataFrame({"t": np.arange(len(self.true)), "true": self.true, "pred": self.predicted}).to_csv(path, index=False)


def node_trace(model: GenTTP, run: SimulationRun, cell: int) -> NodeTrace:
    """True and rolled-out flow of one cell across the run."""
    if not 0 <= cell < run.cells:
        raise ValidationError(f"cell {cell} outside [0, {run.cells})")
    predicted = model.rollout(run.assignments)
    return NodeTrace(cell, run.flows[cell].copy(), predicted[cell])


@dataclass
class ModelScores:
    name: str
    mae: float
    rmse: float
    tt: TTReport

    def row(self) -> dict:
        return {"model": self.name, "mae": self.mae, "rmse": self.rmse,
                "mean_delta_min": self.tt.mean_delta_min, "median_delta_min": self.tt.median_delta_min,
                "sum_delta_min": self.tt.sum_delta_min, "median_rel_delta": self.tt.median_rel_delta,
                "spearman": self.tt.spearman, "tt_variance": self.tt.pred_variance}


@dataclass
class AblationReport:
    full: ModelScores
    flow_only: ModelScores

    def save(self, path):
        pd.DataFrame([self.full.row(), self.flow_only.row()]).to_csv(path, index=False)


def ablation_compare(full: GenTTP, flow_only: GenTTP, dataset: Dataset, split_name: str = "test") -> AblationReport:
    """Score both models on the same runs; the flow-only rollout must not depend on A."""
    comparable = ("cells", "interval", "flow_window", "assign_window", "hidden", "residual_channels",
                  "dilations", "fusion", "recurrent", "activation")
    mismatched = [k for k in comparable if getattr(full.cfg, k) != getattr(flow_only.cfg, k)]
    if mismatched:
        raise ValidationError(f"models differ in {', '.join(mismatched)}")
    if not full.cfg.use_assignments or flow_only.cfg.use_assignments:
        raise ValidationError("expected a full model and a flow-only model")

    runs = dataset.runs_in(split_name)
    index = WindowIndex(runs, dataset.spec)
    scores = []
    for name, model in (("full", full), ("flow_only", flow_only)):
        mae, rmse = evaluate_windows(model, index)
        scores.append(ModelScores(name, mae, rmse, evaluate_tt(model, runs)))
    if scores[1].tt.pred_variance != 0.0:
        raise ValidationError("flow-only rollout travel time varies across assignments")
    return AblationReport(*scores)


@dataclass
class SpeedReport:
    sim_seconds: List[float]
    surrogate_seconds: List[float]
    batched_seconds: float

    @property
    def median_ratio(self) -> float:
        return float(np.median(self.sim_seconds) / np.median(self.surrogate_seconds))

    @property
    def batched_ratio(self) -> float:
        return float(np.median(self.sim_seconds) / (self.batched_seconds / len(self.sim_seconds)))

    def save(self, path):
        per_assignment = self.batched_seconds / len(self.sim_seconds)
        pd.DataFrame({
            "assignment": np.arange(len(self.sim_seconds)),
            "sim_seconds": self.sim_seconds,
            "surrogate_seconds": self.surrogate_seconds,
            "batched_seconds_per_assignment": per_assignment,
            "ratio": np.array(self.sim_seconds) / np.array(self.surrogate_seconds),
        }).to_csv(path, index=False)


MIN_BENCH_ASSIGNMENTS = 5


def speed_bench(model: GenTTP, scenario: Scenario, assignments: Sequence[Assignment], sim_cfg: SimConfig,
                marking: str = "departure") -> SpeedReport:
    """Wall-clock of one simulation against one rollout per assignment, measured serially.

    The batched figure times a single vectorised rollout of every assignment.
    """
    if len(assignments) < MIN_BENCH_ASSIGNMENTS:
        raise ValidationError(f"speed bench needs at least {MIN_BENCH_ASSIGNMENTS} assignments")
    matrices = [
        assignment_matrix(scenario.demand, scenario.choice_sets, a, scenario.cmap, sim_cfg.intervals,
                          sim_cfg.interval, marking, scenario.net).matrix
        for a in assignments
    ]
    sim_seconds, surrogate_seconds = [], []
    for assignment, matrix in zip(assignments, matrices):
        started = time.perf_counter()
        scenario.simulate(assignment, sim_cfg)
        sim_seconds.append(time.perf_counter() - started)
        started = time.perf_counter()
        model.rollout(matrix)
        surrogate_seconds.append(time.perf_counter() - started)
    started = time.perf_counter()
    model.rollout_batch(np.stack(matrices))
    batched = time.perf_counter() - started
    report = SpeedReport(sim_seconds, surrogate_seconds, batched)
    logger.info("Speed: serial ratio %.1fx, batched ratio %.1fx", report.median_ratio, report.batched_ratio)
    return report
