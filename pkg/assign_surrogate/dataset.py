"""
Dataset - Supervised windows over simulation runs, run-level split and storage.

A sample pairs the last W_A assignment columns and the last W_Q flow columns
before interval t with the flow column at t. Runs are left-padded with zeros,
the empty network before departures start.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import DatasetError, ValidationError

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
FORMAT_VERSION = 1


@dataclass(frozen=True)
class DatasetSpec:
    cells: int
    interval: float
    flow_window: int = 12
    assign_window: int = 12

    def __post_init__(self):
        if self.cells < 1:
            raise ValidationError("dataset needs at least one cell")
        if self.interval <= 0:
            raise ValidationError("interval must be positive")
        if self.flow_window < 1 or self.assign_window < 1:
            raise ValidationError("window lengths must be at least 1")

    @property
    def padding(self) -> int:
        return max(self.flow_window, self.assign_window)


@dataclass(frozen=True, eq=False)
class SimulationRun:
    """Assignment matrix A, flow matrix Q (both S x T_i) and simulated travel time of one run."""

    sim_id: int
    assignments: np.ndarray
    flows: np.ndarray
    travel_time: float

    def __post_init__(self):
        if self.assignments.ndim != 2 or self.assignments.shape != self.flows.shape:
            raise ValidationError(
                f"run {self.sim_id}: A has shape {self.assignments.shape}, Q has shape {self.flows.shape}"
            )

    @property
    def cells(self) -> int:
        return self.flows.shape[0]

    @property
    def intervals(self) -> int:
        return self.flows.shape[1]

    def __eq__(self, other):
        return (isinstance(other, SimulationRun) and self.sim_id == other.sim_id
                and self.travel_time == other.travel_time
                and np.array_equal(self.assignments, other.assignments)
                and np.array_equal(self.flows, other.flows))


@dataclass(frozen=True, eq=False)
class Sample:
    sim_id: int
    t: int
    assign_window: np.ndarray
    flow_window: np.ndarray
    target: np.ndarray


class WindowIndex:
    """Every (run, t) target with t in [1, T_i), gathered from padded, stacked run matrices."""

    def __init__(self, runs: Sequence[SimulationRun], spec: DatasetSpec):
        self.spec = spec
        pad = spec.padding
        assign_parts, flow_parts, pairs = [], [], []
        offset = 0
        for i, run in enumerate(runs):
            if run.cells != spec.cells:
                raise ValidationError(f"run {run.sim_id}: {run.cells} cells, dataset expects {spec.cells}")
            assign_parts.append(np.zeros((pad, spec.cells)))
            assign_parts.append(run.assignments.T.astype(np.float64))
            flow_parts.append(np.zeros((pad, spec.cells)))
            flow_parts.append(run.flows.T.astype(np.float64))
            pairs.extend((i, offset + pad + t, t) for t in range(1, run.intervals))
            offset += pad + run.intervals

        self._assign = np.concatenate(assign_parts) if assign_parts else np.zeros((0, spec.cells))
        self._flows = np.concatenate(flow_parts) if flow_parts else np.zeros((0, spec.cells))
        rows = np.array(pairs, dtype=np.int64).reshape(-1, 3)
        self.run_index = rows[:, 0]
        self._rows = rows[:, 1]
        self.targets_t = rows[:, 2]
        self.sim_ids = np.array([runs[i].sim_id for i in self.run_index], dtype=np.int64)

    def __len__(self):
        return len(self._rows)

    def gather(self, index) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Windows and targets for the given sample positions.

        Returns:
            (A windows (B, W_A, S), Q windows (B, W_Q, S), targets (B, S))
        """
        rows = self._rows[np.asarray(index, dtype=np.int64)]
        a_offsets = np.arange(-self.spec.assign_window, 0)
        q_offsets = np.arange(-self.spec.flow_window, 0)
        return (self._assign[rows[:, None] + a_offsets],
                self._flows[rows[:, None] + q_offsets],
                self._flows[rows])

    def samples(self) -> Iterator[Sample]:
        for position in range(len(self)):
            a_win, q_win, target = self.gather([position])
            yield Sample(int(self.sim_ids[position]), int(self.targets_t[position]), a_win[0], q_win[0], target[0])


def build_samples(runs: Sequence[SimulationRun], spec: DatasetSpec) -> Iterator[Sample]:
    """One sample per (run, t), t in [1, T_i), in run order."""
    return WindowIndex(runs, spec).samples()


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.70
    val: float = 0.10
    test: float = 0.20

    def __post_init__(self):
        if min(self.train, self.val, self.test) < 0:
            raise ValidationError("split fractions must be nonnegative")
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise ValidationError("split fractions must sum to 1")


@dataclass(frozen=True)
class Split:
    train: Tuple[int, ...]
    val: Tuple[int, ...]
    test: Tuple[int, ...]

    def __getitem__(self, name: str) -> Tuple[int, ...]:
        if name not in SPLITS:
            raise ValidationError(f"unknown split {name!r}, expected one of {SPLITS}")
        return getattr(self, name)

    @property
    def sizes(self) -> Tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)


MIN_RUNS_TO_SPLIT = 10


def split(run_ids: Sequence[int], spec: SplitSpec, seed: int) -> Split:
    """Seeded shuffle of the run ids, then a contiguous train/val/test partition."""
    if len(run_ids) < MIN_RUNS_TO_SPLIT:
        raise ValidationError(f"splitting needs at least {MIN_RUNS_TO_SPLIT} runs, got {len(run_ids)}")
    order = np.random.default_rng(seed).permutation(np.asarray(run_ids, dtype=np.int64))
    n = len(order)
    n_train = math.floor(round(n * spec.train, 9))
    n_val = math.floor(round(n * spec.val, 9))
    return Split(
        tuple(sorted(int(i) for i in order[:n_train])),
        tuple(sorted(int(i) for i in order[n_train:n_train + n_val])),
        tuple(sorted(int(i) for i in order[n_train + n_val:])),
    )


@dataclass(eq=False)
class Dataset:
    spec: DatasetSpec
    runs: Tuple[SimulationRun, ...]
    partition: Optional[Split] = None

    def __post_init__(self):
        self.runs = tuple(self.runs)
        self._by_id = {run.sim_id: run for run in self.runs}
        if len(self._by_id) != len(self.runs):
            raise ValidationError("duplicate sim_id in dataset")

    def __eq__(self, other):
        return (isinstance(other, Dataset) and self.spec == other.spec
                and self.partition == other.partition and self.runs == other.runs)

    def run(self, sim_id: int) -> SimulationRun:
        if sim_id not in self._by_id:
            raise ValidationError(f"no simulation run with id {sim_id}")
        return self._by_id[sim_id]

    def runs_in(self, name: str) -> List[SimulationRun]:
        if self.partition is None:
            raise ValidationError("dataset has no split")
        return [self._by_id[i] for i in self.partition[name]]

    def windows(self, name: str) -> WindowIndex:
        return WindowIndex(self.runs_in(name), self.spec)


def flow_errors(pred: np.ndarray, target: np.ndarray) -> Tuple[float, float]:
    """(MAE, RMSE) over every entry."""
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValidationError(f"prediction shape {pred.shape} does not match target shape {target.shape}")
    if pred.size == 0:
        raise ValidationError("no values to compare")
    diff = pred - target
    return float(np.abs(diff).mean()), float(np.sqrt((diff * diff).mean()))


def persistence_metrics(dataset: Dataset, name: str) -> Tuple[float, float]:
    """(MAE, RMSE) of the baseline that repeats the previous flow column."""
    index = dataset.windows(name)
    if not len(index):
        raise ValidationError(f"split {name!r} has no samples")
    _, q_win, target = index.gather(np.arange(len(index)))
    return flow_errors(q_win[:, -1], target)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def _write_matrix(path: Path, matrix: np.ndarray):
    np.savetxt(path, matrix, fmt="%d", delimiter=",")


def read_matrix(path: Path, shape: Tuple[int, int]) -> np.ndarray:
    if not path.exists():
        raise DatasetError(f"file not found: {path}")
    try:
        matrix = np.loadtxt(path, delimiter=",", dtype=np.int64, ndmin=2)
    except ValueError as e:
        raise DatasetError(f"{path}: {e}") from None
    if matrix.shape != shape:
        raise DatasetError(f"{path}: expected shape {shape}, found {matrix.shape}")
    return matrix


def read_travel_time(path: Path) -> float:
    """Total travel time [s] from a run summary file."""
    if not path.exists():
        raise DatasetError(f"file not found: {path}")
    try:
        return float(pd.read_csv(path, float_precision="round_trip")["TT_s"].iloc[0])
    except (KeyError, IndexError, ValueError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DatasetError(f"{path}: {e}") from None


def save_dataset(path, dataset: Dataset):
    """Write ``manifest.json`` plus ``runs/<sim_id>/{A,Q,summary}.csv``."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    for run in dataset.runs:
        run_dir = root / "runs" / str(run.sim_id)
        run_dir.mkdir(parents=True, exist_ok=True)
        _write_matrix(run_dir / "A.csv", run.assignments)
        _write_matrix(run_dir / "Q.csv", run.flows)
        pd.DataFrame(
            [(run.sim_id, run.travel_time, run.travel_time / 60.0)], columns=["sim_id", "TT_s", "TT_min"]
        ).to_csv(run_dir / "summary.csv", index=False)

    manifest = {
        "version": FORMAT_VERSION,
        "spec": asdict(dataset.spec),
        "counts": {"runs": len(dataset.runs), "samples": sum(max(r.intervals - 1, 0) for r in dataset.runs)},
        "split": asdict(dataset.partition) if dataset.partition is not None else None,
        "runs": [{"sim_id": r.sim_id, "intervals": r.intervals} for r in dataset.runs],
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("Saved dataset with %d runs to %s", len(dataset.runs), root)


def load_dataset(path) -> Dataset:
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DatasetError(f"file not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        spec = DatasetSpec(**manifest["spec"])
        entries = manifest["runs"]
        partition = manifest.get("split")
    except (ValueError, KeyError, TypeError) as e:
        raise DatasetError(f"{manifest_path}: {e}") from None

    runs = []
    for entry in entries:
        sim_id, intervals = int(entry["sim_id"]), int(entry["intervals"])
        run_dir = root / "runs" / str(sim_id)
        shape = (spec.cells, intervals)
        assignments = read_matrix(run_dir / "A.csv", shape)
        flows = read_matrix(run_dir / "Q.csv", shape)
        travel_time = read_travel_time(run_dir / "summary.csv")
        runs.append(SimulationRun(sim_id, assignments, flows, travel_time))

    if partition is not None:
        partition = Split(*(tuple(int(i) for i in partition[name]) for name in SPLITS))
    return Dataset(spec, tuple(runs), partition)
