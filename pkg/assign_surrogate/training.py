"""
Training - Teacher-forced mini-batch training with Adam and early stopping.
"""

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from . import autodiff as ad
from .dataset import Dataset, WindowIndex, flow_errors
from .errors import TrainingError, ValidationError
from .model import GenTTP, ModelConfig
from .sampler import derive_seed

logger = logging.getLogger(__name__)

LOSSES = {"mae": ad.mean_absolute_error, "mse": ad.mean_squared_error}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 128
    max_epochs: int = 100
    patience: int = 10
    min_delta: float = 0.0
    seed: int = 0
    gate_weight: float = 0.1
    clip_norm: float = 5.0
    loss: str = "mae"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError("batch_size must be at least 1")
        if self.patience < 1:
            raise ValidationError("patience must be at least 1")
        if self.max_epochs < 1:
            raise ValidationError("max_epochs must be at least 1")
        if self.learning_rate < 0 or self.gate_weight < 0 or self.clip_norm <= 0:
            raise ValidationError("learning_rate and gate_weight must be nonnegative, clip_norm positive")
        if self.loss not in LOSSES:
            raise ValidationError(f"unknown loss {self.loss!r}, expected one of {sorted(LOSSES)}")


class EarlyStopping:
    """
    Stops training when the validation error has not improved for
    ``patience`` consecutive epochs.
    """

    def __init__(self, patience: int = 10, min_delta: float = 0.0):
        """
        Args:
            patience: Epochs to wait after the last improvement
            min_delta: Minimum decrease that counts as an improvement
        """
        self.patience = patience
        self.min_delta = min_delta
        self.counter = 0
        self.best_score: Optional[float] = None
        self.best_epoch: Optional[int] = None
        self.early_stop = False

    def __call__(self, score: float, epoch: int) -> bool:
        """Record an epoch's validation error; returns True when it is a new best."""
        if self.best_score is None or self.best_score - score > self.min_delta:
            self.best_score = score
            self.best_epoch = epoch
            self.counter = 0
            return True
        self.counter += 1
        logger.debug("Early stopping counter %d of %d", self.counter, self.patience)
        if self.counter >= self.patience:
            self.early_stop = True
        return False


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_mae: float
    seconds: float
    samples_seen: int


@dataclass
class TrainReport:
    epochs: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_mae: float = float("inf")

    @property
    def samples_seen(self) -> int:
        return sum(e.samples_seen for e in self.epochs)

    def save(self, path):
        """Write ``epoch,train_loss,val_mae,seconds``."""
        pd.DataFrame(
            [(e.epoch, e.train_loss, e.val_mae, e.seconds) for e in self.epochs],
            columns=["epoch", "train_loss", "val_mae", "seconds"],
        ).to_csv(path, index=False)


def fit_scales(dataset: Dataset) -> Tuple[float, float]:
    """Input scales (flow, assignment) from the training runs, at least 1."""
    runs = dataset.runs_in("train")
    if not runs:
        return 1.0, 1.0
    flows = np.concatenate([r.flows.ravel() for r in runs]).astype(np.float64)
    assignments = np.concatenate([r.assignments.ravel() for r in runs]).astype(np.float64)
    return max(1.0, float(flows.std())), max(1.0, float(assignments.std()))


def evaluate_split(model: GenTTP, dataset: Dataset, name: str, batch_size: int = 512) -> Tuple[float, float]:
    """One-step (MAE, RMSE) with ground-truth history windows."""
    index = dataset.windows(name)
    return evaluate_windows(model, index, batch_size)


def evaluate_windows(model: GenTTP, index: WindowIndex, batch_size: int = 512) -> Tuple[float, float]:
    if not len(index):
        raise ValidationError("cannot evaluate an empty split")
    preds, targets = [], []
    for start in range(0, len(index), batch_size):
        a_win, q_win, target = index.gather(np.arange(start, min(start + batch_size, len(index))))
        preds.append(model.predict(a_win, q_win))
        targets.append(target)
    return flow_errors(np.concatenate(preds), np.concatenate(targets))


def _parameter_norms(params: Dict[str, ad.Tensor]) -> str:
    return ", ".join(f"{name}={np.linalg.norm(p.data):.3g}" for name, p in params.items())


class Trainer:
    """Runs the optimisation of one model on the train split of a dataset."""

    def __init__(self, model: GenTTP, dataset: Dataset, cfg: TrainConfig):
        self.model = model
        self.dataset = dataset
        self.cfg = cfg
        self.train_index = dataset.windows("train")
        self.val_index = dataset.windows("val")
        if not len(self.train_index):
            raise ValidationError("training split has no samples")
        if not len(self.val_index):
            raise ValidationError("validation split has no samples")
        self.optimizer = ad.Adam(model.params, learning_rate=cfg.learning_rate)
        self._rng = np.random.default_rng(derive_seed(cfg.seed, "shuffle"))
        self._loss_fn = LOSSES[cfg.loss]

    def batch_loss(self, a_win, q_win, target) -> ad.Tensor:
        step = self.model.forward(a_win, q_win)
        loss = self._loss_fn(step.flow, target)
        if self.cfg.gate_weight > 0:
            occupied = (target > 0).astype(np.float64)
            loss = loss + ad.binary_cross_entropy_with_logits(step.gate_logit, occupied) * self.cfg.gate_weight
        return loss

    def train_epoch(self, epoch: int) -> Tuple[float, int]:
        """One pass over the shuffled training samples; returns (mean loss, samples used)."""
        order = self._rng.permutation(len(self.train_index))
        total, seen = 0.0, 0
        for batch, start in enumerate(range(0, len(order), self.cfg.batch_size)):
            rows = order[start:start + self.cfg.batch_size]
            a_win, q_win, target = self.train_index.gather(rows)
            self.optimizer.zero_grad()
            loss = self.batch_loss(a_win, q_win, target)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {batch}; parameter norms: "
                    f"{_parameter_norms(self.model.params)}"
                )
            loss.backward()
            ad.clip_grad_norm(self.model.params, self.cfg.clip_norm)
            self.optimizer.step()
            total += value * len(rows)
            seen += len(rows)
        return total / seen, seen

    def fit(self, checkpoint_dir=None, progress: bool = False) -> TrainReport:
        """Train until ``max_epochs`` or early stop and restore the best-validation parameters."""
        report = TrainReport()
        stopper = EarlyStopping(self.cfg.patience, self.cfg.min_delta)
        best_values = {name: p.data.copy() for name, p in self.model.params.items()}
        for epoch in tqdm(range(1, self.cfg.max_epochs + 1), desc="Training", disable=not progress):
            started = time.perf_counter()
            train_loss, seen = self.train_epoch(epoch)
            val_mae, _ = evaluate_windows(self.model, self.val_index)
            report.epochs.append(EpochRecord(epoch, train_loss, val_mae, time.perf_counter() - started, seen))
            logger.info("Epoch %d: train loss %.4f, val MAE %.4f", epoch, train_loss, val_mae)
            if stopper(val_mae, epoch):
                best_values = {name: p.data.copy() for name, p in self.model.params.items()}
                if checkpoint_dir is not None:
                    self.model.save(checkpoint_dir)
            if stopper.early_stop:
                logger.info("Early stop after epoch %d (best epoch %d)", epoch, stopper.best_epoch)
                break

        for name, p in self.model.params.items():
            p.data = best_values[name]
        report.best_epoch = stopper.best_epoch
        report.best_val_mae = stopper.best_score
        return report


def train(dataset: Dataset, adjacency: np.ndarray, model_cfg: ModelConfig, train_cfg: TrainConfig,
          flow_only: bool = False, checkpoint_dir=None, progress: bool = False) -> Tuple[GenTTP, TrainReport]:
    """Fit a model on ``dataset`` and return it with its best-validation parameters.

    Args:
        model_cfg: Architecture settings; cells, windows, interval and input
            scales are taken from the dataset.
        flow_only: Train the ablation with the assignment branch disabled.
        checkpoint_dir: When given, the best model so far is saved there.

    Returns:
        (model, report)
    """
    flow_scale, assign_scale = fit_scales(dataset)
    spec = dataset.spec
    cfg = replace(model_cfg, cells=spec.cells, interval=spec.interval,
                  flow_window=spec.flow_window, assign_window=spec.assign_window,
                  flow_scale=flow_scale, assign_scale=assign_scale,
                  gate_weight=train_cfg.gate_weight, use_assignments=not flow_only)
    model = GenTTP.create(cfg, adjacency, derive_seed(train_cfg.seed, "init"))
    logger.info("Training %s model on %d runs", "flow-only" if flow_only else "full", len(dataset.runs_in("train")))
    report = Trainer(model, dataset, train_cfg).fit(checkpoint_dir, progress)
    if checkpoint_dir is not None:
        model.save(checkpoint_dir)
        report.save(Path(checkpoint_dir) / "report.csv")
    return model, report
