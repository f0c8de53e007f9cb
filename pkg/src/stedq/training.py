"""Mini-batch SGD training with early stopping and best-weight retention."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine
from .errors import DataError, TrainingDivergedError
from .network import Checkpoint, Network

EVAL_BATCH = 100
IMPROVEMENT_TOLERANCE = 1e-6


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 100
    patience_epochs: int = 10
    max_epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise DataError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise DataError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 2:
            raise DataError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.patience_epochs < 1 or self.max_epochs < 1:
            raise DataError("patience_epochs and max_epochs must be >= 1")


@dataclass
class TrainingHistory:
    """Per-epoch RMSE curves plus the early-stopping bookkeeping."""

    train_rmse: list[float] = field(default_factory=list)
    val_rmse: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0


@dataclass
class TensorDataset:
    """Normalized images (n, 1, h, w) with scores (n,); trainer input."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.x.ndim != 4 or self.y.ndim != 1 or self.x.shape[0] != self.y.shape[0]:
            raise DataError(f"inconsistent dataset shapes {self.x.shape} / {self.y.shape}")

    def __len__(self) -> int:
        return self.x.shape[0]


class EarlyStopper:
    """Stop after ``patience`` epochs without a strict improvement.

    Improvement means the best validation RMSE drops by more than a fixed
    tolerance (1e-6).
    """

    def __init__(self, patience: int):
        self.patience = patience
        self.best = float("inf")
        self.best_epoch = 0
        self.epochs_since_best = 0

    def update(self, epoch: int, val_rmse: float) -> bool:
        """Record one epoch; returns True when the epoch improved the best."""
        if val_rmse < self.best - IMPROVEMENT_TOLERANCE:
            self.best = val_rmse
            self.best_epoch = epoch
            self.epochs_since_best = 0
            return True
        self.epochs_since_best += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.epochs_since_best >= self.patience


def _batch_slices(n: int, batch_size: int) -> list[np.ndarray]:
    """Index blocks of batch_size; a trailing singleton is merged into the
    previous batch (batch norm needs at least 2 samples)."""
    edges = list(range(0, n, batch_size))
    blocks = [np.arange(start, min(start + batch_size, n)) for start in edges]
    if len(blocks) > 1 and len(blocks[-1]) == 1:
        blocks[-2] = np.concatenate([blocks[-2], blocks[-1]])
        blocks.pop()
    return blocks


def evaluate(net: Network, dataset: TensorDataset) -> float:
    """Root mean squared error in inference mode."""
    if len(dataset) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    sq_sum = 0.0
    for start in range(0, len(dataset), EVAL_BATCH):
        chunk = slice(start, start + EVAL_BATCH)
        pred = net.predict(dataset.x[chunk])
        sq_sum += float(np.sum((pred - dataset.y[chunk]) ** 2))
    return float(np.sqrt(sq_sum / len(dataset)))


def train(net: Network, train_set: TensorDataset, val_set: TensorDataset,
          cfg: TrainingConfig) -> tuple[Checkpoint, TrainingHistory]:
    """Seed-shuffled mini-batch SGD with momentum; keeps the best-epoch weights.

    The train set must already be normalized and augmented; validation RMSE is
    computed in inference mode after every epoch.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise DataError("training and validation sets must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    opt = engine.OptimizerState(cfg.learning_rate, cfg.momentum)
    stopper = EarlyStopper(cfg.patience_epochs)
    history = TrainingHistory()
    best_snapshot = net.snapshot()
    n = len(train_set)

    for epoch in range(1, cfg.max_epochs + 1):
        perm = rng.permutation(n)
        sq_sum = 0.0
        for block in _batch_slices(n, cfg.batch_size):
            idx = perm[block]
            xb, yb = train_set.x[idx], train_set.y[idx]
            scores, caches = net.forward(xb, train=True)
            loss, dpred = engine.mse_loss(scores, yb)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became non-finite in epoch {epoch}; "
                    f"last finite epoch was {epoch - 1}",
                    last_finite_epoch=epoch - 1)
            grads = net.backward(caches, dpred)
            engine.sgd_momentum_step(net.parameters, grads, opt)
            sq_sum += loss * len(idx)
        history.train_rmse.append(float(np.sqrt(sq_sum / n)))
        val_rmse = evaluate(net, val_set)
        history.val_rmse.append(val_rmse)
        if stopper.update(epoch, val_rmse):
            best_snapshot = net.snapshot()
        history.stopped_epoch = epoch
        if stopper.should_stop:
            break

    history.best_epoch = stopper.best_epoch
    net.restore(best_snapshot)
    metadata = {
        "epoch": str(stopper.best_epoch),
        "val_rmse": repr(stopper.best),
        "stopped_epoch": str(history.stopped_epoch),
    }
    return Checkpoint.from_network(net, metadata), history
