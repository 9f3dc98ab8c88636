"""Adam training, early stopping, learning-rate grid search and nested CV."""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from . import unet as U
from .data import SampleRecord, augment_all, split_dataset
from .evaluate import MetricSuite, evaluate_corpus

log = logging.getLogger(__name__)

DEFAULT_LR_GRID = (0.0001, 0.0005, 0.001, 0.005, 0.01)


class NumericError(FloatingPointError):
    """A loss or parameter became NaN or infinite."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    max_epochs: int = 40
    patience: int = 5
    batch_size: int = 8
    seed: int = 0
    lr_grid: Tuple[float, ...] = DEFAULT_LR_GRID
    outer_folds: int = 5
    inner_folds: int = 1  # 1 = single 4:1 split of the outer-training bases
    optimizer: str = "adam"

    def __post_init__(self):
        object.__setattr__(self, "lr_grid", tuple(float(v) for v in self.lr_grid))
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.lr_grid:
            raise ValueError("lr_grid must not be empty")
        if self.outer_folds < 2:
            raise ValueError("outer_folds must be >= 2")
        if self.inner_folds < 1:
            raise ValueError("inner_folds must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


# -- optimisers ----------------------------------------------------------------

class Adam:
    """Adam with bias-corrected moment estimates; one state slot per tensor."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        self.t += 1
        adam_step(params, grads, self, self.lr, self.beta1, self.beta2, self.eps, self.t)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8, t=1):
    """Update ``params`` in place. ``state`` needs dict attributes ``m`` and ``v``."""
    if t < 1:
        raise ValueError("t must be >= 1")
    bc1 = 1 - beta1 ** t
    bc2 = 1 - beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise T.ShapeError(f"grad for {name!r} has shape {g.shape}, param has {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        p -= (lr / bc1) * m / (np.sqrt(v / bc2) + eps)
    return params, state


class SGD:
    def __init__(self, lr=1e-3):
        self.lr = lr

    def step(self, params, grads):
        for name, p in params.items():
            p -= self.lr * grads[name]


def make_optimizer(config: TrainConfig, lr: float | None = None):
    lr = config.lr if lr is None else lr
    return Adam(lr) if config.optimizer == "adam" else SGD(lr)


# -- tensors -------------------------------------------------------------------

def record_tensors(record: SampleRecord):
    """Network input and float target for a preprocessed record."""
    img = np.asarray(record.image, dtype=np.float32)
    if img.ndim != 3:
        raise ValueError(f"record {record.id!r}: image must be preprocessed to (C, S, S)")
    return img, record.mask.data.astype(np.float32)


def stack_records(records: Sequence[SampleRecord]):
    xs, ts = zip(*(record_tensors(r) for r in records))
    return np.stack(xs), np.stack(ts)


def _check_finite(loss: float, where: str):
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss during {where}")


def train_epoch(model: U.UNetModel, records, config: TrainConfig, rng: np.random.Generator,
                optimizer=None) -> float:
    """One shuffled pass in mini-batches; returns the mean per-batch loss."""
    if isinstance(records, tuple):
        x_all, t_all = records
    else:
        if not records:
            raise ValueError("empty training set")
        x_all, t_all = stack_records(records)
    if len(x_all) == 0:
        raise ValueError("empty training set")
    optimizer = optimizer or make_optimizer(config)
    order = rng.permutation(len(x_all))
    losses = []
    for start in range(0, len(order), config.batch_size):
        idx = order[start:start + config.batch_size]
        loss, grads = U.loss_and_grads(model, x_all[idx], t_all[idx])
        _check_finite(loss, "training")
        optimizer.step(model.params, grads)
        losses.append(loss)
    return float(np.mean(losses))


def dataset_loss(model: U.UNetModel, x_all, t_all, batch_size: int = 8) -> float:
    """Mean BCE over every element of the set."""
    total = 0.0
    for start in range(0, len(x_all), batch_size):
        logits = U.forward(model, x_all[start:start + batch_size])
        total += T.bce_with_logits(logits, t_all[start:start + batch_size]) * logits.size
    return total / (t_all.size)


class EarlyStopping:
    """Track the best validation loss; signal a stop after ``patience`` misses."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.misses = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        """Record ``val_loss``; return True if it is a new best."""
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = epoch
            self.misses = 0
            return True
        self.misses += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.misses >= self.patience


@dataclass
class FitResult:
    model: U.UNetModel
    lr: float
    train_loss: List[float]
    val_loss: List[float]
    best_epoch: int  # 1-based

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch - 1]


def fit(model: U.UNetModel, train_records, val_records, config: TrainConfig,
        lr: float | None = None,
        val_loss_fn: Optional[Callable[[U.UNetModel, int], float]] = None) -> FitResult:
    """Train with early stopping on validation BCE, restoring the best weights.

    ``model`` is trained in place and ends holding the best-epoch weights.
    ``val_loss_fn(model, epoch)`` overrides the validation measurement.
    """
    if not train_records or not val_records:
        raise ValueError("training and validation sets must be non-empty")
    lr = config.lr if lr is None else lr
    train_xy = stack_records(train_records)
    val_xy = stack_records(val_records)
    rng = np.random.default_rng(config.seed)
    opt = make_optimizer(config, lr)
    stopper = EarlyStopping(config.patience)
    best_params = None
    tr_curve, va_curve = [], []
    for epoch in range(1, config.max_epochs + 1):
        tr = train_epoch(model, train_xy, config, rng, opt)
        va = val_loss_fn(model, epoch) if val_loss_fn else dataset_loss(model, *val_xy, config.batch_size)
        _check_finite(va, "validation")
        tr_curve.append(tr)
        va_curve.append(float(va))
        if stopper.update(epoch, va):
            best_params = {k: v.copy() for k, v in model.params.items()}
        log.debug("lr=%g epoch=%d train=%.6f val=%.6f", lr, epoch, tr, va)
        if stopper.should_stop:
            break
    for k, v in best_params.items():
        model.params[k][...] = v
    return FitResult(model, lr, tr_curve, va_curve, stopper.best_epoch)


# -- grid search and nested CV ------------------------------------------------------

@dataclass
class GridResult:
    best_lr: float
    best: FitResult
    val_loss: Dict[float, float]  # lr -> selection loss
    fits: Dict[float, FitResult] = field(default_factory=dict)


def _fit_arm(args):
    model_config, config, lr, train_records, val_records, init_seed = args
    model = U.build_unet(model_config, init_seed)
    return fit(model, train_records, val_records, config, lr=lr)


def _map(fn, jobs_args, jobs: int):
    if jobs <= 1 or len(jobs_args) <= 1:
        return [fn(a) for a in jobs_args]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, jobs_args))


def grid_search(train_records, val_records, model_config: U.UNetConfig, config: TrainConfig,
                init_seed: int = 0, jobs: int = 1) -> GridResult:
    """Fit one model per learning rate on identical data and seeds.

    The arm with the lowest best-epoch validation loss wins; exact ties go
    to the smaller learning rate.
    """
    grid = sorted(set(config.lr_grid))
    fits = _map(_fit_arm, [(model_config, config, lr, train_records, val_records, init_seed)
                           for lr in grid], jobs)
    by_lr = dict(zip(grid, fits))
    losses = {lr: f.best_val_loss for lr, f in by_lr.items()}
    best_lr = min(grid, key=lambda lr: (losses[lr], lr))
    return GridResult(best_lr, by_lr[best_lr], losses, by_lr)


def kfold_partition(ids: Sequence[str], k: int, seed: int) -> List[List[str]]:
    """Shuffle sorted ``ids`` with ``seed`` and deal them into ``k`` folds."""
    ids = sorted(ids)
    if len(ids) < k:
        raise ValueError(f"need at least {k} base images for {k} folds, got {len(ids)}")
    order = np.random.default_rng(seed).permutation(len(ids))
    return [[ids[i] for i in part] for part in np.array_split(order, k)]


@dataclass
class FoldResult:
    fold: int
    lr: float
    train_loss: List[float]
    val_loss: List[float]
    best_epoch: int
    metrics: MetricSuite
    test_ids: List[str]  # outer-test base ids
    inner_ids: List[str]  # every record id the inner search touched
    grid: Dict[float, float]

    def to_dict(self) -> dict:
        return {
            "fold": self.fold, "lr": self.lr, "best_epoch": self.best_epoch,
            "train_loss": self.train_loss, "val_loss": self.val_loss,
            "metrics": self.metrics.to_dict(), "test_ids": self.test_ids,
            "grid": {repr(k): v for k, v in self.grid.items()},
        }


@dataclass
class CVResult:
    folds: List[FoldResult]
    accuracy_mean: float
    accuracy_sd: float

    def summary(self) -> dict:
        return {"accuracy_mean": self.accuracy_mean, "accuracy_sd": self.accuracy_sd,
                "chosen_lr": [f.lr for f in self.folds]}


def _inner_select(train_bases: List[SampleRecord], model_config, config, fold_seed, jobs):
    ids = [r.base_id for r in train_bases]
    by_id = {r.base_id: r for r in train_bases}
    if config.inner_folds == 1:
        tr_ids, va_ids = split_dataset(ids, (4, 1), fold_seed)
        tr = augment_all(by_id[i] for i in tr_ids)
        va = augment_all(by_id[i] for i in va_ids)
        res = grid_search(tr, va, model_config, config, init_seed=config.seed, jobs=jobs)
        return res.best_lr, res.best, res.val_loss, [r.id for r in tr + va]
    # full inner K-fold: average the best val loss of each lr across inner folds
    parts = kfold_partition(ids, config.inner_folds, fold_seed)
    totals: Dict[float, List[float]] = {}
    touched = set()
    for j, part in enumerate(parts):
        va = augment_all(by_id[i] for i in part)
        tr = augment_all(by_id[i] for i in ids if i not in set(part))
        touched.update(r.id for r in tr + va)
        res = grid_search(tr, va, model_config, config, init_seed=config.seed, jobs=jobs)
        for lr, loss in res.val_loss.items():
            totals.setdefault(lr, []).append(loss)
    means = {lr: float(np.mean(v)) for lr, v in totals.items()}
    best_lr = min(means, key=lambda lr: (means[lr], lr))
    tr_ids, va_ids = split_dataset(ids, (4, 1), fold_seed)
    tr = augment_all(by_id[i] for i in tr_ids)
    va = augment_all(by_id[i] for i in va_ids)
    final = fit(U.build_unet(model_config, config.seed), tr, va, config, lr=best_lr)
    return best_lr, final, means, sorted(touched | {r.id for r in tr + va})


def nested_cv(base_records: Sequence[SampleRecord], model_config: U.UNetConfig,
              config: TrainConfig, threshold: float = 0.5, jobs: int = 1) -> CVResult:
    """Outer K-fold over base images with an inner learning-rate search.

    Folds are assigned on base images; augmentation happens afterwards, so
    no flipped copy of a test image is ever seen during selection or
    training.
    """
    for r in base_records:
        if r.variant != "none":
            raise ValueError(f"nested_cv expects base records, got variant {r.variant!r} ({r.id})")
    by_id = {r.base_id: r for r in base_records}
    if len(by_id) != len(base_records):
        raise ValueError("duplicate base ids")
    folds = kfold_partition(list(by_id), config.outer_folds, config.seed)
    results = []
    for k, test_ids in enumerate(folds):
        test_set = set(test_ids)
        train_bases = [by_id[i] for i in sorted(by_id) if i not in test_set]
        lr, fitted, grid, inner_ids = _inner_select(
            train_bases, model_config, config, config.seed + 1000 * (k + 1), jobs)
        test_records = augment_all(by_id[i] for i in sorted(test_ids))
        ev = evaluate_corpus(fitted.model, test_records, threshold, config.batch_size)
        log.info("fold %d: lr=%g accuracy=%.6f", k, lr, ev.suite.macro["accuracy"])
        results.append(FoldResult(k, lr, fitted.train_loss, fitted.val_loss, fitted.best_epoch,
                                  ev.suite, sorted(test_ids), inner_ids, grid))
    acc = np.array([f.metrics.macro["accuracy"] for f in results])
    return CVResult(results, float(acc.mean()), float(acc.std(ddof=1)))


# -- run directories -----------------------------------------------------------------

def new_run_dir(root, prefix: str = "run") -> Path:
    """Create ``root/<prefix>-NNNN`` with the next unused number."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    n = 1
    while (root / f"{prefix}-{n:04d}").exists():
        n += 1
    path = root / f"{prefix}-{n:04d}"
    path.mkdir()
    return path


def write_curves(path, train_loss: Sequence[float], val_loss: Sequence[float]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for i, (a, b) in enumerate(zip(train_loss, val_loss), start=1):
            w.writerow([i, repr(float(a)), repr(float(b))])


def write_fit(run_dir, result: FitResult, snapshot: dict) -> None:
    run_dir = Path(run_dir)
    (run_dir / "config.json").write_text(json.dumps(snapshot, indent=1, sort_keys=True) + "\n")
    write_curves(run_dir / "curves.csv", result.train_loss, result.val_loss)
    U.save_weights(result.model, run_dir / "weights.mssw")
    summary = {"lr": result.lr, "best_epoch": result.best_epoch,
               "best_val_loss": result.best_val_loss, "epochs_run": len(result.val_loss)}
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
