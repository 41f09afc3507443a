"""Training loop with batch size 1, validation early stopping, and evaluation."""

from __future__ import annotations

import logging
import math
import resource
import time
from dataclasses import dataclass, field

import numpy as np

from reconmil import diffcore as dc
from reconmil.bagstore import CLASSIFICATION, FeatureBag
from reconmil.heads import (ModelParams, model_forward, risk_score, survival_cut_points, task_loss,
                            total_loss)
from reconmil.harness.config import TrainConfig
from reconmil.metrics import MetricsReport, classification_report, survival_report

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    def __init__(self, step: int, epoch: int):
        super().__init__(f"non-finite loss at step {step} (epoch {epoch})")
        self.step = step
        self.epoch = epoch


def order_bag(bag: FeatureBag, ordering: str) -> FeatureBag:
    """coords_raster: sort instances by (row, col); file_order: unchanged."""
    if ordering == "file_order" or bag.coords is None:
        return bag
    order = np.lexsort((bag.coords[:, 1], bag.coords[:, 0]))
    if np.array_equal(order, np.arange(len(order))):
        return bag
    return bag.reordered(order)


class EarlyStopping:
    """Tracks the best validation loss; ``update`` returns True when training should stop."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = epoch
            return False
        return epoch - self.best_epoch >= self.patience


@dataclass
class RunRecord:
    config: dict
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    best_epoch: int = 0
    epochs_run: int = 0
    metrics: MetricsReport | None = None
    epoch_seconds: list = field(default_factory=list)
    peak_rss_mb: float = 0.0
    checkpoint_path: str | None = None
    cut_points: list | None = None

    def to_dict(self) -> dict:
        return {
            "config": self.config, "train_losses": self.train_losses, "val_losses": self.val_losses,
            "best_epoch": self.best_epoch, "epochs_run": self.epochs_run,
            "metrics": None if self.metrics is None else self.metrics.to_dict(),
            "epoch_seconds": self.epoch_seconds, "peak_rss_mb": self.peak_rss_mb,
            "checkpoint_path": self.checkpoint_path, "cut_points": self.cut_points,
        }


@dataclass
class TrainResult:
    record: RunRecord
    params: ModelParams


def _cut_points(bags, cfg: TrainConfig):
    if cfg.task == CLASSIFICATION:
        return None
    return survival_cut_points([b.label.event_time for b in bags], [b.label.event_observed for b in bags], cfg.T)


def bag_loss(bag: FeatureBag, params: ModelParams, lambda_rec: float, cut_points=None):
    fr = model_forward(bag, params, want_saliency=False)
    return total_loss(task_loss(fr.logits, bag.label, cut_points), fr.L_rec, lambda_rec)


def mean_loss(bags, params: ModelParams, lambda_rec: float, cut_points=None) -> float:
    return float(np.mean([bag_loss(b, params, lambda_rec, cut_points).item() for b in bags]))


def infer_classes(bags) -> int:
    return max(b.label.class_index for b in bags) + 1


def train_run(train_bags, val_bags, cfg: TrainConfig, test_bags=None, num_classes: int | None = None,
              stopper: EarlyStopping | None = None, baseline: bool = False) -> TrainResult:
    """Train one model; returns the best-epoch parameters and the run record.

    Metrics are computed on ``test_bags`` when given, otherwise on the validation split.
    """
    if not train_bags or not val_bags:
        raise ValueError("empty split")
    train = [order_bag(b, cfg.ordering) for b in train_bags]
    val = [order_bag(b, cfg.ordering) for b in val_bags]
    for b in train + val:
        if b.dim != cfg.D:
            raise ValueError(f"dimension mismatch: bag {b.bag_id} has D={b.dim}, config D={cfg.D}")
    if cfg.task == CLASSIFICATION and num_classes is None:
        num_classes = cfg.num_classes or infer_classes(train + val + list(test_bags or []))
    cuts = _cut_points(train, cfg)
    params = ModelParams.init(cfg.arch(num_classes, baseline), cfg.seed)
    ps = params.values
    state = dc.AdamState.zeros_like(ps.flat)
    stopper = stopper or EarlyStopping(cfg.patience)
    record = RunRecord(config=dict(cfg.to_dict(), baseline=baseline),
                       cut_points=None if cuts is None else list(cuts[1:-1]))
    best = params.copy()
    step = 0
    for epoch in range(1, cfg.epochs_max + 1):
        t0 = time.perf_counter()
        rng = np.random.default_rng([cfg.seed, epoch])
        losses = []
        for i in rng.permutation(len(train)):
            step += 1
            ps.zero_grad()
            with dc.Tape() as tape:
                loss = bag_loss(train[i], params, cfg.lambda_rec, cuts)
                value = loss.item()
                if not math.isfinite(value):
                    raise DivergenceError(step, epoch)
                tape.backward(loss)
            dc.adam_step(ps.flat, ps.flat_grad, state, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps_opt, cfg.wd)
            losses.append(value)
        val_loss = mean_loss(val, params, cfg.lambda_rec, cuts)
        if not math.isfinite(val_loss):
            raise DivergenceError(step, epoch)
        record.train_losses.append(float(np.mean(losses)))
        record.val_losses.append(val_loss)
        record.epoch_seconds.append(time.perf_counter() - t0)
        record.epochs_run = epoch
        stop = stopper.update(epoch, val_loss)
        if stopper.best_epoch == epoch:
            best = params.copy()
        log.debug("epoch %d train %.4f val %.4f", epoch, record.train_losses[-1], val_loss)
        if stop:
            break
    record.best_epoch = stopper.best_epoch
    record.peak_rss_mb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0
    eval_bags = list(test_bags) if test_bags else val
    record.metrics = evaluate(best, eval_bags, cfg.ordering)
    return TrainResult(record, best)


@dataclass
class Predictions:
    scores: np.ndarray
    saliency: list


def predict(params: ModelParams, bags, ordering: str = "coords_raster", want_saliency: bool = False):
    """Forward passes only.  Classification scores are softmax probabilities,
    survival scores the risk (sum of hazards)."""
    scores, sal = [], []
    for bag in bags:
        b = order_bag(bag, ordering)
        fr = model_forward(b, params, want_saliency=want_saliency)
        z = fr.logits.data[0]
        if params.arch.task == CLASSIFICATION:
            e = np.exp(z - z.max())
            scores.append(e / e.sum())
        else:
            scores.append(risk_score(z))
        sal.append(fr.saliency)
    return Predictions(np.array(scores), sal)


def evaluate(params: ModelParams, bags, ordering: str = "coords_raster") -> MetricsReport:
    bags = list(bags)
    for b in bags:
        if b.dim != params.arch.D:
            raise ValueError(f"dimension mismatch: bag {b.bag_id} has D={b.dim}, checkpoint D={params.arch.D}")
    pred = predict(params, bags, ordering)
    if params.arch.task == CLASSIFICATION:
        return classification_report(pred.scores, [b.label.class_index for b in bags])
    return survival_report(pred.scores, [b.label.event_time for b in bags],
                           [b.label.event_observed for b in bags])
