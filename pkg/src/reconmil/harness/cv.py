"""Cross-validation driver and pooling baselines."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

from reconmil.bagstore import (CLASSIFICATION, FeatureBag, FoldAssignment, ManifestRecord, load_bags,
                               load_manifest, make_folds)
from reconmil.harness.config import TrainConfig
from reconmil.harness.train import RunRecord, TrainResult, infer_classes, train_run
from reconmil.metrics import MetricsReport, aggregate

log = logging.getLogger(__name__)

BASELINES = {"mean_pool": "mean", "max_pool": "max", "attention": "attention",
             "mean": "mean", "max": "max"}


@dataclass
class CVResult:
    report: MetricsReport
    runs: list
    folds: FoldAssignment
    params: list

    def to_dict(self) -> dict:
        return {"report": self.report.to_dict(), "runs": [r.to_dict() for r in self.runs],
                "folds": {"k": self.folds.k, "seed": self.folds.seed, "assignment": self.folds.assignment,
                          "warnings": list(self.folds.warnings)}}


def _as_bags(data) -> list[FeatureBag]:
    if isinstance(data, (str, Path)):
        return load_bags(load_manifest(data))
    return list(data)


def split_indices(k: int, test_fold: int) -> tuple[int, list[int]]:
    """Validation fold rotates with the test fold: (test + 1) mod k."""
    val = (test_fold + 1) % k
    return val, [f for f in range(k) if f not in (test_fold, val)]


def run_cv(data, cfg: TrainConfig, folds: FoldAssignment | None = None, baseline: bool = False) -> CVResult:
    """k-fold CV: each fold is the test set once; aggregates mean and population std."""
    bags = _as_bags(data)
    records = [ManifestRecord(b.bag_id, Path(), b.label) for b in bags]
    folds = folds or make_folds(records, cfg.k_folds, cfg.seed)
    by_fold: dict[int, list] = {f: [] for f in range(folds.k)}
    for b in bags:
        by_fold[folds.fold_of(b.bag_id)].append(b)
    C = (cfg.num_classes or infer_classes(bags)) if cfg.task == CLASSIFICATION else None
    runs: list[RunRecord] = []
    params = []
    for test in range(folds.k):
        val, train_folds = split_indices(folds.k, test)
        train = [b for f in train_folds for b in by_fold[f]]
        res: TrainResult = train_run(train, by_fold[val], cfg, test_bags=by_fold[test],
                                     num_classes=C, baseline=baseline)
        log.info("fold %d/%d: %s (best epoch %d of %d)", test + 1, folds.k, res.record.metrics.values,
                 res.record.best_epoch, res.record.epochs_run)
        runs.append(res.record)
        params.append(res.params)
    return CVResult(aggregate([r.metrics for r in runs]), runs, folds, params)


def baseline_config(kind: str, cfg: TrainConfig) -> TrainConfig:
    """Raw features -> pool -> linear head; everything else shared with ``cfg``."""
    if kind not in BASELINES:
        raise ValueError(f"unknown baseline {kind!r}")
    return cfg.with_(pool_mode=BASELINES[kind])


def run_baseline(kind: str, data, cfg: TrainConfig, folds: FoldAssignment | None = None) -> CVResult:
    bags = _as_bags(data)
    bcfg = baseline_config(kind, cfg)
    return run_cv(bags, bcfg, folds, baseline=True)
