"""Seeded desk-scale benchmarks and the calibration sweeps that fix their dials.

The dilution benchmark is the sparse-witness classification task: 200 bags of
64 to 128 instances, D = 32, 5% witnesses.  Its witness shift is chosen by
``calibrate_shift`` and the reconstruction weight default by ``lambda_sweep``;
both sweeps are recorded as JSON under ``reconmil/calibration``.
"""

from __future__ import annotations

import json
import logging
from importlib import resources

import numpy as np

from reconmil.bagstore import CLASSIFICATION, SURVIVAL, SynthConfig, synth_bags
from reconmil.harness.config import TrainConfig
from reconmil.harness.cv import CVResult, run_baseline, run_cv

log = logging.getLogger(__name__)

SEEDS = (0, 1, 2)
SHIFT_GRID = (1.5, 1.75, 2.0, 2.25, 2.5, 3.0, 3.5)
BASELINE_BAND = (0.60, 0.75)
LAMBDA_GRID = (0.0, 0.01, 0.1, 1.0)

# Adam step used by every benchmark arm (model and baselines alike).  The
# library default of 5e-5 barely moves either model within 100 epochs on
# 120-bag training splits.
BENCH_LR = 1e-3

# Selected by calibrate_shift (see calibration/shift_sweep.json).
WITNESS_SHIFT = 2.25

# Survival benchmark dial: with 5% witnesses the latent risk spans too little
# to be recoverable, so the survival task uses denser lesions.
SURVIVAL_SYNTH = dict(witness_fraction=0.5, witness_shift=4.0)

ABLATIONS = {
    "full": {},
    "global_only": {"local_on": False},
    "local_only": {"global_on": False},
    "fusion_add": {"fusion": "add"},
    "fusion_concat": {"fusion": "concat"},
    "lsr_off": {"lsr_on": False},
}


def dilution_synth(shift: float | None = None) -> SynthConfig:
    return SynthConfig(num_bags=200, instances_per_bag=(64, 128), feature_dim=32, num_classes=2,
                       witness_fraction=0.05, witness_shift=WITNESS_SHIFT if shift is None else shift)


def survival_synth() -> SynthConfig:
    return SynthConfig(num_bags=200, mode=SURVIVAL, censor_fraction=0.3, **SURVIVAL_SYNTH)


def bench_config(seed: int, task: str = CLASSIFICATION, **overrides) -> TrainConfig:
    return TrainConfig(task=task, lr=BENCH_LR, seed=seed, **overrides)


_CACHE: dict = {}
_DATA: dict = {}


def _data(cfg: SynthConfig, seed: int):
    key = (repr(cfg), seed)
    if key not in _DATA:
        _DATA[key] = synth_bags(cfg, seed)
    return _DATA[key]


def run_dilution(seed: int, baseline: str | None = None, shift: float | None = None, **overrides) -> CVResult:
    """5-fold CV on the dilution benchmark; results are memoized per (data, config, arm)."""
    synth = dilution_synth(shift)
    cfg = bench_config(seed, **overrides)
    key = ("dilution", repr(synth), seed, baseline, json.dumps(cfg.to_dict(), sort_keys=True))
    if key not in _CACHE:
        bags = _data(synth, seed)
        _CACHE[key] = run_baseline(baseline, bags, cfg) if baseline else run_cv(bags, cfg)
        log.info("dilution seed=%d baseline=%s %s -> %s", seed, baseline, overrides, _CACHE[key].report.mean)
    return _CACHE[key]


def run_survival(seed: int, **overrides) -> CVResult:
    synth = survival_synth()
    cfg = bench_config(seed, task=SURVIVAL, **overrides)
    key = ("survival", repr(synth), seed, json.dumps(cfg.to_dict(), sort_keys=True))
    if key not in _CACHE:
        _CACHE[key] = run_cv(_data(synth, seed), cfg)
    return _CACHE[key]


def dilution_bags(seed: int, shift: float | None = None):
    return _data(dilution_synth(shift), seed)


def mean_auc(results) -> float:
    return float(np.mean([r.report.mean["auc"] for r in results]))


def calibrate_shift(seeds=SEEDS, grid=SHIFT_GRID, band=BASELINE_BAND) -> dict:
    """Mean-pool CV AUC over the shift grid.

    Selection rule: the largest shift at which every seed's mean-pool AUC lies
    inside ``band``.
    """
    rows = {}
    for s in grid:
        rows[str(s)] = [run_dilution(seed, baseline="mean_pool", shift=s).report.mean["auc"] for seed in seeds]
    inside = [s for s in grid if all(band[0] <= a <= band[1] for a in rows[str(s)])]
    return {"protocol": "mean_pool 5-fold CV AUC per seed; pick the largest shift with every seed in band",
            "band": list(band), "seeds": list(seeds), "lr": BENCH_LR, "auc": rows,
            "selected": max(inside) if inside else None}


def lambda_sweep(seeds=SEEDS, grid=LAMBDA_GRID) -> dict:
    """Full-model CV AUC on the dilution benchmark for each reconstruction weight."""
    rows = {str(lam): [run_dilution(seed, lambda_rec=lam).report.mean["auc"] for seed in seeds] for lam in grid}
    means = {k: float(np.mean(v)) for k, v in rows.items()}
    best = max(grid, key=lambda lam: means[str(lam)])
    return {"protocol": "full model 5-fold CV AUC on the dilution benchmark; default = argmax of the seed mean",
            "witness_shift": WITNESS_SHIFT, "seeds": list(seeds), "lr": BENCH_LR, "auc": rows,
            "mean": means, "argmax": best}


def load_record(name: str) -> dict:
    """Read a recorded calibration sweep shipped with the package."""
    return json.loads(resources.files("reconmil.calibration").joinpath(name).read_text())
