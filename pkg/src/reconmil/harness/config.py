"""Training configuration: a flat JSON-serializable record."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from reconmil.bagstore import CLASSIFICATION, SURVIVAL
from reconmil.heads import ModelArch

ORDERINGS = ("coords_raster", "file_order")

# Shipped default for the reconstruction weight; argmax of the recorded sweep in
# calibration/lambda_sweep.json (regenerate with `reconmil calibrate lambda`).
LAMBDA_REC_DEFAULT = 0.1


@dataclass(frozen=True)
class TrainConfig:
    task: str = CLASSIFICATION
    # architecture
    D: int = 32
    d: int = 32
    d_hid: int | None = None
    L: int = 2
    k: int = 3
    n: int = 8
    e: int = 4
    T: int = 4
    num_classes: int | None = None
    pool_mode: str = "mean"
    # optimizer
    lr: float = 5e-5
    wd: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    # objective and schedule
    lambda_rec: float = LAMBDA_REC_DEFAULT
    epochs_max: int = 100
    patience: int = 10
    k_folds: int = 5
    seed: int = 0
    ordering: str = "coords_raster"
    bidirectional_scan: bool = False
    # ablation switches
    lsr_on: bool = True
    global_on: bool = True
    local_on: bool = True
    fusion: str = "gated"

    def __post_init__(self):
        if self.task not in (CLASSIFICATION, SURVIVAL):
            raise ValueError(f"unknown task {self.task!r}")
        if self.ordering not in ORDERINGS:
            raise ValueError(f"unknown ordering {self.ordering!r}")
        for name in ("lr", "epochs_max", "patience"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.wd < 0 or self.lambda_rec < 0:
            raise ValueError("wd and lambda_rec must be >= 0")
        if self.k_folds < 3:
            raise ValueError("k_folds must be >= 3 (test, validation and at least one training fold)")
        if not (self.global_on or self.local_on):
            raise ValueError("at least one stream must be on")

    def arch(self, num_classes: int | None = None, baseline: bool = False) -> ModelArch:
        """Model architecture; ``baseline`` drops LSR and BGM (raw features -> pool -> head)."""
        C = num_classes if num_classes is not None else (self.num_classes or 2)
        return ModelArch(task=self.task, D=self.D, d=self.d, d_hid=self.d_hid, L=self.L, k=self.k,
                         n=self.n, e=self.e, C=C, T=self.T, pool_mode=self.pool_mode,
                         lsr_on=self.lsr_on and not baseline, global_on=self.global_on,
                         local_on=self.local_on, fusion=self.fusion,
                         bidirectional_scan=self.bidirectional_scan, bgm_on=not baseline)

    def with_(self, **changes) -> "TrainConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)


def load_config(path) -> TrainConfig:
    return TrainConfig.from_dict(json.loads(Path(path).read_text()))


def save_config(cfg: TrainConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2))
