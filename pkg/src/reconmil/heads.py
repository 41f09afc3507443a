"""Bag pooling, task heads, losses and the full model forward pass."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from reconmil import bgm, diffcore as dc, lsr
from reconmil.bagstore import CLASSIFICATION, SURVIVAL, FeatureBag, LabelRecord
from reconmil.diffcore import ParamSet, Value2D

POOL_MODES = ("mean", "attention", "max")


@dataclass(frozen=True)
class ModelArch:
    task: str = CLASSIFICATION
    D: int = 32
    d: int = 32
    d_hid: int | None = None
    L: int = 2
    k: int = 3
    n: int = 8
    e: int = 4
    C: int = 2
    T: int = 4
    pool_mode: str = "mean"
    attn_dim: int = 16
    lsr_on: bool = True
    global_on: bool = True
    local_on: bool = True
    fusion: str = "gated"
    bidirectional_scan: bool = False
    # baselines: pool raw features straight into the head
    bgm_on: bool = True

    def __post_init__(self):
        if self.task not in (CLASSIFICATION, SURVIVAL):
            raise ValueError(f"unknown task {self.task!r}")
        if self.pool_mode not in POOL_MODES:
            raise ValueError(f"unknown pool_mode {self.pool_mode!r}")
        for name in ("D", "d", "L", "k", "n", "e", "C", "T", "attn_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.k % 2 == 0:
            raise ValueError("kernel size k must be odd")
        self.streams  # validates stream switches

    @property
    def streams(self) -> bgm.StreamConfig:
        return bgm.StreamConfig(self.global_on, self.local_on, self.fusion, self.bidirectional_scan)

    @property
    def hidden(self) -> int:
        return lsr.hidden_width(self.D, self.d) if self.d_hid is None else self.d_hid

    @property
    def pooled_dim(self) -> int:
        return self.d if (self.bgm_on or self.lsr_on) else self.D

    @property
    def out_dim(self) -> int:
        return self.C if self.task == CLASSIFICATION else self.T

    def to_dict(self) -> dict:
        return asdict(self)


def param_shapes(arch: ModelArch) -> dict:
    shapes = {}
    if arch.lsr_on:
        shapes.update(lsr.lsr_shapes(arch.D, arch.d, arch.hidden))
    elif arch.bgm_on:
        shapes.update(lsr.skip_shapes(arch.D, arch.d))
    if arch.bgm_on:
        for layer in range(arch.L):
            shapes.update(bgm.layer_shapes(arch.d, arch.n, arch.k, arch.e, arch.streams, prefix=f"bgm{layer}."))
    w = arch.pooled_dim
    if arch.pool_mode == "attention":
        shapes.update({"head.attn_V": (w, arch.attn_dim), "head.attn_w": (arch.attn_dim, 1)})
    shapes.update({"head.W": (w, arch.out_dim), "head.b": (1, arch.out_dim)})
    return shapes


@dataclass
class ModelParams:
    arch: ModelArch
    values: ParamSet

    @classmethod
    def init(cls, arch: ModelArch, seed: int) -> "ModelParams":
        rng = np.random.default_rng(seed)
        ps = ParamSet(param_shapes(arch))
        if arch.lsr_on or arch.bgm_on:
            lsr.init_lsr(ps, rng)
        if arch.bgm_on:
            for layer in range(arch.L):
                bgm.init_layer(ps, rng, prefix=f"bgm{layer}.")
        for key in ("head.attn_V", "head.attn_w", "head.W"):
            if key in ps:
                v = ps[key].data
                lim = 1.0 / math.sqrt(v.shape[0])
                v[...] = rng.uniform(-lim, lim, v.shape)
        return cls(arch, ps)

    def __getitem__(self, name: str) -> Value2D:
        return self.values[name]

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, self.values.copy())

    def lsr_params(self) -> lsr.LSRParams | None:
        return lsr.LSRParams.from_params(self.values) if self.arch.lsr_on else None

    def stack(self) -> bgm.BGMStack:
        layers = [bgm.BGMLayerParams.from_params(self.values, f"bgm{i}.") for i in range(self.arch.L)]
        return bgm.BGMStack(layers, self.arch.streams)


# ---------------------------------------------------------------------- pool


@dataclass
class HeadParams:
    pool_mode: str
    W: Value2D
    b: Value2D
    attn_V: Value2D | None = None
    attn_w: Value2D | None = None

    @classmethod
    def from_model(cls, mp: ModelParams) -> "HeadParams":
        ps = mp.values
        return cls(mp.arch.pool_mode, ps["head.W"], ps["head.b"],
                   ps["head.attn_V"] if "head.attn_V" in ps else None,
                   ps["head.attn_w"] if "head.attn_w" in ps else None)


def bag_pool(z: Value2D, p: HeadParams) -> Value2D:
    """N x d -> 1 x d: column mean, coordinate-wise max, or tanh attention."""
    if p.pool_mode == "mean":
        return dc.mean_rows(z)
    if p.pool_mode == "max":
        return dc.max_rows(z)
    scores = dc.linear(dc.activation(dc.linear(z, p.attn_V), "tanh"), p.attn_w)
    pooled, _ = dc.softmax_rows_weighted_sum(scores, z)
    return pooled


def attention_weights(z: np.ndarray, p: HeadParams) -> np.ndarray:
    s = (np.tanh(z @ p.attn_V.data) @ p.attn_w.data)[:, 0]
    e = np.exp(s - s.max())
    return e / e.sum()


# ------------------------------------------------------------------ survival


@dataclass(frozen=True)
class SurvivalTarget:
    interval_index: int
    event_observed: bool
    cut_points: tuple

    def __post_init__(self):
        c = self.cut_points
        if any(b <= a for a, b in zip(c, c[1:])):
            raise ValueError("cut points must be strictly increasing")
        if not 0 <= self.interval_index < len(c) - 1:
            raise ValueError("interval index out of range")


def survival_cut_points(event_times, observed, T: int = 4) -> tuple:
    """0, the interior T-quantiles of uncensored times, +inf."""
    t = np.asarray(event_times, dtype=float)[np.asarray(observed, dtype=bool)]
    if t.size == 0:
        t = np.asarray(event_times, dtype=float)
    qs = np.quantile(t, np.arange(1, T) / T)
    cuts = [0.0]
    for q in qs:
        # keep strictly increasing even with heavy ties
        cuts.append(max(float(q), np.nextafter(cuts[-1], np.inf)))
    cuts.append(math.inf)
    return tuple(cuts)


def survival_target(label: LabelRecord, cut_points: tuple) -> SurvivalTarget:
    interior = np.asarray(cut_points[1:-1])
    j = int(np.searchsorted(interior, label.event_time, side="right"))
    return SurvivalTarget(j, bool(label.event_observed), tuple(cut_points))


def survival_nll(hazard_logits: Value2D, target: SurvivalTarget) -> Value2D:
    """Discrete-time hazard negative log-likelihood with h = sigmoid(logit)."""
    T = hazard_logits.shape[1]
    j = target.interval_index
    if not 0 <= j < T:
        raise ValueError(f"interval index {j} out of range for {T} intervals")
    z = hazard_logits.data[0]
    sp_pos = dc._softplus(z)    # -log(1 - h)
    sp_neg = dc._softplus(-z)   # -log h
    h = dc._sigmoid(z)
    if target.event_observed:
        loss = sp_neg[j] + sp_pos[:j].sum()
    else:
        loss = sp_pos[:j + 1].sum()

    def backward(g):
        gz = np.zeros(T)
        if target.event_observed:
            gz[:j] = h[:j]
            gz[j] = h[j] - 1.0
        else:
            gz[:j + 1] = h[:j + 1]
        return (g[0, 0] * gz[None, :],)

    return dc._emit("survival_nll", (hazard_logits,), np.array([[loss]]), backward)


def risk_score(hazard_logits: np.ndarray) -> float:
    """Sum of interval hazards; monotone in cumulative hazard."""
    return float(dc._sigmoid(np.asarray(hazard_logits).reshape(-1)).sum())


def total_loss(task_loss: Value2D, L_rec: Value2D | None, lambda_rec: float) -> Value2D:
    if lambda_rec < 0:
        raise ValueError("lambda_rec must be >= 0")
    if L_rec is None or lambda_rec == 0:
        return task_loss
    return dc.add(task_loss, dc.scale(L_rec, lambda_rec))


# ------------------------------------------------------------------- forward


@dataclass
class ForwardResult:
    logits: Value2D
    L_rec: Value2D | None
    saliency: np.ndarray | None
    z: np.ndarray = field(repr=False, default=None)


def model_forward(bag: FeatureBag | np.ndarray, params: ModelParams, want_saliency: bool = True) -> ForwardResult:
    """H -> LSR -> L bi-stream layers -> pool -> head logits."""
    arch = params.arch
    H_arr = bag.features if isinstance(bag, FeatureBag) else bag
    if H_arr.shape[1] != arch.D:
        raise ValueError(f"dimension mismatch: bag D={H_arr.shape[1]}, model D={arch.D}")
    H = dc.const(np.asarray(H_arr, dtype=np.float64))
    L_rec = None
    if arch.lsr_on:
        Z, H_hat = lsr.lsr_forward(H, params.lsr_params())
        L_rec = lsr.recon_loss(H, H_hat)
    elif arch.bgm_on:
        Z = dc.linear(H, params["lsr.skip_W"])
    else:
        Z = H
    saliency = None
    if arch.bgm_on:
        stack = params.stack()
        traces = [] if want_saliency else None
        Z = stack.forward(Z, traces)
        if want_saliency:
            saliency = stack.saliency(traces)
    head = HeadParams.from_model(params)
    logits = dc.linear(bag_pool(Z, head), head.W, head.b)
    return ForwardResult(logits, L_rec, saliency, Z.data)


def task_loss(logits: Value2D, label: LabelRecord, cut_points: tuple | None = None) -> Value2D:
    if label.task == CLASSIFICATION:
        return dc.cross_entropy(logits, label.class_index)
    if cut_points is None:
        raise ValueError("survival loss needs interval cut points")
    return survival_nll(logits, survival_target(label, cut_points))
