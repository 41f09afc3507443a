"""Bi-stream global/local block.

One shared pre-norm feeds a selective-scan global stream and a depthwise
separable local stream; the two are fused (gated by default) and folded back
through a residual feed-forward transition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from reconmil import diffcore as dc
from reconmil.diffcore import SSMParams, Value2D

FUSIONS = ("gated", "add", "concat")


@dataclass(frozen=True)
class StreamConfig:
    global_on: bool = True
    local_on: bool = True
    fusion: str = "gated"
    bidirectional: bool = False

    def __post_init__(self):
        if not (self.global_on or self.local_on):
            raise ValueError("at least one stream must be on")
        if self.fusion not in FUSIONS:
            raise ValueError(f"unknown fusion {self.fusion!r}")

    @property
    def fusion_in(self) -> int:
        """Number of d-wide blocks entering the fusion projection."""
        if self.fusion == "add":
            return 1
        return int(self.global_on) + int(self.local_on)

    @property
    def gated(self) -> bool:
        return self.fusion == "gated"


_LAYER_FIELDS = (
    "ln1_g", "ln1_b",
    "a_log", "W_delta", "b_delta", "W_B", "W_C", "D_skip",
    "k_dw", "pw_W", "pw_b",
    "proj_W", "proj_b", "gate_W", "gate_b",
    "ln2_g", "ln2_b",
    "mlp1_W", "mlp1_b", "mlp2_W", "mlp2_b",
)


@dataclass
class BGMLayerParams:
    """One layer's values; fields missing for a stream configuration are None."""

    ln1_g: Value2D
    ln1_b: Value2D
    ln2_g: Value2D
    ln2_b: Value2D
    mlp1_W: Value2D
    mlp1_b: Value2D
    mlp2_W: Value2D
    mlp2_b: Value2D
    proj_W: Value2D
    proj_b: Value2D
    gate_W: Value2D | None = None
    gate_b: Value2D | None = None
    a_log: Value2D | None = None
    W_delta: Value2D | None = None
    b_delta: Value2D | None = None
    W_B: Value2D | None = None
    W_C: Value2D | None = None
    D_skip: Value2D | None = None
    k_dw: Value2D | None = None
    pw_W: Value2D | None = None
    pw_b: Value2D | None = None

    @property
    def width(self) -> int:
        return self.ln1_g.shape[1]

    def ssm(self) -> SSMParams:
        return SSMParams(dc.neg_exp(self.a_log), self.W_delta, self.b_delta, self.W_B, self.W_C, self.D_skip)

    @classmethod
    def from_params(cls, ps, prefix: str) -> "BGMLayerParams":
        return cls(**{f: ps[prefix + f] for f in _LAYER_FIELDS if prefix + f in ps})


def layer_shapes(d: int, n: int = 8, k: int = 3, e: int = 4, streams: StreamConfig = StreamConfig(),
                 prefix: str = "") -> dict:
    shapes = {"ln1_g": (1, d), "ln1_b": (1, d)}
    if streams.global_on:
        shapes.update({"a_log": (d, n), "W_delta": (1, d), "b_delta": (1, d),
                       "W_B": (d, n), "W_C": (d, n), "D_skip": (1, d)})
    if streams.local_on:
        shapes.update({"k_dw": (d, k), "pw_W": (d, d), "pw_b": (1, d)})
    u = streams.fusion_in * d
    shapes.update({"proj_W": (u, d), "proj_b": (1, d)})
    if streams.gated:
        shapes.update({"gate_W": (u, d), "gate_b": (1, d)})
    shapes.update({"ln2_g": (1, d), "ln2_b": (1, d),
                   "mlp1_W": (d, e * d), "mlp1_b": (1, e * d), "mlp2_W": (e * d, d), "mlp2_b": (1, d)})
    return {prefix + key: v for key, v in shapes.items()}


def init_layer(ps, rng: np.random.Generator, prefix: str = "", zero_mlp_out: bool = False) -> None:
    """Default initialization for one layer's parameters (in place)."""
    def uni(name):
        key = prefix + name
        if key in ps:
            v = ps[key].data
            lim = 1.0 / np.sqrt(v.shape[0])
            v[...] = rng.uniform(-lim, lim, v.shape)

    def fill(name, value):
        if prefix + name in ps:
            ps[prefix + name].data[...] = value

    fill("ln1_g", 1.0), fill("ln1_b", 0.0), fill("ln2_g", 1.0), fill("ln2_b", 0.0)
    if prefix + "a_log" in ps:
        d, n = ps[prefix + "a_log"].shape
        ps[prefix + "a_log"].data[...] = np.log(np.arange(1, n + 1, dtype=float))[None, :].repeat(d, 0)
        for name in ("W_delta", "W_B", "W_C"):
            v = ps[prefix + name].data
            v[...] = rng.normal(0.0, 1.0 / np.sqrt(d), v.shape)
        # softplus(b_delta) log-uniform in [1e-3, 1e-1]
        step = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), d))
        ps[prefix + "b_delta"].data[0] = np.log(np.expm1(step))
        fill("D_skip", 1.0)
    if prefix + "k_dw" in ps:
        v = ps[prefix + "k_dw"].data
        lim = 1.0 / np.sqrt(v.shape[1])
        v[...] = rng.uniform(-lim, lim, v.shape)
    for name in ("pw_W", "proj_W", "gate_W", "mlp1_W", "mlp2_W"):
        uni(name)
    for name in ("pw_b", "proj_b", "gate_b", "mlp1_b", "mlp2_b"):
        fill(name, 0.0)
    if zero_mlp_out:
        fill("mlp2_W", 0.0)


def global_stream(z_hat: Value2D, ssm: SSMParams, bidirectional: bool = False) -> Value2D:
    """Selective scan over the instance order (causal unless bidirectional)."""
    y = dc.ssm_scan(z_hat, ssm)
    if not bidirectional:
        return y
    back = dc.flip_rows(dc.ssm_scan(dc.flip_rows(z_hat), ssm))
    return dc.scale(dc.add(y, back), 0.5)


def local_stream(z_hat: Value2D, k_dw: Value2D, pw_W: Value2D, pw_b: Value2D | None = None) -> Value2D:
    """pointwise(gelu(depthwise(z_hat))); no activation after the pointwise map."""
    return dc.linear(dc.activation(dc.dwconv1d(z_hat, k_dw), "gelu"), pw_W, pw_b)


def gated_fusion(z_global: Value2D, z_local: Value2D, w_proj: Value2D, w_gate: Value2D,
                 b_proj: Value2D | None = None, b_gate: Value2D | None = None) -> Value2D:
    """(U W_proj) * sigmoid(U W_gate) with U = [global | local]."""
    if z_global.shape != z_local.shape:
        raise ValueError(f"shape mismatch: streams {z_global.shape} vs {z_local.shape}")
    U = dc.concat_cols(z_global, z_local)
    return dc.mul(dc.linear(U, w_proj, b_proj), dc.activation(dc.linear(U, w_gate, b_gate), "sigmoid"))


@dataclass
class LayerTrace:
    """Forward intermediates kept for saliency."""

    z_local: np.ndarray | None = None


def _fuse(z_g, z_l, p: BGMLayerParams, streams: StreamConfig) -> Value2D:
    if streams.fusion == "add":
        s = z_g if z_l is None else (z_l if z_g is None else dc.add(z_g, z_l))
        return dc.linear(s, p.proj_W, p.proj_b)
    if z_g is not None and z_l is not None:
        U = dc.concat_cols(z_g, z_l)
    else:
        U = z_g if z_g is not None else z_l
    proj = dc.linear(U, p.proj_W, p.proj_b)
    if streams.fusion == "concat":
        return proj
    return dc.mul(proj, dc.activation(dc.linear(U, p.gate_W, p.gate_b), "sigmoid"))


def bgm_layer(z_prev: Value2D, p: BGMLayerParams, streams: StreamConfig = StreamConfig(),
              trace: LayerTrace | None = None) -> Value2D:
    """z_prev + MLP(LN2(z_prev + Z_fuse)) with Z_fuse from the fused streams of LN1(z_prev)."""
    if z_prev.shape[1] != p.width:
        raise ValueError(f"shape mismatch: input width {z_prev.shape[1]} vs layer {p.width}")
    z_hat = dc.layer_norm(z_prev, p.ln1_g, p.ln1_b)
    z_g = global_stream(z_hat, p.ssm(), streams.bidirectional) if streams.global_on else None
    z_l = local_stream(z_hat, p.k_dw, p.pw_W, p.pw_b) if streams.local_on else None
    z_fuse = _fuse(z_g, z_l, p, streams)
    if trace is not None and z_l is not None:
        trace.z_local = z_l.data
    h = dc.layer_norm(dc.add(z_prev, z_fuse), p.ln2_g, p.ln2_b)
    m = dc.linear(dc.activation(dc.linear(h, p.mlp1_W, p.mlp1_b), "gelu"), p.mlp2_W, p.mlp2_b)
    return dc.add(z_prev, m)


def local_gate_saliency(z_local: np.ndarray, gate_W: np.ndarray, gate_b: np.ndarray) -> np.ndarray:
    """Per-instance mean of sigmoid(z_local . W_gate[local rows] + b_gate)."""
    d = z_local.shape[1]
    pre = z_local @ gate_W[-d:] + gate_b
    return dc._sigmoid(pre).mean(axis=1)


def gate_saliency(z_hat: Value2D, p: BGMLayerParams) -> np.ndarray:
    """Saliency of one layer from its normalized input (full gated, both streams)."""
    z_l = local_stream(dc.const(z_hat.data), p.k_dw, p.pw_W, p.pw_b).data
    return local_gate_saliency(z_l, p.gate_W.data, p.gate_b.data)


@dataclass
class BGMStack:
    layers: list = field(default_factory=list)
    streams: StreamConfig = StreamConfig()

    @property
    def depth(self) -> int:
        return len(self.layers)

    def forward(self, z: Value2D, traces: list | None = None) -> Value2D:
        for p in self.layers:
            tr = LayerTrace() if traces is not None else None
            z = bgm_layer(z, p, self.streams, tr)
            if traces is not None:
                traces.append(tr)
        return z

    def saliency(self, traces: list) -> np.ndarray | None:
        """Mean over layers of local-gate saliency; None without a gated local stream."""
        if not (self.streams.gated and self.streams.local_on) or not traces:
            return None
        maps = [local_gate_saliency(t.z_local, p.gate_W.data, p.gate_b.data)
                for p, t in zip(self.layers, traces)]
        return np.mean(maps, axis=0)
