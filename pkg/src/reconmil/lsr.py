"""Latent space reconstruction: residual encoder + linear skip, mirrored decoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from reconmil import diffcore as dc
from reconmil.diffcore import Value2D


@dataclass
class LSRParams:
    enc1_W: Value2D
    enc1_b: Value2D
    enc2_W: Value2D
    enc2_b: Value2D
    skip_W: Value2D
    dec1_W: Value2D
    dec1_b: Value2D
    dec2_W: Value2D
    dec2_b: Value2D

    def __post_init__(self):
        D, h = self.enc1_W.shape
        d = self.skip_W.shape[1]
        if self.skip_W.shape[0] != D or self.enc2_W.shape != (h, d):
            raise ValueError("encoder and skip output widths must agree")
        if self.dec1_W.shape[0] != d or self.dec2_W.shape[1] != D:
            raise ValueError("decoder must map latent width back to input width")

    @property
    def in_dim(self) -> int:
        return self.skip_W.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.skip_W.shape[1]

    @classmethod
    def from_params(cls, ps, prefix: str = "lsr.") -> "LSRParams":
        return cls(**{f: ps[prefix + f] for f in cls.__dataclass_fields__})


def hidden_width(D: int, d: int) -> int:
    return max(d, D // 2)


def lsr_shapes(D: int, d: int, d_hid: int | None = None, prefix: str = "lsr.") -> dict:
    h = hidden_width(D, d) if d_hid is None else d_hid
    shapes = {
        "enc1_W": (D, h), "enc1_b": (1, h), "enc2_W": (h, d), "enc2_b": (1, d),
        "skip_W": (D, d),
        "dec1_W": (d, h), "dec1_b": (1, h), "dec2_W": (h, D), "dec2_b": (1, D),
    }
    return {prefix + k: v for k, v in shapes.items()}


def skip_shapes(D: int, d: int, prefix: str = "lsr.") -> dict:
    """Parameters used when reconstruction is switched off: the linear shortcut only."""
    return {prefix + "skip_W": (D, d)}


def init_lsr(ps, rng: np.random.Generator, prefix: str = "lsr.") -> None:
    """Scaled-uniform init (limit 1/sqrt(fan_in)); encoder output layer starts at zero."""
    for name in ("enc1", "skip", "dec1", "dec2"):
        key = f"{prefix}{name}_W"
        if key not in ps:
            continue
        W = ps[key].data
        lim = 1.0 / np.sqrt(W.shape[0])
        W[...] = rng.uniform(-lim, lim, W.shape)
        bkey = f"{prefix}{name}_b"
        if bkey in ps:
            ps[bkey].data[...] = rng.uniform(-lim, lim, ps[bkey].shape)
    for key in (prefix + "enc2_W", prefix + "enc2_b"):
        if key in ps:
            ps[key].data[...] = 0.0


def _mlp(x, W1, b1, W2, b2):
    return dc.linear(dc.activation(dc.linear(x, W1, b1), "gelu"), W2, b2)


def encode(H: Value2D, p: LSRParams) -> Value2D:
    if H.shape[1] != p.in_dim:
        raise ValueError(f"dimension mismatch: bag D={H.shape[1]}, LSR expects {p.in_dim}")
    return dc.add(_mlp(H, p.enc1_W, p.enc1_b, p.enc2_W, p.enc2_b), dc.linear(H, p.skip_W))


def decode(Z: Value2D, p: LSRParams) -> Value2D:
    return _mlp(Z, p.dec1_W, p.dec1_b, p.dec2_W, p.dec2_b)


def lsr_forward(H: Value2D, p: LSRParams) -> tuple[Value2D, Value2D]:
    """Z = E(H) + P_skip(H); H_hat = decoder(Z)."""
    Z = encode(H, p)
    return Z, decode(Z, p)


def recon_loss(H: Value2D, H_hat: Value2D) -> Value2D:
    return dc.mse(H_hat, H)
