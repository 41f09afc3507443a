"""Minimal reverse-mode differentiation over 2-D float64 arrays.

Every value is a :class:`Value2D` (rank 2, row-major).  Operations executed
inside an active :class:`Tape` append an entry holding their backward rule;
``tape.backward(loss)`` walks the entries in reverse.  Outside a tape the
same functions run as plain numpy forward passes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from reconmil._scan_kernels import scan_backward, scan_forward

GELU_C = math.sqrt(2.0 / math.pi)
GELU_K = 0.044715
SOFTPLUS_LINEAR_ABOVE = 30.0

_debug = False
_tapes: list["Tape"] = []


class NonFiniteError(ValueError):
    pass


def set_debug(flag: bool) -> None:
    """Check every forward output for NaN/Inf when enabled."""
    global _debug
    _debug = bool(flag)


class Value2D:
    __slots__ = ("data", "grad", "requires_grad", "node_id", "_grad_buffer")

    def __init__(self, data, requires_grad: bool = False, grad_buffer=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ValueError(f"Value2D must be rank 2, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.node_id = -1
        # leaves owned by a ParamSet accumulate into a preallocated view
        self._grad_buffer = grad_buffer
        self.grad = grad_buffer

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError("item() needs a 1x1 value")
        return float(self.data[0, 0])

    def zero_grad(self) -> None:
        if self._grad_buffer is not None:
            self._grad_buffer[...] = 0.0
        else:
            self.grad = None

    def __repr__(self) -> str:
        return f"Value2D(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)


def const(data) -> Value2D:
    return Value2D(data, requires_grad=False)


def param(data) -> Value2D:
    return Value2D(np.array(data, dtype=np.float64), requires_grad=True)


@dataclass
class _Entry:
    kind: str
    inputs: tuple
    output: Value2D
    backward: Callable


class Tape:
    """Append-only computation record; use as a context manager."""

    def __init__(self):
        self.entries: list[_Entry] = []

    def __enter__(self):
        _tapes.append(self)
        return self

    def __exit__(self, *exc):
        _tapes.remove(self)
        return False

    def append(self, kind, inputs, output, backward) -> None:
        output.node_id = len(self.entries)
        self.entries.append(_Entry(kind, tuple(inputs), output, backward))

    def clear(self) -> None:
        self.entries.clear()

    def backward(self, loss: Value2D) -> None:
        if loss.data.size != 1:
            raise ValueError("backward() needs a scalar (1x1) loss")
        if not loss.requires_grad:
            return
        _accumulate(loss, np.ones((1, 1)))
        for entry in reversed(self.entries):
            gout = entry.output.grad
            if gout is None:
                continue
            grads = entry.backward(gout)
            for v, g in zip(entry.inputs, grads):
                if g is not None and v.requires_grad:
                    _accumulate(v, g)


def _accumulate(v: Value2D, g) -> None:
    if v._grad_buffer is not None:
        np.add(v._grad_buffer, g, out=v._grad_buffer)
    elif v.grad is None:
        v.grad = g
    else:
        v.grad = v.grad + g


def current_tape() -> Tape | None:
    return _tapes[-1] if _tapes else None


def _emit(kind: str, inputs: Sequence[Value2D], out: np.ndarray, backward) -> Value2D:
    if _debug and not np.all(np.isfinite(out)):
        raise NonFiniteError(f"non-finite output from {kind}")
    tape = current_tape()
    needs = tape is not None and any(v.requires_grad for v in inputs)
    result = Value2D(out, requires_grad=needs)
    if needs:
        tape.append(kind, inputs, result, backward)
    return result


def _check_row(v: Value2D, width: int, what: str) -> None:
    if v.shape != (1, width):
        raise ValueError(f"shape mismatch: {what} expected (1, {width}), got {v.shape}")


# ---------------------------------------------------------------- elementwise


def add(a: Value2D, b: Value2D) -> Value2D:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch in add: {a.shape} vs {b.shape}")
    return _emit("add", (a, b), a.data + b.data, lambda g: (g, g))


def mul(a: Value2D, b: Value2D) -> Value2D:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch in mul: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return _emit("mul", (a, b), ad * bd, lambda g: (g * bd, g * ad))


def scale(a: Value2D, c: float) -> Value2D:
    return _emit("scale", (a,), a.data * c, lambda g: (g * c,))


def neg_exp(a: Value2D) -> Value2D:
    """-exp(a); keeps state decay strictly negative under any update."""
    out = -np.exp(a.data)
    return _emit("neg_exp", (a,), out, lambda g: (g * out,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.where(x > SOFTPLUS_LINEAR_ABOVE, x, np.log1p(np.exp(np.minimum(x, SOFTPLUS_LINEAR_ABOVE))))


def _gelu(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x2 = x * x
    t = np.tanh(GELU_C * (x + GELU_K * x2 * x))
    return 0.5 * x * (1.0 + t), t


def _gelu_grad(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)


def activation(x: Value2D, kind: str) -> Value2D:
    """Elementwise gelu (tanh form), sigmoid, softplus or tanh."""
    xd = x.data
    if kind == "gelu":
        y, t = _gelu(xd)
        return _emit(kind, (x,), y, lambda g: (g * _gelu_grad(xd, t),))
    if kind == "sigmoid":
        y = _sigmoid(xd)
        return _emit(kind, (x,), y, lambda g: (g * y * (1.0 - y),))
    if kind == "softplus":
        return _emit(kind, (x,), _softplus(xd), lambda g: (g * _sigmoid(xd),))
    if kind == "tanh":
        y = np.tanh(xd)
        return _emit(kind, (x,), y, lambda g: (g * (1.0 - y * y),))
    raise ValueError(f"unknown activation {kind!r}")


# ------------------------------------------------------------------ structure


def concat_cols(a: Value2D, b: Value2D) -> Value2D:
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"shape mismatch in concat: {a.shape} vs {b.shape}")
    k = a.shape[1]
    return _emit("concat", (a, b), np.concatenate([a.data, b.data], axis=1), lambda g: (g[:, :k], g[:, k:]))


def flip_rows(a: Value2D) -> Value2D:
    return _emit("flip", (a,), a.data[::-1].copy(), lambda g: (g[::-1].copy(),))


def mean_rows(a: Value2D) -> Value2D:
    n = a.shape[0]
    return _emit("mean_rows", (a,), a.data.mean(axis=0, keepdims=True),
                 lambda g: (np.broadcast_to(g / n, a.shape).copy(),))


def max_rows(a: Value2D) -> Value2D:
    """Coordinate-wise max over rows; gradient routed to the first argmax."""
    idx = np.argmax(a.data, axis=0)
    cols = np.arange(a.shape[1])

    def backward(g):
        ga = np.zeros(a.shape)
        ga[idx, cols] = g[0]
        return (ga,)

    return _emit("max_rows", (a,), a.data[idx, cols][None, :], backward)


def softmax_rows_weighted_sum(scores: Value2D, z: Value2D) -> tuple[Value2D, np.ndarray]:
    """Softmax over the N scores (N x 1) then sum_t a_t z_t -> 1 x d.

    Returns the pooled value and the attention weights (plain array).
    """
    if scores.shape != (z.shape[0], 1):
        raise ValueError(f"shape mismatch: scores {scores.shape} for z {z.shape}")
    s = scores.data[:, 0]
    e = np.exp(s - s.max())
    a = e / e.sum()
    zd = z.data
    pooled = a @ zd

    def backward(g):
        gz = np.outer(a, g[0])
        ga = zd @ g[0]
        gs = a * (ga - a @ ga)
        return gs[:, None], gz

    return _emit("attn_pool", (scores, z), pooled[None, :], backward), a


# --------------------------------------------------------------------- layers


def linear(x: Value2D, W: Value2D, bias: Value2D | None = None) -> Value2D:
    """y = x W (+ bias per row)."""
    if x.shape[1] != W.shape[0]:
        raise ValueError(f"shape mismatch in linear: x {x.shape} @ W {W.shape}")
    xd, Wd = x.data, W.data
    y = xd @ Wd
    if bias is None:
        return _emit("linear", (x, W), y, lambda g: (g @ Wd.T, xd.T @ g))
    _check_row(bias, W.shape[1], "bias")
    y = y + bias.data
    return _emit("linear", (x, W, bias), y, lambda g: (g @ Wd.T, xd.T @ g, g.sum(axis=0, keepdims=True)))


def layer_norm(x: Value2D, gamma: Value2D, beta: Value2D, eps: float = 1e-5) -> Value2D:
    """Row-wise normalization with population variance, then scale and shift."""
    d = x.shape[1]
    _check_row(gamma, d, "gamma")
    _check_row(beta, d, "beta")
    xd = x.data
    mu = xd.mean(axis=1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gamma.data

    def backward(g):
        gxhat = g * gd
        gx = rstd / d * (d * gxhat - gxhat.sum(axis=1, keepdims=True)
                         - xhat * (gxhat * xhat).sum(axis=1, keepdims=True))
        return gx, (g * xhat).sum(axis=0, keepdims=True), g.sum(axis=0, keepdims=True)

    return _emit("layer_norm", (x, gamma, beta), xhat * gd + beta.data, backward)


def dwconv1d(x: Value2D, K_dw: Value2D) -> Value2D:
    """Depthwise 1-D cross-correlation along the instance axis, zero 'same' padding.

    y[t, c] = sum_j K_dw[c, j] * x[t + j - (k-1)/2, c]
    """
    N, d = x.shape
    if K_dw.shape[0] != d:
        raise ValueError(f"shape mismatch: kernel {K_dw.shape} for {d} channels")
    k = K_dw.shape[1]
    if k % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {k}")
    p = (k - 1) // 2
    xpad = np.zeros((N + 2 * p, d))
    xpad[p:p + N] = x.data
    Kd = K_dw.data
    y = np.zeros((N, d))
    for j in range(k):
        y += xpad[j:j + N] * Kd[:, j]

    def backward(g):
        gpad = np.zeros_like(xpad)
        gK = np.empty_like(Kd)
        for j in range(k):
            gpad[j:j + N] += g * Kd[:, j]
            gK[:, j] = (g * xpad[j:j + N]).sum(axis=0)
        return gpad[p:p + N], gK

    return _emit("dwconv1d", (x, K_dw), y, backward)


@dataclass
class SSMParams:
    """Selective-scan parameters; all rows are (1, d) values, matrices (d, n)."""

    A: Value2D
    W_delta: Value2D
    b_delta: Value2D
    W_B: Value2D
    W_C: Value2D
    D_skip: Value2D

    def __post_init__(self):
        if not np.all(self.A.data < 0):
            raise ValueError("state decay A must be strictly negative")
        d, n = self.A.shape
        if n < 1:
            raise ValueError("state size must be >= 1")
        for name in ("W_delta", "b_delta", "D_skip"):
            _check_row(getattr(self, name), d, name)
        for name in ("W_B", "W_C"):
            if getattr(self, name).shape != (d, n):
                raise ValueError(f"shape mismatch: {name} expected {(d, n)}")

    @property
    def state_size(self) -> int:
        return self.A.shape[1]


def ssm_scan(x: Value2D, p: SSMParams) -> Value2D:
    """Diagonal selective scan, forward in row order, h_0 = 0.

    delta[t,c] = softplus(x[t,c] W_delta[c] + b_delta[c]);
    h_t = exp(delta A) * h_{t-1} + delta * B_t * x_t;  y_t = C_t . h_t + D x_t
    with B_t = x_t W_B and C_t = x_t W_C.
    """
    N, d = x.shape
    if p.A.shape[0] != d:
        raise ValueError(f"shape mismatch: ssm width {p.A.shape[0]} vs input {d}")
    xd = x.data
    s = xd * p.W_delta.data + p.b_delta.data
    dt = _softplus(s)
    Bt = xd @ p.W_B.data
    Ct = xd @ p.W_C.data
    Ad = p.A.data
    Dv = p.D_skip.data[0]
    y, h = scan_forward(xd, dt, Ad, Bt, Ct, Dv)

    def backward(g):
        g = np.ascontiguousarray(g)
        gx, gdt, gA, gB, gC = scan_backward(g, xd, dt, Ad, Bt, Ct, h)
        gs = gdt * _sigmoid(s)
        gx = gx + g * Dv + gs * p.W_delta.data + gB @ p.W_B.data.T + gC @ p.W_C.data.T
        return (
            gx,
            gA,
            (gs * xd).sum(axis=0, keepdims=True),
            gs.sum(axis=0, keepdims=True),
            xd.T @ gB,
            xd.T @ gC,
            (g * xd).sum(axis=0, keepdims=True),
        )

    inputs = (x, p.A, p.W_delta, p.b_delta, p.W_B, p.W_C, p.D_skip)
    return _emit("ssm_scan", inputs, y, backward)


# --------------------------------------------------------------------- losses


def mse(pred: Value2D, target: Value2D) -> Value2D:
    """(1/N) sum_j ||pred_j - target_j||^2: averaged over rows only."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch in mse: {pred.shape} vs {target.shape}")
    n = pred.shape[0]
    r = pred.data - target.data
    out = np.array([[float(np.sum(r * r)) / n]])
    return _emit("mse", (pred, target), out, lambda g: (g[0, 0] * 2.0 * r / n, -g[0, 0] * 2.0 * r / n))


def cross_entropy(logits: Value2D, class_index: int) -> Value2D:
    C = logits.shape[1]
    if logits.shape[0] != 1:
        raise ValueError("cross_entropy expects 1 x C logits")
    if not 0 <= class_index < C:
        raise ValueError(f"class index {class_index} out of range for {C} classes")
    z = logits.data[0]
    m = z.max()
    e = np.exp(z - m)
    lse = m + math.log(e.sum())
    loss = lse - z[class_index]
    p = e / e.sum()

    def backward(g):
        gl = p.copy()
        gl[class_index] -= 1.0
        return (g[0, 0] * gl[None, :],)

    return _emit("cross_entropy", (logits,), np.array([[loss]]), backward)


# ------------------------------------------------------------------ optimizer


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, params: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(params), np.zeros_like(params), 0)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float = 5e-5,
              beta1: float = 0.9, beta2: float = 0.999, eps_opt: float = 1e-8,
              weight_decay: float = 1e-5) -> np.ndarray:
    """In-place Adam update with decoupled weight decay applied first."""
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ValueError("shape mismatch between params, grads and optimizer state")
    state.t += 1
    if weight_decay:
        params -= lr * weight_decay * params
    state.m *= beta1
    state.m += (1.0 - beta1) * grads
    state.v *= beta2
    state.v += (1.0 - beta2) * grads * grads
    mhat = state.m / (1.0 - beta1**state.t)
    vhat = state.v / (1.0 - beta2**state.t)
    params -= lr * mhat / (np.sqrt(vhat) + eps_opt)
    return params


# ----------------------------------------------------------------- parameters


class ParamSet:
    """Named parameters stored as views into one flat float64 buffer."""

    def __init__(self, shapes: dict[str, tuple[int, int]]):
        self.shapes = dict(shapes)
        total = sum(r * c for r, c in self.shapes.values())
        self.flat = np.zeros(total)
        self.flat_grad = np.zeros(total)
        self.values: dict[str, Value2D] = {}
        off = 0
        for name, (r, c) in self.shapes.items():
            size = r * c
            v = Value2D(self.flat[off:off + size].reshape(r, c), requires_grad=True,
                        grad_buffer=self.flat_grad[off:off + size].reshape(r, c))
            self.values[name] = v
            off += size

    def __getitem__(self, name: str) -> Value2D:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def names(self) -> list[str]:
        return list(self.values)

    def zero_grad(self) -> None:
        self.flat_grad[...] = 0.0

    def copy(self) -> "ParamSet":
        out = ParamSet(self.shapes)
        out.flat[...] = self.flat
        return out


# ----------------------------------------------------------------- grad check


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    tol: float
    per_input: list[float] = field(default_factory=list)


def grad_check(fn: Callable[..., Value2D], inputs: Sequence[Value2D], h: float = 1e-5,
               tol: float = 1e-4, grad_override: Callable | None = None) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar ``fn(*inputs)`` to central differences.

    ``grad_override`` may rewrite the analytic gradients before comparison
    (used to confirm that a corrupted gradient is caught).
    """
    for v in inputs:
        v.requires_grad = True
        v.zero_grad()
    with Tape() as tape:
        out = fn(*inputs)
        if not np.isfinite(out.data).all():
            raise NonFiniteError("non-finite forward value")
        tape.backward(out)
    analytic = [np.zeros(v.shape) if v.grad is None else np.array(v.grad, copy=True) for v in inputs]
    if grad_override is not None:
        analytic = [grad_override(a) for a in analytic]

    errs = []
    for v, a in zip(inputs, analytic):
        flat = v.data.reshape(-1)
        num = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn(*inputs).item()
            flat[i] = orig - h
            fm = fn(*inputs).item()
            flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NonFiniteError("non-finite forward value")
            num[i] = (fp - fm) / (2.0 * h)
        av = a.reshape(-1)
        rel = np.abs(av - num) / np.maximum(1e-8, np.abs(av) + np.abs(num))
        errs.append(float(rel.max()) if rel.size else 0.0)
    worst = max(errs) if errs else 0.0
    return GradCheckReport(worst, worst < tol, tol, errs)
