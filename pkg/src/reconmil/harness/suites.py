"""Finite-difference gradient suite and brute-force oracle suite."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from reconmil import bgm, diffcore as dc, lsr, reference
from reconmil.bagstore import FeatureBag, LabelRecord, grid_coords
from reconmil.heads import (ModelArch, ModelParams, model_forward, survival_nll, survival_target, task_loss,
                            total_loss)

SMOOTH_TOL = 1e-6
DEFAULT_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.error < self.tol

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<32} err={self.error:.3e}  tol={self.tol:.0e}  ({self.seconds:.2f}s)"


def _weighted_sum(y: dc.Value2D, R: np.ndarray) -> dc.Value2D:
    """sum(y * R) as a 1x1 value, so every output coordinate carries gradient."""
    col = dc.linear(dc.mul(y, dc.const(R)), dc.const(np.ones((y.shape[1], 1))))
    return dc.scale(dc.mean_rows(col), y.shape[0])


def _ssm_inputs(rng, d, n):
    return [dc.param(rng.normal(0, 0.5, (d, n))),           # a_log
            dc.param(rng.normal(0, 0.5, (1, d))),
            dc.param(rng.normal(-2.0, 0.5, (1, d))),
            dc.param(rng.normal(0, 0.5, (d, n))),
            dc.param(rng.normal(0, 0.5, (d, n))),
            dc.param(rng.normal(1.0, 0.2, (1, d)))]


def _layer_values(rng, d, streams=bgm.StreamConfig()):
    ps = dc.ParamSet(bgm.layer_shapes(d, n=4, k=3, e=2, streams=streams))
    bgm.init_layer(ps, rng)
    _generic_point(ps, rng, 0.1)
    return ps


def _generic_point(ps, rng, sigma):
    """Jitter away from the init and use O(1) scan step sizes.

    At init softplus(b_delta) is ~1e-3, which leaves the state-decay gradients
    near 1e-8 where central differences are dominated by roundoff.
    """
    ps.flat[...] += rng.normal(0, sigma, ps.flat.shape)
    for name in ps.names():
        if name.endswith("b_delta"):
            ps[name].data[...] = rng.normal(0.0, 0.5, ps[name].shape)


def gradient_checks(seed: int = 0) -> list[tuple[str, float, callable]]:
    """(name, tolerance, thunk returning a GradCheckReport)."""
    rng = np.random.default_rng(seed)
    checks = []

    def add(name, tol, fn, inputs):
        checks.append((name, tol, lambda: dc.grad_check(fn, inputs, h=1e-5, tol=tol)))

    x = dc.param(rng.normal(size=(3, 4)))
    W = dc.param(rng.normal(size=(4, 2)))
    b = dc.param(rng.normal(size=(1, 2)))
    R = rng.normal(size=(3, 2))
    add("linear", SMOOTH_TOL, lambda x, W, b, R=R: _weighted_sum(dc.linear(x, W, b), R), [x, W, b])

    x = dc.param(rng.normal(size=(4, 8)))
    g = dc.param(rng.normal(1.0, 0.3, (1, 8)))
    be = dc.param(rng.normal(size=(1, 8)))
    R = rng.normal(size=(4, 8))
    add("layer_norm", SMOOTH_TOL, lambda x, g, be, R=R: _weighted_sum(dc.layer_norm(x, g, be), R), [x, g, be])

    for kind in ("gelu", "sigmoid", "softplus", "tanh"):
        x = dc.param(rng.uniform(-3, 3, (4, 5)))
        R = rng.normal(size=(4, 5))
        add(f"activation[{kind}]", SMOOTH_TOL,
            lambda x, kind=kind, R=R: _weighted_sum(dc.activation(x, kind), R), [x])

    x = dc.param(rng.normal(size=(9, 4)))
    K = dc.param(rng.normal(size=(4, 3)))
    R = rng.normal(size=(9, 4))
    add("dwconv1d", DEFAULT_TOL, lambda x, K, R=R: _weighted_sum(dc.dwconv1d(x, K), R), [x, K])

    N, d, n = 16, 4, 8
    x = dc.param(rng.normal(size=(N, d)))
    sp = _ssm_inputs(rng, d, n)
    R = rng.normal(size=(N, d))

    def ssm_fn(x, a_log, *rest, R=R):
        return _weighted_sum(dc.ssm_scan(x, dc.SSMParams(dc.neg_exp(a_log), *rest)), R)

    add("ssm_scan", DEFAULT_TOL, ssm_fn, [x] + sp)

    a = dc.param(rng.normal(size=(3, 4)))
    t = dc.param(rng.normal(size=(3, 4)))
    add("mse", DEFAULT_TOL, lambda a, t: dc.mse(a, t), [a, t])

    z = dc.param(rng.normal(size=(1, 5)))
    add("cross_entropy", DEFAULT_TOL, lambda z: dc.cross_entropy(z, 2), [z])

    z = dc.param(rng.normal(size=(1, 4)))
    cuts = (0.0, 1.0, 2.0, 3.0, float("inf"))
    tgt = survival_target(LabelRecord.survival(2.5, True), cuts)
    add("survival_nll", DEFAULT_TOL, lambda z: survival_nll(z, tgt), [z])

    zs = dc.param(rng.normal(size=(6, 1)))
    zz = dc.param(rng.normal(size=(6, 3)))
    R = rng.normal(size=(1, 3))
    add("attention_pool", DEFAULT_TOL,
        lambda s, z, R=R: _weighted_sum(dc.softmax_rows_weighted_sum(s, z)[0], R), [zs, zz])

    # LSR round trip: reconstruction loss through encoder, skip and decoder
    D, dl = 6, 4
    ps = dc.ParamSet(lsr.lsr_shapes(D, dl, 5))
    lsr.init_lsr(ps, rng)
    ps.flat[...] += rng.normal(0, 0.2, ps.flat.shape)
    H = dc.param(rng.normal(size=(5, D)))
    names = ps.names()

    def lsr_fn(H, *vals):
        p = lsr.LSRParams(**{k.split(".", 1)[1]: v for k, v in zip(names, vals)})
        Z, H_hat = lsr.lsr_forward(H, p)
        return lsr.recon_loss(H, H_hat)

    add("lsr_round_trip", DEFAULT_TOL, lsr_fn, [H] + [ps[k] for k in names])

    # one full bi-stream layer on a 5 x 8 input
    lps = _layer_values(rng, 8)
    lnames = lps.names()
    z0 = dc.param(rng.normal(size=(5, 8)))
    R = rng.normal(size=(5, 8))

    def layer_fn(z, *vals, R=R):
        p = bgm.BGMLayerParams(**dict(zip(lnames, vals)))
        return _weighted_sum(bgm.bgm_layer(z, p), R)

    add("bgm_layer", DEFAULT_TOL, layer_fn, [z0] + [lps[k] for k in lnames])

    # end to end: 6 x 16 bag, d = 8, classification total loss
    arch = ModelArch(D=16, d=8, L=2, n=4, e=2, C=3)
    mp = ModelParams.init(arch, seed)
    _generic_point(mp.values, rng, 0.05)
    bag = FeatureBag("gc", rng.normal(size=(6, 16)), LabelRecord.classification(1), grid_coords(6))
    vals = [mp[k] for k in mp.values.names()]

    def e2e(*_):
        fr = model_forward(bag, mp, want_saliency=False)
        return total_loss(task_loss(fr.logits, bag.label), fr.L_rec, 0.1)

    add("end_to_end_loss", DEFAULT_TOL, e2e, vals)
    return checks


def run_gradient_suite(seed: int = 0, echo=print) -> list[CheckResult]:
    results = []
    for name, tol, thunk in gradient_checks(seed):
        t0 = time.perf_counter()
        rep = thunk()
        res = CheckResult(name, rep.max_rel_err, tol, time.perf_counter() - t0)
        results.append(res)
        if echo:
            echo(res.line())
    return results


def run_oracle_suite(seed: int = 0, cases: int = 50, echo=print) -> list[CheckResult]:
    """Fast kernels vs naive loops on random shapes."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(cases):
        N, d, n = int(rng.integers(1, 65)), int(rng.integers(1, 17)), int(rng.integers(1, 17))
        x = rng.normal(size=(N, d))
        A = -np.exp(rng.normal(0, 0.5, (d, n)))
        Wd, bd = rng.normal(0, 0.5, d), rng.normal(-1.0, 0.5, d)
        WB, WC = rng.normal(0, 1 / np.sqrt(d), (d, n)), rng.normal(0, 1 / np.sqrt(d), (d, n))
        Ds = rng.normal(1.0, 0.2, d)
        fast = dc.ssm_scan(dc.const(x), dc.SSMParams(dc.const(A), dc.const(Wd), dc.const(bd), dc.const(WB),
                                                      dc.const(WC), dc.const(Ds))).data
        slow = np.array(reference.ssm_scan_naive(x.tolist(), A.tolist(), Wd.tolist(), bd.tolist(),
                                                 WB.tolist(), WC.tolist(), Ds.tolist()))
        worst = max(worst, float(np.max(np.abs(fast - slow))))
    results = [CheckResult(f"ssm_scan vs recurrence ({cases})", worst, 1e-10, time.perf_counter() - t0)]

    t0 = time.perf_counter()
    worst_conv = worst_local = 0.0
    for _ in range(cases):
        N, d, k = int(rng.integers(1, 65)), int(rng.integers(1, 17)), int(rng.choice([1, 3, 5, 7]))
        x = rng.normal(size=(N, d))
        K = rng.normal(size=(d, k))
        pw, pb = rng.normal(size=(d, d)), rng.normal(size=d)
        fast = dc.dwconv1d(dc.const(x), dc.const(K)).data
        slow = np.array(reference.dwconv1d_naive(x.tolist(), K.tolist()))
        worst_conv = max(worst_conv, float(np.max(np.abs(fast - slow))))
        fast = bgm.local_stream(dc.const(x), dc.const(K), dc.const(pw), dc.const(pb)).data
        slow = np.array(reference.local_stream_naive(x.tolist(), K.tolist(), pw.tolist(), pb.tolist()))
        worst_local = max(worst_local, float(np.max(np.abs(fast - slow))))
    dt = time.perf_counter() - t0
    results.append(CheckResult(f"dwconv1d vs loops ({cases})", worst_conv, 1e-12, dt))
    results.append(CheckResult(f"local_stream vs loops ({cases})", worst_local, 1e-12, dt))
    if echo:
        for r in results:
            echo(r.line())
    return results
