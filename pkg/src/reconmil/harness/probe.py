"""Linear-probe diagnostic: is the LSR latent easier to read out than the raw features?

Each bag is mean-pooled (in H or in Z) and an L2-regularized logistic regression
is scored by out-of-fold AUC.  The number is observational only; nothing in
training depends on it.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_expit

from reconmil import diffcore as dc, lsr
from reconmil.heads import ModelParams
from reconmil.metrics import binary_auc


def _fit_logistic(X: np.ndarray, y: np.ndarray, l2: float) -> np.ndarray:
    Xb = np.hstack([X, np.ones((len(X), 1))])
    sign = 2.0 * y - 1.0

    def f(w):
        m = sign * (Xb @ w)
        loss = -log_expit(m).sum() + 0.5 * l2 * w[:-1] @ w[:-1]
        g = -(Xb.T @ (sign * expit(-m)))
        g[:-1] += l2 * w[:-1]
        return loss, g

    return minimize(f, np.zeros(Xb.shape[1]), jac=True, method="L-BFGS-B").x


def probe_auc(X, y, k: int = 5, l2: float = 1.0, seed: int = 0) -> float:
    """Out-of-fold AUC of a logistic probe on rows of ``X`` with binary labels ``y``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if set(np.unique(y)) != {0, 1}:
        raise ValueError("probe needs binary labels with both classes present")
    mu, sd = X.mean(axis=0), X.std(axis=0) + 1e-12
    X = (X - mu) / sd
    fold = np.empty(len(y), dtype=int)
    rng = np.random.default_rng(seed)
    for c in (0, 1):  # stratified round-robin
        idx = rng.permutation(np.flatnonzero(y == c))
        fold[idx] = np.arange(len(idx)) % k
    scores = np.empty(len(y))
    for f in range(k):
        test = fold == f
        w = _fit_logistic(X[~test], y[~test], l2)
        scores[test] = X[test] @ w[:-1] + w[-1]
    return binary_auc(scores, y == 1)


def pooled_representations(params: ModelParams, bags) -> tuple[np.ndarray, np.ndarray]:
    """Mean-pooled raw features and mean-pooled LSR latents, one row per bag."""
    p = params.lsr_params()
    H_bar, Z_bar = [], []
    for b in bags:
        H = dc.const(b.features)
        Z = lsr.lsr_forward(H, p)[0] if p is not None else dc.linear(H, params["lsr.skip_W"])
        H_bar.append(b.features.mean(axis=0))
        Z_bar.append(Z.data.mean(axis=0))
    return np.array(H_bar), np.array(Z_bar)


def latent_probe(params: ModelParams, bags, seed: int = 0) -> dict:
    """Probe AUC on pooled H versus pooled Z for binary classification bags."""
    H_bar, Z_bar = pooled_representations(params, bags)
    y = np.array([b.label.class_index for b in bags])
    return {"H": probe_auc(H_bar, y, seed=seed), "Z": probe_auc(Z_bar, y, seed=seed)}
