"""Naive loop references for the scan and convolution kernels.

Written with plain Python floats and ``math`` so they share no code with the
vectorized / compiled paths they are compared against.
"""

from __future__ import annotations

import math


def _softplus(v: float) -> float:
    return v if v > 30.0 else math.log1p(math.exp(v))


def _gelu(v: float) -> float:
    return 0.5 * v * (1.0 + math.tanh(math.sqrt(2.0 / math.pi) * (v + 0.044715 * v * v * v)))


def ssm_scan_naive(x, A, W_delta, b_delta, W_B, W_C, D_skip):
    """Sequential recurrence; x is N x d nested lists / arrays, A and W_B/W_C d x n."""
    N, d, n = len(x), len(A), len(A[0])
    h = [[0.0] * n for _ in range(d)]
    out = []
    for t in range(N):
        row = [float(v) for v in x[t]]
        Bt = [sum(row[c] * W_B[c][i] for c in range(d)) for i in range(n)]
        Ct = [sum(row[c] * W_C[c][i] for c in range(d)) for i in range(n)]
        y = []
        for c in range(d):
            delta = _softplus(row[c] * W_delta[c] + b_delta[c])
            acc = 0.0
            for i in range(n):
                h[c][i] = math.exp(delta * A[c][i]) * h[c][i] + delta * Bt[i] * row[c]
                acc += Ct[i] * h[c][i]
            y.append(acc + D_skip[c] * row[c])
        out.append(y)
    return out


def dwconv1d_naive(x, K):
    N, d, k = len(x), len(K), len(K[0])
    p = (k - 1) // 2
    out = [[0.0] * d for _ in range(N)]
    for t in range(N):
        for c in range(d):
            acc = 0.0
            for j in range(k):
                s = t + j - p
                if 0 <= s < N:
                    acc += K[c][j] * x[s][c]
            out[t][c] = acc
    return out


def local_stream_naive(x, K, pw_W, pw_b):
    conv = dwconv1d_naive(x, K)
    d_in, d_out = len(pw_W), len(pw_W[0])
    out = []
    for row in conv:
        act = [_gelu(v) for v in row]
        out.append([sum(act[c] * pw_W[c][o] for c in range(d_in)) + pw_b[o] for o in range(d_out)])
    return out
