"""Compiled inner loops for the selective scan recurrence.

Only the sequential part lives here; projections and discretization inputs
are prepared with numpy by :func:`reconmil.diffcore.ssm_scan`.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def scan_forward(x, dt, A, Bt, Ct, Dv):
    N, d = x.shape
    n = A.shape[1]
    h = np.zeros((N, d, n))
    y = np.empty((N, d))
    prev = np.zeros((d, n))
    for t in range(N):
        for c in range(d):
            acc = 0.0
            xc = x[t, c]
            dtc = dt[t, c]
            for i in range(n):
                v = np.exp(dtc * A[c, i]) * prev[c, i] + dtc * Bt[t, i] * xc
                prev[c, i] = v
                h[t, c, i] = v
                acc += Ct[t, i] * v
            y[t, c] = acc + Dv[c] * xc
    return y, h


@njit(cache=True)
def scan_backward(gy, x, dt, A, Bt, Ct, h):
    """Reverse recurrence. Returns grads w.r.t. x (state path only), dt, A, Bt, Ct."""
    N, d = x.shape
    n = A.shape[1]
    gx = np.zeros((N, d))
    gdt = np.zeros((N, d))
    gA = np.zeros((d, n))
    gB = np.zeros((N, n))
    gC = np.zeros((N, n))
    gh = np.zeros((d, n))
    for t in range(N - 1, -1, -1):
        for c in range(d):
            g = gy[t, c]
            xc = x[t, c]
            dtc = dt[t, c]
            acc_dt = 0.0
            acc_x = 0.0
            for i in range(n):
                hv = h[t, c, i]
                gC[t, i] += g * hv
                ght = gh[c, i] + g * Ct[t, i]
                a = np.exp(dtc * A[c, i])
                hp = h[t - 1, c, i] if t > 0 else 0.0
                ga = ght * hp
                acc_dt += ga * a * A[c, i] + ght * Bt[t, i] * xc
                gA[c, i] += ga * a * dtc
                gB[t, i] += ght * dtc * xc
                acc_x += ght * dtc * Bt[t, i]
                gh[c, i] = ght * a
            gdt[t, c] = acc_dt
            gx[t, c] = acc_x
    return gx, gdt, gA, gB, gC
