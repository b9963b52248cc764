"""Compiled inner loops for the fluid engine.

Single-state kernels operate on packed vectors ``[q..., delta0, delta1]``;
``q`` is row-major ``(B, K)`` with ``K = 1`` for exponential service.
Arrival profiles are encoded as ``(kind, a, b)``: 0 constant ``a[0]``,
1 sinusoid ``a[0] + a[1] sin(t / a[2])``, 2 table with breakpoints ``a`` and
rates ``b``.
"""

import math

import numpy as np
from numba import njit

TOL_U = 1e-12
TOL_DELTA = 1e-12


@njit(cache=True, inline="always")
def lam_at(kind, a, b, t):
    if kind == 0:
        return a[0]
    if kind == 1:
        return a[0] + a[1] * math.sin(t / a[2])
    k = np.searchsorted(a, t, side="right") - 1
    if k < 0:
        k = 0
    return b[k]


@njit(cache=True, inline="always")
def rhs(x, lam, mu, nu, B, K, r, R, gamma, exitp, dx):
    """Writes the derivative into ``dx`` and returns the setup-initiation rate.

    ``K == 0`` selects unit-exponential service (one column, r = gamma = exit = 1).
    """
    expo = K == 0
    if expo:
        K = 1
    m = B * K
    d0 = x[m]
    d1 = x[m + 1]
    q1 = 0.0
    for j in range(K):
        q1 += x[j]
    u = 1.0 - q1 - d0 - d1
    # departures (service exits) from servers with >= 1 and >= 2 tasks
    ex1 = 0.0
    ex2 = 0.0
    for j in range(K):
        ex1 += x[j] * gamma[j] * exitp[j]
        if B > 1:
            ex2 += x[K + j] * gamma[j] * exitp[j]
    if u > TOL_U:
        s0 = 1.0
    else:
        s0 = (d1 * nu + ex1 - ex2) / lam
        if s0 > 1.0:
            s0 = 1.0
    overflow = 1.0 - s0
    for i in range(B):
        for j in range(K):
            idx = i * K + j
            qij = x[idx]
            nxt = x[idx + K] if i + 1 < B else 0.0
            acc = 0.0
            if expo:
                # exponential: completions move level i to i-1
                acc = -(qij - nxt)
            else:
                for k in range(K):
                    acc += x[i * K + k] * gamma[k] * R[k, j]
                acc -= gamma[j] * qij
                if i + 1 < B:
                    exits_next = 0.0
                    for k in range(K):
                        exits_next += x[(i + 1) * K + k] * gamma[k] * exitp[k]
                    acc += exits_next * r[j]
            if i == 0:
                acc += lam * s0 * r[j]
            elif q1 > 0.0:
                prev = x[(i - 1) * K + j] - qij
                acc += lam * overflow * prev / q1
            dx[idx] = acc
    chi = lam * overflow if d0 > TOL_DELTA else 0.0
    dx[m] = mu * u - chi
    dx[m + 1] = chi - nu * d1
    return chi


@njit(cache=True, inline="always")
def project(x, B, K, out):
    """Clamp, running-min down the levels, shrink the mass; returns the L-inf move."""
    m = B * K
    for idx in range(m + 2):
        v = x[idx]
        out[idx] = 0.0 if v < 0.0 else (1.0 if v > 1.0 else v)
    for i in range(1, B):
        for j in range(K):
            if out[i * K + j] > out[(i - 1) * K + j]:
                out[i * K + j] = out[(i - 1) * K + j]
    mass = out[m] + out[m + 1]
    for j in range(K):
        mass += out[j]
    if mass > 1.0:
        # a few ulps extra so the rounded sum cannot land just above one
        mass *= 1.0 + 8 * 2.220446049250313e-16
        for j in range(K):
            out[j] /= mass
        out[m] /= mass
        out[m + 1] /= mass
        for i in range(1, B):
            for j in range(K):
                if out[i * K + j] > out[(i - 1) * K + j]:
                    out[i * K + j] = out[(i - 1) * K + j]
    moved = 0.0
    for idx in range(m + 2):
        dv = abs(out[idx] - x[idx])
        if dv > moved or dv != dv:
            moved = dv if dv == dv else np.inf
    return moved


@njit(cache=True, inline="always")
def _stage(y, lam, mu, nu, B, K, r, R, gamma, exitp, buf, dx):
    # the field is extended off the occupancy space through the projection
    project(y, B, K if K > 0 else 1, buf)
    return rhs(buf, lam, mu, nu, B, K, r, R, gamma, exitp, dx)


@njit(cache=True)
def rk4_step(x, t, h, kind, a, b, mu, nu, B, K, r, R, gamma, exitp, out, work):
    """One unprojected RK4 step; returns the xi increment. ``work`` is (6, n) scratch."""
    n = x.shape[0]
    k1 = work[0]
    k2 = work[1]
    k3 = work[2]
    k4 = work[3]
    tmp = work[4]
    buf = work[5]
    c1 = _stage(x, lam_at(kind, a, b, t), mu, nu, B, K, r, R, gamma, exitp, buf, k1)
    for i in range(n):
        tmp[i] = x[i] + 0.5 * h * k1[i]
    c2 = _stage(tmp, lam_at(kind, a, b, t + 0.5 * h), mu, nu, B, K, r, R, gamma, exitp, buf, k2)
    for i in range(n):
        tmp[i] = x[i] + 0.5 * h * k2[i]
    c3 = _stage(tmp, lam_at(kind, a, b, t + 0.5 * h), mu, nu, B, K, r, R, gamma, exitp, buf, k3)
    for i in range(n):
        tmp[i] = x[i] + h * k3[i]
    c4 = _stage(tmp, lam_at(kind, a, b, t + h), mu, nu, B, K, r, R, gamma, exitp, buf, k4)
    for i in range(n):
        out[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    return h / 6.0 * (c1 + 2.0 * c2 + 2.0 * c3 + c4)


@njit(cache=True)
def projected_step(x, t, h, kind, a, b, mu, nu, B, K, r, R, gamma, exitp, tol, accept, max_depth, out,
                   work, stack_t, stack_h, stack_d):
    """RK4 step followed by projection.

    A sub-interval whose result sits more than ``accept`` outside the occupancy
    space (a kink of the field was crossed inside it) is split in two, locally
    and recursively, down to ``max_depth`` halvings. At full depth anything
    within ``tol`` is accepted. Returns ``(xi increment, ok)``.
    """
    n = x.shape[0]
    kp = K if K > 0 else 1
    raw = work[6]
    cur = work[7]
    cand = work[8]
    for i in range(n):
        cur[i] = x[i]
    # explicit stack of pending (start, length, depth), processed in time order
    st = stack_t
    sh = stack_h
    sd = stack_d
    top = 0
    st[0] = t
    sh[0] = h
    sd[0] = 0
    dxi = 0.0
    while top >= 0:
        t0 = st[top]
        h0 = sh[top]
        d = sd[top]
        top -= 1
        inc = rk4_step(cur, t0, h0, kind, a, b, mu, nu, B, K, r, R, gamma, exitp, raw, work)
        moved = project(raw, B, kp, cand)
        if moved <= accept or (d >= max_depth and moved <= tol):
            for i in range(n):
                cur[i] = cand[i]
            dxi += inc
        elif d < max_depth:
            # later half first on the stack so the earlier half runs next
            top += 1
            st[top] = t0 + 0.5 * h0
            sh[top] = 0.5 * h0
            sd[top] = d + 1
            top += 1
            st[top] = t0
            sh[top] = 0.5 * h0
            sd[top] = d + 1
        else:
            return 0.0, False
    for i in range(n):
        out[i] = cur[i]
    return dxi, True


@njit(cache=True)
def integrate(X0, n_steps, dt, every, kind, a, b, mu, nu, B, K, r, R, gamma, exitp, tol, accept, max_depth):
    """Integrate each row of ``X0``; returns (samples, xi samples, failing step or -1, failing row)."""
    n_rows, dim = X0.shape
    n_samples = n_steps // every + 1
    if n_steps % every != 0:
        n_samples += 1
    xs = np.empty((n_samples, n_rows, dim))
    xis = np.zeros((n_samples, n_rows))
    cur = X0.copy()
    nxt = np.empty(dim)
    xi = np.zeros(n_rows)
    work = np.empty((9, dim))
    stack_t = np.empty(max_depth + 2)
    stack_h = np.empty(max_depth + 2)
    stack_d = np.empty(max_depth + 2, dtype=np.int64)
    for row in range(n_rows):
        xs[0, row] = cur[row]
    slot = 1
    for k in range(1, n_steps + 1):
        t = (k - 1) * dt
        for row in range(n_rows):
            dxi, ok = projected_step(cur[row], t, dt, kind, a, b, mu, nu, B, K, r, R, gamma, exitp,
                                     tol, accept, max_depth, nxt, work, stack_t, stack_h, stack_d)
            if not ok:
                return xs, xis, k, row
            cur[row] = nxt
            xi[row] += dxi
        if k % every == 0 or k == n_steps:
            for row in range(n_rows):
                xs[slot, row] = cur[row]
                xis[slot, row] = xi[row]
            slot += 1
    return xs, xis, -1, -1
