"""Compiled kernels for drift evaluation and the transcribed control system.

Every drift family is encoded as ``(kind, p, P)`` with ``P`` a flat float
array:

* ``LINEAR``: ``P = A.ravel()`` and ``b(x) = A x``.
* ``SEPARABLE``: ``P = [k2 (p), k4 (p), box (p)]`` and ``b_i(x) = -U_i'(x_i)``
  where ``U_i' = k2 x + k4 x^3`` inside ``|x| <= box`` and continues with
  the tangent slope outside.
* ``POLYNOMIAL``: ``P = [m, E (m*p), C (p*m)]`` and
  ``b_i(x) = sum_t C[i, t] prod_j x_j^E[t, j]``.
"""

from __future__ import annotations

import numpy as np
from numba import njit

LINEAR = 0
SEPARABLE = 1
POLYNOMIAL = 2


@njit(cache=True)
def _sep_dU(k2, k4, box, x):
    if abs(x) <= box:
        return k2 * x + k4 * x * x * x
    s = 1.0 if x > 0 else -1.0
    edge = k2 * box + k4 * box * box * box
    slope = k2 + 3.0 * k4 * box * box
    return s * (edge + slope * (abs(x) - box))


@njit(cache=True)
def _sep_d2U(k2, k4, box, x):
    if abs(x) <= box:
        return k2 + 3.0 * k4 * x * x
    return k2 + 3.0 * k4 * box * box


@njit(cache=True)
def _ipow(x, e):
    r = 1.0
    for _ in range(e):
        r *= x
    return r


@njit(cache=True)
def drift_into(kind, p, P, y, out):
    if kind == LINEAR:
        for i in range(p):
            acc = 0.0
            for j in range(p):
                acc += P[i * p + j] * y[j]
            out[i] = acc
    elif kind == SEPARABLE:
        for i in range(p):
            out[i] = -_sep_dU(P[i], P[p + i], P[2 * p + i], y[i])
    else:
        m = int(P[0])
        for i in range(p):
            out[i] = 0.0
        for t in range(m):
            mono = 1.0
            for j in range(p):
                mono *= _ipow(y[j], int(P[1 + t * p + j]))
            for i in range(p):
                out[i] += P[1 + m * p + i * m + t] * mono


@njit(cache=True)
def jac_into(kind, p, P, y, out):
    if kind == LINEAR:
        for i in range(p):
            for j in range(p):
                out[i, j] = P[i * p + j]
    elif kind == SEPARABLE:
        for i in range(p):
            for j in range(p):
                out[i, j] = 0.0
            out[i, i] = -_sep_d2U(P[i], P[p + i], P[2 * p + i], y[i])
    else:
        m = int(P[0])
        for i in range(p):
            for j in range(p):
                out[i, j] = 0.0
        for t in range(m):
            for j in range(p):
                e = int(P[1 + t * p + j])
                if e == 0:
                    continue
                d = e * _ipow(y[j], e - 1)
                for l in range(p):
                    if l != j:
                        d *= _ipow(y[l], int(P[1 + t * p + l]))
                for i in range(p):
                    out[i, j] += P[1 + m * p + i * m + t] * d


@njit(cache=True)
def drift_batch(kind, p, P, Y):
    M = Y.shape[0]
    out = np.empty((M, p))
    for r in range(M):
        drift_into(kind, p, P, Y[r], out[r])
    return out


@njit(cache=True)
def jac_batch(kind, p, P, Y):
    M = Y.shape[0]
    out = np.empty((M, p, p))
    for r in range(M):
        jac_into(kind, p, P, Y[r], out[r])
    return out


@njit(cache=True)
def rk4_batch(kind, p, P, X, n_steps, h, sign):
    """Classical RK4 for ``y' = sign * b(y)`` from every row of ``X``.

    Returns states of shape ``(n_steps + 1, M, p)``.
    """
    M = X.shape[0]
    out = np.empty((n_steps + 1, M, p))
    k1 = np.empty(p)
    k2 = np.empty(p)
    k3 = np.empty(p)
    k4 = np.empty(p)
    tmp = np.empty(p)
    for r in range(M):
        y = X[r].copy()
        out[0, r] = y
        for k in range(n_steps):
            drift_into(kind, p, P, y, k1)
            for i in range(p):
                tmp[i] = y[i] + 0.5 * h * sign * k1[i]
            drift_into(kind, p, P, tmp, k2)
            for i in range(p):
                tmp[i] = y[i] + 0.5 * h * sign * k2[i]
            drift_into(kind, p, P, tmp, k3)
            for i in range(p):
                tmp[i] = y[i] + h * sign * k3[i]
            drift_into(kind, p, P, tmp, k4)
            for i in range(p):
                y[i] = y[i] + (h / 6.0) * sign * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            out[k + 1, r] = y
    return out


@njit(cache=True)
def rollout(kind, p, P, x, U, h, sign, nodes, coords, targets):
    """Explicit Euler for ``y' = sign * b(y) + u`` with coordinate resets.

    ``U`` holds one constant control per step.  At node ``nodes[j]`` the
    coordinate ``coords[j]`` is replaced by ``targets[j]`` before the step
    out of that node (a reset at node ``N`` acts on the terminal state).
    Returns the post-reset states and the arrival values overwritten by
    each reset.
    """
    N = U.shape[0]
    nimp = nodes.shape[0]
    Y = np.empty((N + 1, p))
    arrivals = np.empty(nimp)
    y = x.copy()
    b = np.empty(p)
    j = 0
    for k in range(N + 1):
        while j < nimp and nodes[j] == k:
            arrivals[j] = y[coords[j]]
            y[coords[j]] = targets[j]
            j += 1
        Y[k] = y
        if k < N:
            drift_into(kind, p, P, y, b)
            for i in range(p):
                y[i] = y[i] + h * (sign * b[i] + U[k, i])
    return Y, arrivals


@njit(cache=True)
def adjoint(kind, p, P, Y, U, h, sign, nodes, coords, g_term, g_node):
    """Discrete adjoint of :func:`rollout`.

    The objective is ``sum_k c_k(y_k) + Phi(y_N)`` plus any control cost
    handled by the caller, with ``g_node[k] = grad c_k(y_k)`` and
    ``g_term = grad Phi(y_N)`` at post-reset states.  Returns gradients
    with respect to the controls, the reset targets and the initial state.
    """
    N = U.shape[0]
    nimp = nodes.shape[0]
    gU = np.empty((N, p))
    gth = np.zeros(nimp)
    J = np.empty((p, p))
    nu = np.empty(p)
    mu = np.empty(p)
    for i in range(p):
        mu[i] = g_term[i] + g_node[N, i]
    j = nimp - 1
    for k in range(N, -1, -1):
        if k < N:
            jac_into(kind, p, P, Y[k], J)
            for i in range(p):
                gU[k, i] = h * nu[i]
            for i in range(p):
                acc = 0.0
                for l in range(p):
                    acc += J[l, i] * nu[l]
                mu[i] = g_node[k, i] + nu[i] + sign * h * acc
        while j >= 0 and nodes[j] == k:
            c = coords[j]
            gth[j] = mu[c]
            mu[c] = 0.0
            j -= 1
        for i in range(p):
            nu[i] = mu[i]
    return gU, gth, nu
