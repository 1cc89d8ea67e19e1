"""Compiled integration kernels for polynomial control systems.

Every kernel takes the polynomial table ``tab = (coef, powers, comp, field, n, k)``
describing ``F(x)[comp[t], field[t]] += coef[t] * prod(x ** powers[t])``.
The control is piecewise constant on a uniform grid of ``N`` cells over [0, 1]
and held fixed inside each classic RK4 step (sample-and-hold).

Index conventions: ``jac[i, l, m] = d F^i_l / d x_m`` and
``hess[i, l, m, p] = d^2 F^i_l / d x_m d x_p``.
"""

import numpy as np
from numba import njit


# --------------------------------------------------------------------------
# polynomial evaluation
# --------------------------------------------------------------------------
@njit(cache=True, nogil=True)
def _mono(x, pw, t):
    v = 1.0
    for p in range(x.shape[0]):
        e = pw[t, p]
        if e != 0:
            v *= x[p] ** e
    return v


@njit(cache=True, nogil=True)
def _dmono(x, pw, t, m):
    e = pw[t, m]
    if e == 0:
        return 0.0
    v = e * x[m] ** (e - 1)
    for p in range(x.shape[0]):
        if p != m and pw[t, p] != 0:
            v *= x[p] ** pw[t, p]
    return v


@njit(cache=True, nogil=True)
def _ddmono(x, pw, t, m, q):
    em = pw[t, m]
    eq = pw[t, q]
    if m == q:
        if em < 2:
            return 0.0
        v = em * (em - 1) * x[m] ** (em - 2)
    else:
        if em == 0 or eq == 0:
            return 0.0
        v = em * eq * x[m] ** (em - 1) * x[q] ** (eq - 1)
    for p in range(x.shape[0]):
        if p != m and p != q and pw[t, p] != 0:
            v *= x[p] ** pw[t, p]
    return v


@njit(cache=True, nogil=True)
def fields(x, tab):
    coef, pw, comp, fld, n, k = tab
    out = np.zeros((n, k))
    for t in range(coef.shape[0]):
        out[comp[t], fld[t]] += coef[t] * _mono(x, pw, t)
    return out


@njit(cache=True, nogil=True)
def jacobians(x, tab):
    coef, pw, comp, fld, n, k = tab
    out = np.zeros((k, n, n))
    for t in range(coef.shape[0]):
        for m in range(n):
            out[fld[t], comp[t], m] += coef[t] * _dmono(x, pw, t, m)
    return out


@njit(cache=True, nogil=True)
def hessians(x, tab):
    coef, pw, comp, fld, n, k = tab
    out = np.zeros((k, n, n, n))
    for t in range(coef.shape[0]):
        for m in range(n):
            for q in range(m, n):
                d = coef[t] * _ddmono(x, pw, t, m, q)
                out[fld[t], comp[t], m, q] += d
                if q != m:
                    out[fld[t], comp[t], q, m] += d
    return out


@njit(cache=True, nogil=True)
def _rhs(x, u, tab):
    coef, pw, comp, fld, n, k = tab
    out = np.zeros(n)
    for t in range(coef.shape[0]):
        c = coef[t] * u[fld[t]]
        if c != 0.0:
            out[comp[t]] += c * _mono(x, pw, t)
    return out


@njit(cache=True, nogil=True)
def _amat(x, u, tab):
    """A(x, u) = sum_i u^i dF^i/dx."""
    coef, pw, comp, fld, n, k = tab
    out = np.zeros((n, n))
    for t in range(coef.shape[0]):
        c = coef[t] * u[fld[t]]
        if c != 0.0:
            for m in range(n):
                out[comp[t], m] += c * _dmono(x, pw, t, m)
    return out


@njit(cache=True, nogil=True)
def _damat(x, u, v, dx, tab):
    """Directional derivative of A(x, u) along (dx, v)."""
    coef, pw, comp, fld, n, k = tab
    out = np.zeros((n, n))
    for t in range(coef.shape[0]):
        cu = coef[t] * u[fld[t]]
        cv = coef[t] * v[fld[t]]
        for m in range(n):
            if cv != 0.0:
                out[comp[t], m] += cv * _dmono(x, pw, t, m)
            if cu != 0.0:
                acc = 0.0
                for p in range(n):
                    if dx[p] != 0.0:
                        acc += _ddmono(x, pw, t, m, p) * dx[p]
                out[comp[t], m] += cu * acc
    return out


# --------------------------------------------------------------------------
# forward sweeps
# --------------------------------------------------------------------------
@njit(cache=True, nogil=True)
def state_nodes(x0, U, tab):
    N = U.shape[0]
    h = 1.0 / N
    X = np.empty((N + 1, x0.shape[0]))
    X[0] = x0
    for j in range(N):
        x = X[j]
        u = U[j]
        k1 = _rhs(x, u, tab)
        k2 = _rhs(x + 0.5 * h * k1, u, tab)
        k3 = _rhs(x + 0.5 * h * k2, u, tab)
        k4 = _rhs(x + h * k3, u, tab)
        X[j + 1] = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return X


@njit(cache=True, nogil=True)
def midpoints(X, U, tab):
    """States at cell midpoints, from a half-length RK4 step off each left node."""
    N = U.shape[0]
    h = 0.5 / N
    out = np.empty((N, X.shape[1]))
    for j in range(N):
        x = X[j]
        u = U[j]
        k1 = _rhs(x, u, tab)
        k2 = _rhs(x + 0.5 * h * k1, u, tab)
        k3 = _rhs(x + 0.5 * h * k2, u, tab)
        k4 = _rhs(x + h * k3, u, tab)
        out[j] = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return out


@njit(cache=True, nogil=True)
def matrix_nodes(X, U, tab, sign):
    """RK4 on the state augmented with an n-by-n matrix.

    sign=+1 integrates dM/ds = A M (fundamental matrix); sign=-1 integrates
    dN/ds = -N A (its inverse). Both start from the identity and evaluate A at
    the state's own RK4 stage points.
    """
    N = U.shape[0]
    n = X.shape[1]
    h = 1.0 / N
    out = np.empty((N + 1, n, n))
    out[0] = np.eye(n)
    for j in range(N):
        x = X[j]
        u = U[j]
        P = out[j]
        k1 = _rhs(x, u, tab)
        s2 = x + 0.5 * h * k1
        k2 = _rhs(s2, u, tab)
        s3 = x + 0.5 * h * k2
        k3 = _rhs(s3, u, tab)
        s4 = x + h * k3
        if sign > 0:
            m1 = _amat(x, u, tab) @ P
            m2 = _amat(s2, u, tab) @ (P + 0.5 * h * m1)
            m3 = _amat(s3, u, tab) @ (P + 0.5 * h * m2)
            m4 = _amat(s4, u, tab) @ (P + h * m3)
        else:
            m1 = -(P @ _amat(x, u, tab))
            m2 = -((P + 0.5 * h * m1) @ _amat(s2, u, tab))
            m3 = -((P + 0.5 * h * m2) @ _amat(s3, u, tab))
            m4 = -((P + h * m3) @ _amat(s4, u, tab))
        out[j + 1] = P + (h / 6.0) * (m1 + 2.0 * m2 + 2.0 * m3 + m4)
    return out


@njit(cache=True, nogil=True)
def _tangent_stages(x, dx, u, v, h, tab):
    n = x.shape[0]
    S = np.empty((4, n))
    dS = np.empty((4, n))
    K = np.empty((4, n))
    dK = np.empty((4, n))
    c = (0.0, 0.5 * h, 0.5 * h, h)
    S[0] = x
    dS[0] = dx
    for s in range(4):
        if s > 0:
            S[s] = x + c[s] * K[s - 1]
            dS[s] = dx + c[s] * dK[s - 1]
        K[s] = _rhs(S[s], u, tab)
        dK[s] = _amat(S[s], u, tab) @ dS[s] + fields(S[s], tab) @ v
    return S, dS, K, dK


@njit(cache=True, nogil=True)
def tangent_nodes(X, U, V, tab):
    """Exact tangent of the RK4 node map along the control direction V.

    Identical to RK4 applied to the state augmented with the first-variation
    equation dy/ds = A y + F(x) v, y(0) = 0.
    """
    N = U.shape[0]
    n = X.shape[1]
    h = 1.0 / N
    Y = np.zeros((N + 1, n))
    for j in range(N):
        S, dS, K, dK = _tangent_stages(X[j], Y[j], U[j], V[j], h, tab)
        Y[j + 1] = Y[j] + (h / 6.0) * (dK[0] + 2.0 * dK[1] + 2.0 * dK[2] + dK[3])
    return Y


@njit(cache=True, nogil=True)
def second_variation_nodes(X, U, V, W, YV, YW, tab):
    """RK4 on the second-variation equation, stage-consistent with the tangents."""
    N = U.shape[0]
    n = X.shape[1]
    h = 1.0 / N
    Z = np.zeros((N + 1, n))
    c = (0.0, 0.5 * h, 0.5 * h, h)
    for j in range(N):
        u = U[j]
        S, dSv, K, dKv = _tangent_stages(X[j], YV[j], u, V[j], h, tab)
        S, dSw, K, dKw = _tangent_stages(X[j], YW[j], u, W[j], h, tab)
        z = Z[j]
        kz = np.zeros((4, n))
        for s in range(4):
            zs = z + c[s] * kz[s - 1] if s > 0 else z
            jac = jacobians(S[s], tab)
            hes = hessians(S[s], tab)
            acc = _amat(S[s], u, tab) @ zs
            for i in range(jac.shape[0]):
                acc += V[j, i] * (jac[i] @ dSw[s]) + W[j, i] * (jac[i] @ dSv[s])
                if u[i] != 0.0:
                    for l in range(n):
                        acc[l] += u[i] * (dSv[s] @ (hes[i, l] @ dSw[s]))
            kz[s] = acc
        Z[j + 1] = z + (h / 6.0) * (kz[0] + 2.0 * kz[1] + 2.0 * kz[2] + kz[3])
    return Z


# --------------------------------------------------------------------------
# backward sweeps
# --------------------------------------------------------------------------
@njit(cache=True, nogil=True)
def costate_nodes(X, XM, U, lam_end, tab):
    """Backward RK4 for d(lam)/ds = -lam A, lam(1) = lam_end.

    A is evaluated at the right node, the recomputed midpoint state XM and the
    left node of each cell.
    """
    N = U.shape[0]
    h = 1.0 / N
    L = np.empty((N + 1, X.shape[1]))
    L[N] = lam_end
    for j in range(N - 1, -1, -1):
        u = U[j]
        lam = L[j + 1]
        a_r = _amat(X[j + 1], u, tab)
        a_m = _amat(XM[j], u, tab)
        a_l = _amat(X[j], u, tab)
        k1 = lam @ a_r
        k2 = (lam + 0.5 * h * k1) @ a_m
        k3 = (lam + 0.5 * h * k2) @ a_m
        k4 = (lam + h * k3) @ a_l
        L[j] = lam + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return L


@njit(cache=True, nogil=True)
def discrete_adjoint(X, U, lam_end, tab):
    """Reverse sweep through the RK4 map.

    Returns the node covectors d a / d x_j and the raw control gradient
    d a(x_N) / d U[j] (no 1/h rescaling).
    """
    N = U.shape[0]
    n = X.shape[1]
    k = U.shape[1]
    h = 1.0 / N
    L = np.empty((N + 1, n))
    G = np.zeros((N, k))
    L[N] = lam_end
    c = (0.0, 0.5 * h, 0.5 * h, h)
    b = (h / 6.0, h / 3.0, h / 3.0, h / 6.0)
    for j in range(N - 1, -1, -1):
        x = X[j]
        u = U[j]
        lam = L[j + 1]
        S = np.empty((4, n))
        S[0] = x
        kp = _rhs(x, u, tab)
        for s in range(1, 4):
            S[s] = x + c[s] * kp
            kp = _rhs(S[s], u, tab)
        bk = np.empty((4, n))
        for s in range(4):
            bk[s] = b[s] * lam
        bx = lam.copy()
        for s in range(3, -1, -1):
            bS = bk[s] @ _amat(S[s], u, tab)
            G[j] += bk[s] @ fields(S[s], tab)
            bx += bS
            if s > 0:
                bk[s - 1] += c[s] * bS
        L[j] = bx
    return L, G


@njit(cache=True, nogil=True)
def discrete_adjoint_tangent(X, U, V, Y, lam_end, dlam_end, tab):
    """Forward-mode derivative of ``discrete_adjoint`` along control direction V.

    Y are the tangent nodes from ``tangent_nodes`` for the same V, and
    dlam_end the matching perturbation of the terminal covector. Returns the
    raw control-gradient derivative (no 1/h rescaling).
    """
    N = U.shape[0]
    n = X.shape[1]
    k = U.shape[1]
    h = 1.0 / N
    c = (0.0, 0.5 * h, 0.5 * h, h)
    b = (h / 6.0, h / 3.0, h / 3.0, h / 6.0)
    lam = lam_end.copy()
    dlam = dlam_end.copy()
    dG = np.zeros((N, k))
    for j in range(N - 1, -1, -1):
        u = U[j]
        v = V[j]
        S, dS, K, dK = _tangent_stages(X[j], Y[j], u, v, h, tab)
        bk = np.empty((4, n))
        dbk = np.empty((4, n))
        for s in range(4):
            bk[s] = b[s] * lam
            dbk[s] = b[s] * dlam
        bx = lam.copy()
        dbx = dlam.copy()
        for s in range(3, -1, -1):
            a = _amat(S[s], u, tab)
            da = _damat(S[s], u, v, dS[s], tab)
            f = fields(S[s], tab)
            jac = jacobians(S[s], tab)
            bS = bk[s] @ a
            dbS = dbk[s] @ a + bk[s] @ da
            dG[j] += dbk[s] @ f
            for i in range(k):
                dG[j, i] += bk[s] @ (jac[i] @ dS[s])
            bx += bS
            dbx += dbS
            if s > 0:
                bk[s - 1] += c[s] * bS
                dbk[s - 1] += c[s] * dbS
        lam = bx
        dlam = dbx
    return dG


@njit(cache=True, nogil=True)
def forced_costate_nodes(X, XM, U, RL, RM, RR, tab):
    """Backward RK4 for d(mu)/ds = -mu A - r, mu(1) = 0.

    The forcing row r of cell j is sampled at its left end (RL), midpoint (RM)
    and right end (RR), all with the cell's own control value.
    """
    N = U.shape[0]
    h = 1.0 / N
    L = np.zeros((N + 1, X.shape[1]))
    for j in range(N - 1, -1, -1):
        u = U[j]
        mu = L[j + 1]
        a_r = _amat(X[j + 1], u, tab)
        a_m = _amat(XM[j], u, tab)
        a_l = _amat(X[j], u, tab)
        k1 = mu @ a_r + RR[j]
        k2 = (mu + 0.5 * h * k1) @ a_m + RM[j]
        k3 = (mu + 0.5 * h * k2) @ a_m + RM[j]
        k4 = (mu + h * k3) @ a_l + RL[j]
        L[j] = mu + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return L


@njit(cache=True, nogil=True)
def midpoint_costates(X, U, L, tab):
    """Costate at cell midpoints by a half-length RK4 step of (x, lam) off each left node."""
    N = U.shape[0]
    h = 0.5 / N
    out = np.empty((N, X.shape[1]))
    for j in range(N):
        x = X[j]
        u = U[j]
        lam = L[j]
        k1 = _rhs(x, u, tab)
        l1 = -(lam @ _amat(x, u, tab))
        s2 = x + 0.5 * h * k1
        k2 = _rhs(s2, u, tab)
        l2 = -((lam + 0.5 * h * l1) @ _amat(s2, u, tab))
        s3 = x + 0.5 * h * k2
        k3 = _rhs(s3, u, tab)
        l3 = -((lam + 0.5 * h * l2) @ _amat(s3, u, tab))
        s4 = x + h * k3
        l4 = -((lam + h * l3) @ _amat(s4, u, tab))
        out[j] = lam + (h / 6.0) * (l1 + 2.0 * l2 + 2.0 * l3 + l4)
    return out


@njit(cache=True, nogil=True)
def stage_midpoints(X, U, L, tab):
    """Midpoint state and costate taken from the first midpoint RK4 stage.

    State: ``x_j + h/2 F(x_j) u_j`` (forward stage); costate:
    ``lam_{j+1} + h/2 lam_{j+1} A(x_{j+1}, u_j)`` (first backward stage).
    """
    N = U.shape[0]
    h = 1.0 / N
    XS = np.empty((N, X.shape[1]))
    LS = np.empty((N, X.shape[1]))
    for j in range(N):
        u = U[j]
        XS[j] = X[j] + 0.5 * h * _rhs(X[j], u, tab)
        LS[j] = L[j + 1] + 0.5 * h * (L[j + 1] @ _amat(X[j + 1], u, tab))
    return XS, LS


@njit(cache=True, nogil=True)
def simpson_field_pairing(X, XM, L, LM, tab):
    """Cell averages of ``F(x)^T lam^T`` by Simpson's rule; shape (N, k)."""
    N = XM.shape[0]
    k = tab[5]
    out = np.empty((N, k))
    left = fields(X[0], tab).T @ L[0]
    for j in range(N):
        right = fields(X[j + 1], tab).T @ L[j + 1]
        mid = fields(XM[j], tab).T @ LM[j]
        out[j] = (left + 4.0 * mid + right) / 6.0
        left = right
    return out
