"""Slow reference implementations used to check the vectorised code.

Everything here is written with explicit loops over observations and
cutoffs and shares no code with the package beyond plain numpy.
"""
from __future__ import annotations

import math

import numpy as np


def kern(kind, u):
    if abs(u) > 1:
        return 0.0
    return 1.0 - abs(u) if kind == "triangular" else 0.5


def in_window(x, c, h, side):
    if side == "right":
        return c <= x < c + h
    return c - h < x < c


def one_sided(x, y, c, h, rho, kind="triangular", side="right"):
    """Weighted normal equations on the raw ``x - c`` scale.

    Returns (coefficients, scaled Gram inverse G, per-observation e1'G H k / (n h)).
    """
    n = len(x)
    X, W, Y, idx = [], [], [], []
    for i in range(n):
        if in_window(x[i], c, h, side):
            X.append([(x[i] - c) ** p for p in range(rho + 1)])
            W.append(kern(kind, (x[i] - c) / h))
            Y.append(y[i])
            idx.append(i)
    X, W, Y = np.array(X), np.array(W), np.array(Y)
    XtWX = np.zeros((rho + 1, rho + 1))
    XtWY = np.zeros((rho + 1,) + Y.shape[1:])
    for r in range(X.shape[0]):
        XtWX += W[r] * np.outer(X[r], X[r])
        XtWY += W[r] * np.multiply.outer(X[r], Y[r])
    coef = np.linalg.solve(XtWX, XtWY)
    S = np.zeros((rho + 1, rho + 1))
    for r in range(X.shape[0]):
        Hu = np.array([((x[idx[r]] - c) / h) ** p for p in range(rho + 1)])
        S += W[r] * np.outer(Hu, Hu) / (n * h)
    G = np.linalg.inv(S)
    a = np.zeros(n)
    for r in range(X.shape[0]):
        i = idx[r]
        Hu = np.array([((x[i] - c) / h) ** p for p in range(rho + 1)])
        a[i] = W[r] * (G[0] @ Hu) / (n * h)
    return coef, G, a


def jumps(x, y, cs, hs, rho, kind="triangular"):
    """Jump at every cutoff and the signed influence matrix ``a[i, j]``."""
    out, A = [], np.zeros((len(x), len(cs)))
    for j, (c, h) in enumerate(zip(cs, hs)):
        cr, _, ar = one_sided(x, y, c, h, rho, kind, "right")
        cl, _, al = one_sided(x, y, c, h, rho, kind, "left")
        out.append(cr[0] - cl[0])
        A[:, j] = ar - al
    return np.array(out), A


def segment_of(x, cs):
    s = 0
    for c in cs:
        if x >= c:
            s += 1
    return s


def nn_resid(x, y, cs, N=3):
    """Signed matching residuals; ``y`` may be ``(n,)`` or ``(n, q)``."""
    n = len(x)
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    for i in range(n):
        cand = [v for v in range(n) if v != i and segment_of(x[v], cs) == segment_of(x[i], cs)]
        cand.sort(key=lambda v: (abs(x[v] - x[i]), v))
        nb = cand[:N]
        mean = sum(y[v] for v in nb) / N
        out[i] = math.sqrt(N / (N + 1)) * (y[i] - mean)
    return out


def var_sharp(x, y, cs, hs, rho, w, kind="triangular"):
    """Sum over i of eps_i^2 [sum_j w_j/(n h_j) k e1'(v+ G+ - v- G-) H]^2."""
    n = len(x)
    eps = nn_resid(x, y, cs)
    Gp, Gm = [], []
    for c, h in zip(cs, hs):
        Gp.append(one_sided(x, y, c, h, rho, kind, "right")[1])
        Gm.append(one_sided(x, y, c, h, rho, kind, "left")[1])
    total = 0.0
    for i in range(n):
        inner = 0.0
        for j, (c, h) in enumerate(zip(cs, hs)):
            u = (x[i] - c) / h
            H = np.array([u ** p for p in range(rho + 1)])
            vp = 1.0 if in_window(x[i], c, h, "right") else 0.0
            vm = 1.0 if in_window(x[i], c, h, "left") else 0.0
            M = vp * Gp[j] - vm * Gm[j]
            inner += w[j] / (n * h) * kern(kind, u) * (M[0] @ H)
        total += eps[i] ** 2 * inner ** 2
    return total


def var_ec_single(x, y, d_cols, c, h, rho, theta, kind="triangular"):
    """The ``K = 1`` fuzzy variance with vector residuals of ``[Y, W(X, D)]``."""
    n = len(x)
    Y = np.column_stack([y, d_cols])
    E = nn_resid(x, Y, [c])
    Gp = one_sided(x, y, c, h, rho, kind, "right")[1]
    Gm = one_sided(x, y, c, h, rho, kind, "left")[1]
    lam = np.concatenate([[1.0], -np.atleast_1d(theta)])
    total = 0.0
    for i in range(n):
        u = (x[i] - c) / h
        H = np.array([u ** p for p in range(rho + 1)])
        vp = 1.0 if in_window(x[i], c, h, "right") else 0.0
        vm = 1.0 if in_window(x[i], c, h, "left") else 0.0
        g = ((vp * Gp - vm * Gm)[0] @ H) * kern(kind, u) / (n * h)
        total += g * g * (lam @ np.outer(E[i], E[i]) @ lam)
    return total


def local_intercept_weights(points, at, exps, h2, kind="triangular"):
    """``e1'(E' Om E)^{-1} E' Om`` at one point by explicit normal equations."""
    K = len(points)
    rows, om = [], []
    for j in range(K):
        diff = [(points[j][t] - at[t]) / h2 for t in range(len(at))]
        wgt = 1.0
        for v in diff:
            wgt *= kern(kind, v)
        om.append(wgt)
        rows.append([math.prod(diff[t] ** g[t] for t in range(len(at))) for g in exps])
    E = np.array(rows)
    Om = np.diag(om)
    N = E.T @ Om @ E
    sol = np.linalg.solve(N, E.T @ Om)
    return sol[0]


def density_at(x, c, bw, kind="triangular"):
    return sum(kern(kind, (xi - c) / bw) for xi in x) / (len(x) * bw)
