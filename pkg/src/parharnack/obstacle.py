"""Recovering a moving graph from derivative quotients of a function vanishing on it.

If u(x', f(x', t), t) = 0 then D_i u + D_n u D_i f = 0 and D_t u + D_n u D_t f = 0,
so D_i f = -D_i u / D_n u and D_t f = -D_t u / D_n u on the graph.  The demo
samples a manufactured u on a grid, takes centred differences at interior
nodes, locates the zero of u along each x_n column and evaluates the
quotients there.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class PositivityError(ValueError):
    """D_n u is too small to divide by."""


def _lagrange(ys, vals, y):
    """Evaluate the polynomial through (ys[k], vals[k]) at y; arrays have the node axis last."""
    out = np.zeros_like(y)
    m = ys.shape[-1]
    for a in range(m):
        w = np.ones_like(y)
        for b in range(m):
            if b != a:
                w = w * (y - ys[..., b]) / (ys[..., a] - ys[..., b])
        out = out + w * vals[..., a]
    return out


def _first_valid(mask):
    """Index of the first True along the last axis (len if none)."""
    any_ = mask.any(axis=-1)
    return np.where(any_, np.argmax(mask, axis=-1), mask.shape[-1])


@dataclass
class RecoveryResult:
    h: float
    err_grad: float
    err_dt: float
    err_f: float
    err_height: float
    min_dnu: float
    columns: int


def recover(u, f, f_x, f_t, h, window=0.5, t_range=(-0.5, 0.0), floor=1e-3, nodes=4):
    """Recover D_1 f, D_t f and f from u sampled on a grid with spacing h (tau = h), n = 2.

    ``u(x1, x2, t)`` is vectorized; ``f``, ``f_x``, ``f_t`` give the truth for
    error measurement only.  Columns with |x1| <= window and levels in
    t_range are used.
    """
    pad = 4 * h
    x1 = np.arange(-window - pad, window + pad + h / 2, h)
    x2 = np.arange(-0.5, 0.5 + h / 2, h)
    nt = int(round((t_range[1] - t_range[0]) / h))
    t = t_range[0] + h * np.arange(-1, nt + 2)
    T, X1, X2 = np.meshgrid(t, x1, x2, indexing="ij")
    U = np.asarray(u(X1, X2, T), dtype=float)
    # only points inside the domain are used; the graph itself is unknown to the method
    inside = U > 0
    U = np.where(inside, U, np.nan)
    D1 = np.full_like(U, np.nan)
    D2 = np.full_like(U, np.nan)
    Dt = np.full_like(U, np.nan)
    D1[:, 1:-1, :] = (U[:, 2:, :] - U[:, :-2, :]) / (2 * h)
    D2[:, :, 1:-1] = (U[:, :, 2:] - U[:, :, :-2]) / (2 * h)
    Dt[1:-1] = (U[2:] - U[:-2]) / (2 * h)
    sl = (slice(1, -1), slice(4, -4))
    U, D1, D2, Dt = U[sl], D1[sl], D2[sl], Dt[sl]
    tt, xx = t[1:-1], x1[4:-4]
    ok_all = ~(np.isnan(D1) | np.isnan(D2) | np.isnan(Dt))
    iu = _first_valid(~np.isnan(U))
    idv = _first_valid(ok_all)
    m = x2.size
    if np.any(iu + nodes > m) or np.any(idv + nodes > m):
        raise ValueError("columns without enough interior nodes")
    take = np.arange(nodes)

    def gather(A, start):
        ix = start[..., None] + take
        return np.take_along_axis(A, ix, axis=-1), x2[ix]

    Uv, Uy = gather(U, iu)
    # zero of the interpolant below the first interior node: Newton from the linear guess
    y = Uy[..., 0] - Uv[..., 0] * (Uy[..., 1] - Uy[..., 0]) / (Uv[..., 1] - Uv[..., 0])
    for _ in range(30):
        val = _lagrange(Uy, Uv, y)
        eps = 1e-7
        der = (_lagrange(Uy, Uv, y + eps) - _lagrange(Uy, Uv, y - eps)) / (2 * eps)
        y = y - val / der
    vals = {}
    for name, A in (("d1", D1), ("d2", D2), ("dt", Dt)):
        Av, Ay = gather(A, idv)
        vals[name] = _lagrange(Ay, Av, y)
    dn = vals["d2"]
    if np.min(dn) < floor:
        raise PositivityError(f"D_n u = {np.min(dn):.3g} below the floor {floor}")
    g1 = -vals["d1"] / dn
    gt = -vals["dt"] / dn
    TT, XX = np.meshgrid(tt, xx, indexing="ij")
    err_grad = float(np.max(np.abs(g1 - f_x(XX, TT))))
    err_dt = float(np.max(np.abs(gt - f_t(XX, TT))))
    err_height = float(np.max(np.abs(y - f(XX, TT))))
    # f from the recovered slope, anchored at the column through x1 = 0
    i0 = int(np.argmin(np.abs(xx)))
    cum = np.concatenate([np.zeros((len(tt), 1)), np.cumsum(0.5 * h * (g1[:, 1:] + g1[:, :-1]), axis=1)], axis=1)
    frec = y[:, i0:i0 + 1] + cum - cum[:, i0:i0 + 1]
    err_f = float(np.max(np.abs(frec - f(XX, TT))))
    return RecoveryResult(h, err_grad, err_dt, err_f, err_height, float(np.min(dn)), int(y.size))


def sine_problem(amplitude=0.05, tilt=0.1):
    """u = (x_2 - f)(1 + tilt x_1) with f = amplitude sin(x_1 + t)."""
    def f(x1, t):
        return amplitude * np.sin(x1 + t)

    def fx(x1, t):
        return amplitude * np.cos(x1 + t)

    def u(x1, x2, t):
        return (x2 - f(x1, t)) * (1 + tilt * x1)
    return u, f, fx, fx


def obstacle_demo(hs=(2.0 ** -5, 2.0 ** -6, 2.0 ** -7), amplitude=0.05, tilt=0.1, window=0.5):
    """Errors per grid and observed orders between successive refinements."""
    u, f, fx, ft = sine_problem(amplitude, tilt)
    rows = [recover(u, f, fx, ft, h, window) for h in hs]
    orders = {}
    for key in ("err_grad", "err_dt", "err_f"):
        e = [getattr(r, key) for r in rows]
        orders[key] = [float(np.log(a / b) / np.log(h0 / h1)) if b > 0 and a > 0 else float("inf")
                       for a, b, h0, h1 in zip(e, e[1:], hs, hs[1:])]
    consts = {key: max(getattr(r, key) / r.h ** 2 for r in rows) for key in ("err_grad", "err_dt", "err_f")}
    return rows, orders, consts
