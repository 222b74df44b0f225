"""Finite-difference solvers for w_t = Tr(A D^2 w) + b.Dw + c w + F on moving graph domains.

Second derivatives use Shortley-Weller arms: an arm cut by the boundary is
shortened to theta*h and the Dirichlet value at the crossing is used in
place of the missing neighbour.  Time stepping is Crank-Nicolson or backward
Euler.  A node that enters the domain between two levels takes one backward
Euler step, starting from a value extrapolated quadratically along x_n from
the boundary crossing and the two nodes above it.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .domain import EmptySliceError, GraphDomain
from .field import BoundaryEdges, Grid, GridField


class GridResolutionError(ValueError):
    """The grid does not resolve the curvature of the graph."""


class EllipticityError(ValueError):
    pass


class SolverError(RuntimeError):
    """An implicit step did not solve to tolerance."""


class MaxPrincipleError(RuntimeError):
    pass


class MaxPrincipleWarning(RuntimeWarning):
    pass


class CompatibilityWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class VCFields:
    """Coefficients of L w = Tr(A D^2 w) + b.Dw + c w - w_t and the right side g of L w = g.

    Callables take node coordinates X of shape (N, n) and a time t.  A returns
    (N, n, n), b returns (N, n), c and g return (N,).  None means identity for
    A and zero otherwise.
    """

    A: Callable | None = None
    b: Callable | None = None
    c: Callable | None = None
    g: Callable | None = None
    lam: float = 1e-3
    Lam: float = 1e3


def _zero_bc(X, t):
    return np.zeros(X.shape[0])


def _bisect(domain, p, direction, t, iters=60):
    """Fraction s in (0, 1] with level(p + s*direction) = 0, for level(p) > 0 >= level(p + direction)."""
    lo = np.zeros(p.shape[0])
    hi = np.ones(p.shape[0])
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        inside = domain.level(p + mid[:, None] * direction, t) > 0
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return hi


class _Level:
    """Discrete operator at one time level restricted to the active nodes."""

    def __init__(self, act, L, rhs_b, edges, cross_dropped, gvals):
        self.act = act              # flat indices of active nodes
        self.L = L                  # csr (Na, Na)
        self.rhs_b = rhs_b          # boundary contributions, (Na,)
        self.edges = edges
        self.cross_dropped = cross_dropped
        self.gvals = gvals          # Dirichlet values used at crossings


class _Marcher:
    def __init__(self, domain: GraphDomain, grid: Grid, coef, forcing, boundary, t_end=None):
        self.domain = domain
        self.grid = grid
        self.h = grid.h
        self.axes = grid.axes(domain)
        self.shape = tuple(len(a) for a in self.axes)
        self.n = len(self.shape)
        self.X = np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1).reshape(-1, self.n)
        self.I = np.indices(self.shape).reshape(self.n, -1)
        self.strides = [int(np.prod(self.shape[a + 1:])) for a in range(self.n)]
        self.times = grid.levels(domain, t_end)
        self.coef = coef
        self.forcing = forcing
        self.boundary = boundary or _zero_bc

    def coefficients(self, Xa, t):
        """(A diagonal list, A01 or None, b list or None, c or None)."""
        return self.coef(Xa, t)

    def assemble(self, t) -> _Level:
        d, h, n = self.domain, self.h, self.n
        phi = d.level(self.X, t)
        mask = phi > 0
        act = np.flatnonzero(mask)
        if act.size == 0:
            raise EmptySliceError(f"no active nodes at t={t}")
        Na = act.size
        pos = np.full(mask.size, -1)
        pos[act] = np.arange(Na)
        Xa = self.X[act]
        Adiag, A01, b, c = self.coefficients(Xa, t)

        rows, cols, vals = [], [], []
        diag = np.zeros(Na)
        rhs_b = np.zeros(Na)
        e_node, e_axis, e_sign, e_theta, gvals = [], [], [], [], []
        nbr = {}
        for a in range(n):
            arms, nb_idx, gb = {}, {}, {}
            for s in (-1, 1):
                ia = self.I[a, act] + s
                inb = (ia >= 0) & (ia < self.shape[a])
                nb = np.where(inb, act + s * self.strides[a], 0)
                ok = inb & mask[nb]
                theta = np.ones(Na)
                g = np.zeros(Na)
                cut = np.flatnonzero(~ok)
                if cut.size:
                    direction = np.zeros(n)
                    direction[a] = s * h
                    th = _bisect(d, Xa[cut], direction, t)
                    theta[cut] = th
                    xb = Xa[cut] + th[:, None] * direction
                    g[cut] = self.boundary(xb, t)
                    e_node.append(act[cut])
                    e_axis.append(np.full(cut.size, a))
                    e_sign.append(np.full(cut.size, s))
                    e_theta.append(th)
                    gvals.append(g[cut])
                arms[s] = theta * h
                nb_idx[s] = np.where(ok, pos[nb], -1)
                gb[s] = g
            nbr[a] = nb_idx
            hm, hp = arms[-1], arms[1]
            wp = 2.0 / (hp * (hm + hp))
            wm = 2.0 / (hm * (hm + hp))
            cp = Adiag[a] * wp
            cm = Adiag[a] * wm
            diag -= cp + cm
            if b is not None and np.any(b[a] != 0):
                fp = hm / (hp * (hm + hp))
                fm = -hp / (hm * (hm + hp))
                f0 = (hp - hm) / (hm * hp)
                cp = cp + b[a] * fp
                cm = cm + b[a] * fm
                diag += b[a] * f0
            for s, cs in ((1, cp), (-1, cm)):
                j = nb_idx[s]
                inn = j >= 0
                rows.append(np.flatnonzero(inn))
                cols.append(j[inn])
                vals.append(cs[inn])
                rhs_b[~inn] += cs[~inn] * gb[s][~inn]
        if c is not None and np.any(c != 0):
            diag += c
        cross_dropped = 0
        if A01 is not None and np.any(A01 != 0):
            cross_dropped = self._cross(act, mask, pos, A01, rows, cols, vals, diag)
        rows.append(np.arange(Na))
        cols.append(np.arange(Na))
        vals.append(diag)
        L = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(Na, Na))
        L.eliminate_zeros()
        L.sort_indices()
        if e_node:
            edges = BoundaryEdges(np.concatenate(e_node), np.concatenate(e_axis),
                                  np.concatenate(e_sign), np.concatenate(e_theta))
            gv = np.concatenate(gvals)
        else:
            edges = BoundaryEdges(*(np.zeros(0, dtype=int),) * 3, np.zeros(0))
            gv = np.zeros(0)
        return _Level(act, L, rhs_b, edges, cross_dropped, gv)

    def _cross(self, act, mask, pos, A01, rows, cols, vals, diag):
        """2 A01 u_12 with the centred 4-point stencil, or the one-sided quadrant stencils that fit."""
        h = self.h
        s0, s1 = self.strides
        i0, i1 = self.I[0, act], self.I[1, act]
        N0, N1 = self.shape

        def nb(d0, d1):
            j0, j1 = i0 + d0, i1 + d1
            inb = (j0 >= 0) & (j0 < N0) & (j1 >= 0) & (j1 < N1)
            k = np.where(inb, act + d0 * s0 + d1 * s1, 0)
            return np.where(inb & mask[k], pos[k], -1)

        D = {(d0, d1): nb(d0, d1) for d0 in (-1, 0, 1) for d1 in (-1, 0, 1) if (d0, d1) != (0, 0)}
        Na = act.size
        coef = 2 * A01
        centred = (D[1, 1] >= 0) & (D[1, -1] >= 0) & (D[-1, 1] >= 0) & (D[-1, -1] >= 0)
        done = centred.copy()
        r = np.flatnonzero(centred)
        for (d0, d1), sgn in (((1, 1), 1), ((-1, -1), 1), ((1, -1), -1), ((-1, 1), -1)):
            rows.append(r)
            cols.append(D[d0, d1][r])
            vals.append(sgn * coef[r] / (4 * h * h))
        # one quadrant: (u(s,s') - u(s,0) - u(0,s') + u0) / (s s' h^2)
        for q0, q1 in ((1, 1), (-1, -1), (1, -1), (-1, 1)):
            okq = (~done) & (D[q0, q1] >= 0) & (D[q0, 0] >= 0) & (D[0, q1] >= 0)
            r = np.flatnonzero(okq)
            w = coef[r] * (q0 * q1) / (h * h)
            rows += [r, r, r]
            cols += [D[q0, q1][r], D[q0, 0][r], D[0, q1][r]]
            vals += [w, -w, -w]
            diag[r] += w
            done |= okq
        return int(np.sum(~done & (coef != 0)))

    def extrapolate_new(self, new_flat, prev_vals_full, t_prev, t_new):
        """Starting values for nodes that become active: quadratic in x_n through the crossing."""
        d, h, n = self.domain, self.h, self.n
        out = self.boundary(self.X[new_flat], t_new).astype(float)
        sn = self.strides[n - 1]
        i_n = self.I[n - 1, new_flat]
        ok = i_n + 2 < self.shape[n - 1]
        up1 = np.where(ok, new_flat + sn, 0)
        up2 = np.where(ok, new_flat + 2 * sn, 0)
        u1 = prev_vals_full[up1]
        u2 = prev_vals_full[up2]
        ok &= ~np.isnan(u1) & ~np.isnan(u2)
        k = np.flatnonzero(ok)
        if k.size:
            p1 = self.X[up1[k]]
            direction = np.zeros(n)
            direction[n - 1] = -h
            s = _bisect(d, p1, direction, t_prev)
            yb = p1[:, -1] - s * h
            gb = self.boundary(p1 + s[:, None] * direction, t_prev)
            y0 = self.X[new_flat[k], -1]
            y1, y2 = p1[:, -1], p1[:, -1] + h
            l_b = (y0 - y1) * (y0 - y2) / ((yb - y1) * (yb - y2))
            l_1 = (y0 - yb) * (y0 - y2) / ((y1 - yb) * (y1 - y2))
            l_2 = (y0 - yb) * (y0 - y1) / ((y2 - yb) * (y2 - y1))
            out[k] = l_b * gb + l_1 * u1[k] + l_2 * u2[k]
        return out

    def run(self, initial, check_max_principle=False, strict_max_principle=False):
        theta_cn = 0.5 if self.grid.scheme == "cn" else 1.0
        nt = len(self.times)
        vals = np.full((nt, self.X.shape[0]), np.nan)
        lev = self.assemble(self.times[0])
        U = np.asarray(initial(self.X[lev.act]), dtype=float).reshape(-1)
        if lev.edges.node.size:
            xb = self.X[lev.edges.node] + (lev.edges.theta * lev.edges.sign * self.h)[:, None] * \
                np.eye(self.n)[lev.edges.axis]
            mismatch = np.abs(np.asarray(initial(xb), dtype=float) - lev.gvals)
            scale = max(1.0, float(np.max(np.abs(U), initial=0.0)))
            if np.max(mismatch, initial=0.0) > 1e-8 * scale:
                warnings.warn(f"initial data does not match boundary data (max gap {np.max(mismatch):.3g})",
                              CompatibilityWarning, stacklevel=3)
        vals[0, lev.act] = U
        lo = min(float(np.min(U, initial=np.inf)), float(np.min(lev.gvals, initial=np.inf)))
        hi = max(float(np.max(U, initial=-np.inf)), float(np.max(lev.gvals, initial=-np.inf)))
        F = self.forcing(self.X[lev.act], self.times[0]) if self.forcing else None
        edges = [lev.edges]
        cache = {"M": None, "lu": None}
        reuses = 0
        cross_dropped = lev.cross_dropped
        for j in range(nt - 1):
            t0, t1 = self.times[j], self.times[j + 1]
            tau = t1 - t0
            new = self.assemble(t1)
            edges.append(new.edges)
            cross_dropped = max(cross_dropped, new.cross_dropped)
            lo = min(lo, float(np.min(new.gvals, initial=np.inf)))
            hi = max(hi, float(np.max(new.gvals, initial=-np.inf)))
            # explicit half on the old active set
            E = U.copy()
            if theta_cn < 1.0:
                ex = lev.L @ U + lev.rhs_b
                if F is not None:
                    ex = ex + F
                E = U + (1 - theta_cn) * tau * ex
            full = np.full(self.X.shape[0], np.nan)
            full[lev.act] = E
            rhs = full[new.act]
            th = np.full(new.act.size, theta_cn)
            fresh = np.isnan(rhs)
            if np.any(fresh):
                prev_full = vals[j]
                ext = self.extrapolate_new(new.act[fresh], prev_full, t0, t1)
                rhs[fresh] = ext
                th[fresh] = 1.0
                lo = min(lo, float(np.min(ext)))
                hi = max(hi, float(np.max(ext)))
            F1 = self.forcing(self.X[new.act], t1) if self.forcing else None
            drive = new.rhs_b if F1 is None else new.rhs_b + F1
            rhs = rhs + th * tau * drive
            M = (sp.identity(new.act.size, format="csr") - sp.diags(th * tau) @ new.L).tocsc()
            M.eliminate_zeros()
            M.sort_indices()
            old = cache["M"]
            if old is not None and old.shape == M.shape and (old != M).nnz == 0:
                lu = cache["lu"]
                reuses += 1
            else:
                lu = splu(M)
                cache["M"], cache["lu"] = M, lu
            U = lu.solve(rhs)
            res = np.max(np.abs(M @ U - rhs), initial=0.0)
            tol = 1e-8 * (np.max(np.abs(rhs), initial=0.0) + abs(M).max() * np.max(np.abs(U), initial=0.0) + 1e-300)
            if not np.all(np.isfinite(U)) or res > tol:
                raise SolverError(f"implicit step at t={t1} failed: residual {res:.3g}")
            vals[j + 1, new.act] = U
            lev, F = new, F1
        out = vals.reshape((nt,) + self.shape)
        info = {"lu_reuses": reuses, "cross_dropped": cross_dropped}
        if check_max_principle:
            vmin, vmax = float(np.nanmin(out)), float(np.nanmax(out))
            lo_c, hi_c = min(lo, 0.0), max(hi, 0.0)
            tol = 1e-10 * max(1.0, abs(lo_c), abs(hi_c))
            holds = vmin >= lo_c - tol and vmax <= hi_c + tol
            info["max_principle"] = {"data_min": lo_c, "data_max": hi_c, "min": vmin, "max": vmax,
                                     "holds": bool(holds)}
            if not holds:
                msg = (f"discrete maximum principle violated: values in [{vmin:.6g}, {vmax:.6g}], "
                       f"data in [{lo_c:.6g}, {hi_c:.6g}]")
                if strict_max_principle:
                    raise MaxPrincipleError(msg)
                warnings.warn(msg, MaxPrincipleWarning, stacklevel=3)
        return out, tuple(edges), info


def _check_resolution(domain, grid, fraction):
    kappa = domain.curvature_bound()
    if kappa * grid.h > fraction:
        raise GridResolutionError(
            f"h = {grid.h:g} does not resolve the graph: h * max|f''| = {kappa * grid.h:.3g} > {fraction}")


def _solve(domain, grid, coef, forcing, initial, boundary, t_end, check_resolution, curvature_fraction,
           check_mp, kind):
    grid = grid if grid is not None else Grid(2.0 ** -6)
    if check_resolution:
        _check_resolution(domain, grid, curvature_fraction)
    initial = initial if initial is not None else (lambda X: np.zeros(X.shape[0]))
    m = _Marcher(domain, grid, coef, forcing, boundary, t_end)
    vals, edges, info = m.run(initial, check_max_principle=check_mp,
                              strict_max_principle=(grid.scheme == "be"))
    meta = {"solver": kind, "scheme": grid.scheme, **info}
    return GridField(domain, grid.h, grid.tau, m.times, m.axes, vals, edges, grid.scheme, meta)


def _identity_coef(n):
    def coef(Xa, t):
        ones = np.ones(Xa.shape[0])
        return [ones] * n, None, None, None
    return coef


def solve_heat(domain: GraphDomain, initial=None, source=None, grid: Grid | None = None, boundary=None,
               t_end=None, check_resolution=True, curvature_fraction=0.5) -> GridField:
    """Solve w_t = Delta w + source with Dirichlet data ``boundary`` (zero by default).

    ``initial(X)`` gives the data at the cylinder bottom; ``source(X, t)`` and
    ``boundary(X, t)`` take node or crossing coordinates of shape (N, n).
    Without a source the discrete maximum principle is checked: a violation
    raises for backward Euler and warns for Crank-Nicolson, which is not
    monotone at tau = h.
    """
    return _solve(domain, grid, _identity_coef(domain.n), source, initial, boundary, t_end,
                  check_resolution, curvature_fraction, source is None, "heat")


def solve_vc(domain: GraphDomain, fields: VCFields, initial=None, grid: Grid | None = None, boundary=None,
             t_end=None, check_resolution=True, curvature_fraction=0.5) -> GridField:
    """Solve L w = g, i.e. w_t = Tr(A D^2 w) + b.Dw + c w - g.

    With A = I, b = c = 0 this runs the same arithmetic as ``solve_heat``
    with source -g, so the two outputs agree bit for bit.
    """
    n = domain.n
    fields = fields or VCFields()

    def coef(Xa, t):
        if fields.A is None:
            Adiag, A01 = [np.ones(Xa.shape[0])] * n, None
        else:
            A = np.asarray(fields.A(Xa, t), dtype=float).reshape(Xa.shape[0], n, n)
            _check_elliptic(A, fields.lam, fields.Lam, t)
            Adiag = [A[:, a, a] for a in range(n)]
            A01 = A[:, 0, 1] if n == 2 else None
        b = None
        if fields.b is not None:
            bb = np.asarray(fields.b(Xa, t), dtype=float).reshape(Xa.shape[0], n)
            b = [bb[:, a] for a in range(n)]
        c = None if fields.c is None else np.broadcast_to(np.asarray(fields.c(Xa, t), dtype=float), (Xa.shape[0],))
        return Adiag, A01, b, c

    forcing = None
    if fields.g is not None:
        def forcing(X, t):
            return -np.asarray(fields.g(X, t), dtype=float)
    c_nonpos = True
    if fields.c is not None:
        X = np.stack(np.meshgrid(*grid.axes(domain), indexing="ij"), axis=-1).reshape(-1, n) if grid else None
        if X is not None:
            c_nonpos = bool(np.all(np.asarray(fields.c(X, domain.t_start)) <= 0))
    check_mp = fields.g is None and c_nonpos and fields.b is None
    return _solve(domain, grid, coef, forcing, initial, boundary, t_end, check_resolution,
                  curvature_fraction, check_mp, "vc")


def _check_elliptic(A, lam, Lam, t):
    if not np.allclose(A, np.swapaxes(A, 1, 2)):
        raise EllipticityError(f"A is not symmetric at t={t}")
    ev = np.linalg.eigvalsh(A)
    if np.min(ev) < lam or np.max(ev) > Lam:
        raise EllipticityError(
            f"ellipticity bounds [{lam}, {Lam}] violated at t={t}: eigenvalues in [{np.min(ev):.3g}, {np.max(ev):.3g}]")


def normal_derivative(field: GridField, at, t=None) -> float:
    """Inward normal derivative at a graph point (x', f(x', t)).

    A quadratic in x_n through the boundary value 0 and the two nodes above
    gives D_n u, and u_nu = D_n u * sqrt(1 + |grad f|^2), using that u
    vanishes along the graph.  Values are interpolated linearly in x'
    between grid columns.
    """
    d = field.domain
    at = np.asarray(at, dtype=float).reshape(-1)
    if at.size == d.n - 1 or (d.n == 1 and at.size == 0):
        xp = at[: d.n - 1]
    elif at.size == d.n:
        xp = at[: d.n - 1]
    else:
        raise ValueError("point must be given as x' or as (x', x_n)")
    if t is None:
        t = field.times[-1]
    j = field.level_index(t)
    t = field.times[j]
    h = field.h
    xn_axis = field.axes[-1]
    vals = field.values[j]

    def column_dn(col_vals, yb):
        i1 = int(np.searchsorted(xn_axis, yb, side="right"))
        if i1 + 1 >= len(xn_axis) or np.isnan(col_vals[i1]) or np.isnan(col_vals[i1 + 1]):
            raise ValueError(f"insufficient interior stencil room above x_n = {yb:.6g}")
        y1, y2 = xn_axis[i1], xn_axis[i1 + 1]
        u1, u2 = col_vals[i1], col_vals[i1 + 1]
        # derivative at yb of the quadratic through (yb, 0), (y1, u1), (y2, u2)
        d1, d2 = y1 - yb, y2 - yb
        return (u1 * d2 ** 2 - u2 * d1 ** 2) / (d1 * d2 * (d2 - d1))

    if d.n == 1:
        yb = float(d.height(np.zeros(0), t)) if d.f is not None else xn_axis[0] - h
        if d.f is None:
            raise ValueError("normal derivative needs a graph boundary")
        return float(column_dn(vals, yb))
    x1 = xp[0]
    ax = field.axes[0]
    i = int(np.clip(np.searchsorted(ax, x1) - 1, 0, len(ax) - 2))
    w = (x1 - ax[i]) / h
    out = 0.0
    for ii, wt in ((i, 1 - w), (i + 1, w)):
        if wt == 0:
            continue
        yb = float(d.height(np.array([ax[ii]]), t))
        out += wt * column_dn(vals[ii], yb)
    g = d.grad_f(xp, t)
    return float(out * np.sqrt(1 + np.sum(g ** 2)))
