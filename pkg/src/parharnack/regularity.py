"""Quotient regularity: v/u fields, parabolic polynomial fits, decay exponents and
the improvement-of-flatness iteration run on grid data."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import stats

from .approx import SourceMap, UModel, build_source_map, solve_approximating
from .heatlab.field import GridField
from .parpoly import ParIndex, ParPoly, indices_up_to, multiply, rescale, to_records

EPS = np.finfo(float).eps


class HopfError(ValueError):
    """u is not positive where the quotient is formed."""


class InsufficientNodesError(ValueError):
    pass


class RankDeficiencyError(ValueError):
    pass


class HypothesisError(ValueError):
    """The starting approximation is not good enough at r0."""

    def __init__(self, msg, scale):
        super().__init__(msg)
        self.scale = scale


def _same_grid(u: GridField, v: GridField):
    if u.values.shape != v.values.shape or not np.allclose(u.times, v.times) or \
            any(not np.allclose(a, b) for a, b in zip(u.axes, v.axes)):
        raise ValueError("fields live on different grids")


def boundary_distance(field: GridField):
    """Distance of every node to the lateral boundary (graph and cylinder wall), per level."""
    d = field.domain
    X = field.coords()
    out = np.empty(field.values.shape)
    for j, t in enumerate(field.times):
        wall = d.wall_level(X)
        if d.f is not None:
            g = d.grad_f(X[..., :-1], t)
            graph = d.graph_level(X, t) / np.sqrt(1 + np.sum(g ** 2, axis=-1))
            out[j] = np.minimum(wall, graph)
        else:
            out[j] = wall
    return out


def quotient_field(u: GridField, v: GridField, margin: float = 2.0, walls: bool = True) -> GridField:
    """v/u at active nodes at least margin*h away from the lateral boundary."""
    _same_grid(u, v)
    dist = boundary_distance(u) if walls else _graph_distance(u)
    ok = u.active() & v.active() & (dist >= margin * u.h - 1e-12 * u.h)
    uu = u.values[ok]
    if np.any(uu <= 0):
        bad = np.flatnonzero(uu <= 0).size
        raise HopfError(f"u <= 0 at {bad} nodes at least {margin}h from the boundary")
    q = np.full(u.values.shape, np.nan)
    q[ok] = v.values[ok] / uu
    return u.with_values(q, quotient_margin=margin)


def _graph_distance(field):
    d = field.domain
    X = field.coords()
    out = np.full(field.values.shape, np.inf)
    if d.f is None:
        return out
    for j, t in enumerate(field.times):
        g = d.grad_f(X[..., :-1], t)
        out[j] = d.graph_level(X, t) / np.sqrt(1 + np.sum(g ** 2, axis=-1))
    return out


def cylinder_samples(field: GridField, center, r):
    """Active nodes of Q_r(center): |x - x0| < r, t0 - r^2 < t <= t0."""
    x0, t0 = center
    x0 = np.asarray(x0, dtype=float)
    X = field.coords()
    in_ball = np.linalg.norm(X - x0, axis=-1) < r
    xs, ts, vs = [], [], []
    for j, t in enumerate(field.times):
        if not (t0 - r * r < t <= t0 + 1e-12):
            continue
        ok = in_ball & ~np.isnan(field.values[j])
        xs.append(X[ok])
        ts.append(np.full(int(ok.sum()), t))
        vs.append(field.values[j][ok])
    if not xs:
        return np.zeros((0, field.n)), np.zeros(0), np.zeros(0)
    return np.concatenate(xs), np.concatenate(ts), np.concatenate(vs)


def fit_samples(X, T, V, center, k, r, min_factor=3):
    """Least-squares parabolic polynomial of weighted degree <= k in (x - x0, t - t0).

    Columns are monomials of ((x - x0)/r, (t - t0)/r^2), i.e. scaled by r^wdeg.
    Returns (P with float coefficients, sup defect).
    """
    x0, t0 = center
    n = X.shape[1]
    idx = indices_up_to(n, k)
    if V.size < min_factor * len(idx):
        raise InsufficientNodesError(f"{V.size} nodes in Q_{r:g}, need {min_factor * len(idx)} for k={k}")
    Y = (X - np.asarray(x0, dtype=float)) / r
    S = (T - t0) / (r * r)
    cols = []
    for i in idx:
        c = S ** i.ell
        for a, e in enumerate(i.m):
            if e:
                c = c * Y[:, a] ** e
        cols.append(c)
    M = np.stack(cols, axis=1)
    coef, _, rank, sv = np.linalg.lstsq(M, V, rcond=None)
    if rank < len(idx):
        raise RankDeficiencyError(f"design matrix rank {rank} < {len(idx)} monomials in Q_{r:g}")
    resid = V - M @ coef
    P = ParPoly(n, {i: float(c) / r ** i.wdeg for i, c in zip(idx, coef)})
    return P, float(np.max(np.abs(resid), initial=0.0))


def fit_parpoly(field: GridField, center, k: int, r: float):
    """Best least-squares P of weighted degree <= k on Q_r(center) and its sup defect.

    P is expressed in the shifted variables (x - x0, t - t0).
    """
    if r < 4 * field.h - 1e-12:
        raise ValueError(f"radius {r} below the resolution floor 4h = {4 * field.h}")
    X, T, V = cylinder_samples(field, center, r)
    return fit_samples(X, T, V, center, k, r)


@dataclass
class HolderReport:
    center: tuple
    k: int
    radii: list
    residuals: list
    polys: list
    exponent: float
    exponent_stderr: float
    capped: bool = False
    cap: float | None = None
    floored: list = field(default_factory=list)
    scale: float = 0.0

    def to_dict(self):
        return {
            "center": [list(map(float, self.center[0])), float(self.center[1])],
            "k": self.k, "radii": [float(r) for r in self.radii],
            "residuals": [float(r) for r in self.residuals],
            "floored": [bool(b) for b in self.floored],
            "exponent": float(self.exponent), "exponent_stderr": float(self.exponent_stderr),
            "capped": self.capped, "cap": None if self.cap is None else float(self.cap),
            "polys": [to_records(P) for P in self.polys],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r", "defect", "floored"])
            for r, d, f in zip(self.radii, self.residuals, self.floored):
                w.writerow([repr(float(r)), repr(float(d)), int(f)])


def default_radii(field: GridField, r_max=None, count=6, factor=2 ** -0.5):
    """Geometric radii from r_max down, kept above 4h and sqrt(2 tau) (three time levels)."""
    r_max = field.domain.radius / 2 if r_max is None else r_max
    floor = max(4 * field.h, np.sqrt(2 * field.tau) * (1 + 1e-9))
    out = []
    r = r_max
    while r >= floor and len(out) < count:
        out.append(r)
        r *= factor
    return out


def holder_exponent(field: GridField, center, k: int, radii=None, floor_factor=10.0) -> HolderReport:
    """Slope of log(defect) against log(r) for best degree-k fits on shrinking cylinders.

    Radii whose defect is at most floor_factor * eps * (field scale) count as
    floored and are left out of the regression.  If any radius is floored the
    report is marked capped: the exponent is then a lower bound, equal to the
    slope over the resolved radii, or k + 1 when fewer than three remain.
    """
    radii = sorted(default_radii(field) if radii is None else list(radii), reverse=True)
    if len(radii) < 3:
        raise ValueError("need at least 3 radii")
    if any(np.diff(radii) >= 0):
        raise ValueError("radii must be distinct")
    if radii[-1] < 4 * field.h - 1e-12:
        raise ValueError(f"radius {radii[-1]} below the resolution floor 4h = {4 * field.h}")
    defects, polys, scales = [], [], []
    for r in radii:
        X, T, V = cylinder_samples(field, center, r)
        P, dfc = fit_samples(X, T, V, center, k, r)
        defects.append(dfc)
        polys.append(P)
        scales.append(float(np.max(np.abs(V), initial=0.0)))
    scale = max(scales)
    floored = [d <= floor_factor * EPS * max(scale, 1e-300) for d in defects]
    use = [i for i, f in enumerate(floored) if not f]
    capped = any(floored)
    if len(use) >= 3:
        lr = stats.linregress(np.log([radii[i] for i in use]), np.log([defects[i] for i in use]))
        exponent, stderr = float(lr.slope), float(lr.stderr)
    else:
        exponent, stderr = float(k + 1), 0.0
    return HolderReport(center, k, radii, defects, polys, exponent, stderr, capped,
                        exponent if capped else None, floored, scale)


# -- improvement of flatness

@dataclass
class IterationStep:
    r: float
    P: ParPoly
    residual: float


@dataclass
class IterationTrace:
    steps: list
    rho: float
    alpha: float
    k: int
    truncated: bool = False
    floor: float = 0.0
    scale: float = 1.0

    def resolved(self):
        return [s for s in self.steps if s.residual > self.floor]

    def ratios(self):
        """residual_{i+1} / residual_i for every step i whose residual is above the floor."""
        out = []
        for a, b in zip(self.steps, self.steps[1:]):
            if a.residual > self.floor:
                out.append(b.residual / a.residual)
        return out

    def decay_exponent(self):
        """Slope of log residual against log r over resolved steps after the first.

        The first step carries the starting polynomial rather than a fitted
        one, so it is left out.  None if fewer than two steps remain.
        """
        st = [s for s in self.steps[1:] if s.residual > self.floor]
        if len(st) < 2:
            return None
        return float(stats.linregress(np.log([s.r for s in st]), np.log([s.residual for s in st])).slope)

    def limit(self):
        """Final polynomial divided by the pre-scaling factor of v."""
        return self.steps[-1].P.scale(1.0 / self.scale)

    def to_dict(self):
        return {"rho": self.rho, "alpha": self.alpha, "k": self.k, "truncated": self.truncated,
                "floor": self.floor, "scale": self.scale,
                "steps": [{"r": s.r, "residual": s.residual, "P": to_records(s.P)} for s in self.steps]}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def _residual(u_s, v_s, X, T, P, center):
    x0, t0 = center
    return float(np.max(np.abs(v_s - u_s * P.eval_float(X - np.asarray(x0), T - t0)), initial=0.0))


def ds_iteration(u: GridField, v: GridField, k: int, alpha: float, rho: float = 0.5, r0: float = 0.5,
                 u_model: UModel | None = None, steps: int = 8, center=None, P0: ParPoly | None = None,
                 source: SourceMap | None = None, margin: float = 2.0, v_scale: float = 1.0,
                 floor_factor: float = 100.0) -> IterationTrace:
    """Run P_{i+1} = P_i + r_i^{k+alpha} Q(x/r_i, t/r_i^2) on grid data.

    At each radius the quotient (v/u - P_i)/r_i^{k+alpha} is fitted in rescaled
    variables, the free (m_n = 0) coefficients of the fit are kept and the rest
    are recomputed so that Q is approximating for the rescaled u.  ``v_scale``
    multiplies v (and P0, which refers to the unscaled v) first, so that
    ||v - u P0|| <= r0^{k+1+alpha} on Q_{r0}; ``"auto"`` picks the largest
    such factor.
    Residuals at or below ``floor_factor * eps * scale`` count as floored.
    """
    _same_grid(u, v)
    n = u.n
    d = u.domain
    center = ((0.0,) * n, d.t0) if center is None else center
    u_model = u_model if u_model is not None else UModel.flat(n)
    source = source if source is not None else build_source_map(u_model, k)
    P = P0 if P0 is not None else ParPoly.zero(n)
    if v_scale == "auto":
        XU, TU, U = cylinder_samples(u, center, r0)
        _, _, Vv = cylinder_samples(v, center, r0)
        gap = _residual(U, Vv, XU, TU, P, center)
        v_scale = 1.0 if gap == 0 else r0 ** (k + 1 + alpha) / gap
    # P0 approximates the unscaled v / u
    P = P.scale(v_scale)
    vs = v.with_values(v.values * v_scale)
    q = quotient_field(u, vs, margin)
    XU, TU, U = cylinder_samples(u, center, r0)
    _, _, Vv = cylinder_samples(vs, center, r0)
    res0 = _residual(U, Vv, XU, TU, P, center)
    bound = r0 ** (k + 1 + alpha)
    if res0 > bound * (1 + 1e-9):
        need = bound / res0 * v_scale
        raise HypothesisError(f"||v - uP|| = {res0:.4g} > r0^(k+1+alpha) = {bound:.4g} on Q_{r0}; "
                              f"multiply v by at most {need:.4g}", need)
    vscale = max(float(np.nanmax(np.abs(vs.values))), 1e-300)
    floor = floor_factor * EPS * vscale
    trace = IterationTrace([], rho, alpha, k, False, floor, v_scale)
    r = r0
    free_idx = [i for i in indices_up_to(n, k) if i.mn == 0]
    for _ in range(steps):
        XU, TU, U = cylinder_samples(u, center, r)
        _, _, Vv = cylinder_samples(vs, center, r)
        trace.steps.append(IterationStep(r, P, _residual(U, Vv, XU, TU, P, center)))
        Xq, Tq, Q = cylinder_samples(q, center, r)
        x0, t0 = center
        try:
            w = (Q - P.eval_float(Xq - np.asarray(x0), Tq - t0)) / r ** (k + alpha)
            Y = (Xq - np.asarray(x0)) / r
            S = (Tq - t0) / r ** 2
            fit, _ = fit_samples(Y, S, w, ((0.0,) * n, 0.0), k, 1.0)
        except (InsufficientNodesError, RankDeficiencyError):
            trace.truncated = True
            break
        free = {i: fit[i] for i in free_idx}
        Qt = solve_approximating(source.rescaled(r), None, free, k)
        P = P + rescale(Qt, r).scale(r ** (k + alpha))
        r *= rho
        if r < max(4 * u.h, np.sqrt(2 * u.tau)):
            # fewer than three time levels or too few nodes across
            trace.truncated = True
            break
    else:
        XU, TU, U = cylinder_samples(u, center, r)
        _, _, Vv = cylinder_samples(vs, center, r)
        if U.size:
            trace.steps.append(IterationStep(r, P, _residual(U, Vv, XU, TU, P, center)))
    return trace


def estimate_u_model(u: GridField, k: int, r: float, center=None):
    """Normalize u by D_n u(0,0) and read P1 (weighted degrees 2..k) off a fit.

    Returns (scale, UModel) with u / scale = x_n + P1 + O(r^{k+1}).  Assumes the
    graph is normalized at the centre so the linear part is along x_n.
    """
    n = u.n
    center = ((0.0,) * n, u.domain.t0) if center is None else center
    P, _ = fit_parpoly(u, center, k, r)
    lam = P[((0,) * (n - 1) + (1,), 0)]
    if lam <= 0:
        raise HopfError("fitted D_n u at the centre is not positive")
    P1 = ParPoly(n, {i: Fraction(c / lam).limit_denominator(10 ** 12) for i, c in P if i.wdeg >= 2})
    return lam, UModel(P1, None)


# -- scaling of Hoelder seminorms

@dataclass
class ScalingReport:
    r0: float
    alpha: float
    radius: float
    seminorm_original: float
    seminorm_rescaled: float
    ratio: float
    expected: float
    points: tuple

    @property
    def rel_error(self):
        return abs(self.ratio - self.expected) / self.expected if self.expected else float("nan")

    def to_dict(self):
        return {k: getattr(self, k) for k in ("r0", "alpha", "radius", "seminorm_original",
                                              "seminorm_rescaled", "ratio", "expected", "points")} | \
            {"rel_error": self.rel_error}


def _grad_lattice(field: GridField, center, rho, divisions, rel_margin):
    """Spatial gradients at nodes on a lattice of spacing rho/divisions inside Q_rho(center)."""
    x0, t0 = center
    x0 = np.asarray(x0, dtype=float)
    h = field.h
    n = field.n
    step = rho / divisions
    pts, grads = [], []
    offs = np.arange(-divisions, divisions + 1) * step
    mesh = np.stack(np.meshgrid(*([offs] * n), indexing="ij"), axis=-1).reshape(-1, n)
    mesh = mesh[np.linalg.norm(mesh, axis=1) < rho - 1e-12]
    d = field.domain
    for i in range(divisions):
        t = t0 - i * rho * rho / divisions
        j = int(np.argmin(np.abs(field.times - t)))
        if abs(field.times[j] - t) > 0.5 * (field.times[1] - field.times[0]):
            raise ValueError(f"no time level near t={t}")
        t = field.times[j]
        Xs = x0 + mesh
        if d.f is not None:
            g = d.grad_f(Xs[:, :-1], t)
            gd = d.graph_level(Xs, t) / np.sqrt(1 + np.sum(g ** 2, axis=-1))
            Xs = Xs[gd >= rel_margin * rho]
        Xs = Xs[d.wall_level(Xs) >= rel_margin * rho]
        for x in Xs:
            idx = [int(round((x[a] - field.axes[a][0]) / h)) for a in range(n)]
            gvec = []
            for a in range(n):
                ip, im = list(idx), list(idx)
                ip[a] += 1
                im[a] -= 1
                if im[a] < 0 or ip[a] >= field.shape[a]:
                    break
                up, um = field.values[j][tuple(ip)], field.values[j][tuple(im)]
                gvec.append((up - um) / (2 * h))
            if len(gvec) == n and np.all(np.isfinite(gvec)):
                node = np.array([field.axes[a][idx[a]] for a in range(n)])
                pts.append(np.concatenate([node - x0, [t - t0]]))
                grads.append(gvec)
    return np.array(pts), np.array(grads)


def holder_seminorm(pts, grads, alpha, rescale_x=1.0):
    """sup |G(X) - G(Y)| / d(X, Y)^alpha with d = sqrt(|x - y|^2 + |t - s|)."""
    if len(pts) < 2:
        return 0.0
    x = pts[:, :-1] * rescale_x
    t = pts[:, -1] * rescale_x ** 2
    best = 0.0
    for i in range(len(pts) - 1):
        dx = np.sum((x[i + 1:] - x[i]) ** 2, axis=1) + np.abs(t[i + 1:] - t[i])
        dg = np.linalg.norm(grads[i + 1:] - grads[i], axis=1)
        ok = dx > 0
        if np.any(ok):
            best = max(best, float(np.max(dg[ok] / dx[ok] ** (alpha / 2))))
    return best


def scaling_seminorm_check(u: GridField, r0: float, alpha: float = 0.5, rescaled: GridField | None = None,
                           radius: float | None = None, center=None, divisions: int = 8,
                           rel_margin: float = 1 / 16) -> ScalingReport:
    """Compare [D u_{r0}] on Q_R with r0^alpha [D u] on Q_{R r0}, u_{r0}(x,t) = u(r0 x, r0^2 t)/r0.

    Both seminorms are taken over the same lattice in relative coordinates.
    ``rescaled`` is an independently computed u_{r0}; without it u_{r0} is
    formed from u itself by relabelling nodes.
    """
    n = u.n
    center = ((0.0,) * n, u.domain.t0) if center is None else center
    R = u.domain.radius if radius is None else radius
    P0, G0 = _grad_lattice(u, center, R * r0, divisions, rel_margin)
    s_orig = holder_seminorm(P0, G0, alpha)
    if rescaled is None:
        # u_{r0} at y = x / r0: D u_{r0}(y) = D u(x), distances scale by 1 / r0
        s_resc = holder_seminorm(P0, G0, alpha, rescale_x=1.0 / r0)
    else:
        P1, G1 = _grad_lattice(rescaled, center, R, divisions, rel_margin)
        s_resc = holder_seminorm(P1, G1, alpha)
    ratio = s_resc / s_orig if s_orig > 0 else (0.0 if s_resc == 0 else float("inf"))
    return ScalingReport(r0, alpha, R, s_orig, s_resc, ratio, r0 ** alpha, (len(P0),))


def scaling_pair(h, r0, alpha, graph, divisions=None):
    """Solve u on {x_2 > f} in Q_1 and u_{r0} on the dilated domain, then compare seminorms.

    u has smooth data vanishing on the graph; the dilated problem takes its
    data from u by interpolation, so the two solves are independent apart
    from their boundary values.  By default the lattice spacing on the small
    cylinder is kept at 8h or more, since gradient differences over a few
    cells are dominated by discretization error.
    """
    if divisions is None:
        divisions = int(min(8, max(2, np.floor(r0 / (8 * h)))))
    from .heatlab import GraphDomain, Grid, solve_heat
    f, g = graph
    d = GraphDomain(2, f, radius=1.0, f_grad=g)

    def bu(X, t):
        return (X[..., 1] - f(X[..., :1], t)) * (1.2 + 0.4 * np.sin(1.5 * X[..., 0] + 0.5) + 0.3 * X[..., 1])
    grid = Grid(h)
    u = solve_heat(d, lambda X: bu(X, d.t_start), boundary=bu, grid=grid)
    dr = d.rescaled(r0)
    init, data = rescaled_boundary_data(u, r0)
    ur = solve_heat(dr, init, boundary=data, grid=grid)
    return scaling_seminorm_check(u, r0, alpha, rescaled=ur, divisions=divisions)


def rescaled_boundary_data(u: GridField, r0: float):
    """Dirichlet/initial data for u_{r0} read from u by linear interpolation (zero below the graph)."""
    from scipy.interpolate import RegularGridInterpolator
    vals = np.nan_to_num(u.values, nan=0.0)
    interp = RegularGridInterpolator((u.times,) + tuple(u.axes), vals, bounds_error=False, fill_value=0.0)
    t0 = u.domain.t0

    def data(X, t):
        X = np.asarray(X, dtype=float)
        tt = np.full(X.shape[0], t0 + (t - t0) * r0 * r0)
        pts = np.column_stack([tt, X * r0])
        return interp(pts) / r0

    def initial(X):
        return data(X, u.domain.t_start)
    return initial, data
