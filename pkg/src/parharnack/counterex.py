"""Blow-up of v/u at base and corner points of a cylinder.

u and v solve the heat equation in B x (0, T) with zero initial data and
lateral data phi(x) t^alpha and phi(x) t^beta.  Since s^beta >= t^(beta-alpha) s^alpha
for s <= t, the ratio v/u is at least t^(beta-alpha) everywhere, so it cannot
stay bounded as t -> 0.  ``run_blowup`` measures the ratio with the grid solver;
``kernel_quadrature_oracle`` computes it independently (n = 1) from the
image series of the interval heat kernel and adaptive quadrature in time.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.integrate import quad
from scipy.special import erfc

from .heatlab import GraphDomain, Grid, geometric_times, solve_heat


class UnresolvedProbeError(ValueError):
    pass


class SeriesTruncationError(ValueError):
    pass


def raised_cosine_cutoff(x0, width=0.5, ramp=0.5):
    """phi on the unit sphere: 0 within angular distance width/2 of x0, 1 beyond width/2 + ramp."""
    x0 = np.asarray(x0, dtype=float)
    x0 = x0 / np.linalg.norm(x0)

    def phi(X):
        X = np.asarray(X, dtype=float)
        if X.shape[-1] == 1:
            # the sphere of the interval is {-1, 1}
            return np.where(np.sign(X[..., 0]) == np.sign(x0[0]), 0.0, 1.0)
        c = np.clip(X @ x0 / np.maximum(np.linalg.norm(X, axis=-1), 1e-300), -1, 1)
        ang = np.arccos(c)
        s = np.clip((ang - width / 2) / ramp, 0.0, 1.0)
        return 0.5 * (1 - np.cos(np.pi * s))
    return phi


@dataclass(frozen=True)
class BlowupExperiment:
    """Exponents, variant and probe path.

    The default probe is 1/64 inside the unit ball, next to the boundary
    point e_1 for the base variant and next to the corner point x0 = -e_1 for
    the corner variant; probe times are t_j = 2^-j for j = 3..J.
    """

    alpha: float
    beta: float
    variant: str = "base"
    n: int = 1
    probe: tuple | None = None
    times: tuple | None = None
    J: int = 10
    T: float = 1.0
    corner_point: tuple | None = None
    cutoff_width: float = 0.5

    def __post_init__(self):
        if not (0 < self.beta <= self.alpha <= 1):
            raise ValueError(f"need 0 < beta <= alpha <= 1, got alpha={self.alpha}, beta={self.beta}")
        if self.variant not in ("base", "corner"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.n not in (1, 2):
            raise ValueError("n must be 1 or 2")
        if self.T != 1.0:
            raise ValueError("only T = 1 (the unit cylinder) is supported")
        x0 = self.corner_point if self.corner_point is not None else (-1.0,) + (0.0,) * (self.n - 1)
        object.__setattr__(self, "corner_point", tuple(float(c) for c in x0))
        if self.probe is None:
            d = 1.0 / 64
            if self.variant == "base":
                p = (1.0 - d,) + (0.0,) * (self.n - 1)
            else:
                p = tuple((1.0 - d) * c for c in self.corner_point)
            object.__setattr__(self, "probe", p)
        if len(self.probe) != self.n or np.linalg.norm(self.probe) >= 1:
            raise ValueError("probe must be an interior point of the unit ball")
        if self.times is None:
            object.__setattr__(self, "times", tuple(2.0 ** -j for j in range(3, self.J + 1)))
        ts = tuple(float(t) for t in self.times)
        if any(not 0 < t <= self.T for t in ts):
            raise ValueError("probe times must lie in (0, T]")
        object.__setattr__(self, "times", tuple(sorted(ts, reverse=True)))

    def phi(self):
        if self.variant == "base":
            return lambda X: np.ones(np.asarray(X).shape[:-1])
        return raised_cosine_cutoff(self.corner_point, self.cutoff_width)


@dataclass
class BlowupResult:
    experiment: BlowupExperiment
    times: list
    ratios: list
    u_values: list
    fitted_exponent: float
    exponent_stderr: float
    oracle_lo: list = field(default_factory=list)
    oracle_hi: list = field(default_factory=list)
    dropped: list = field(default_factory=list)
    grid: dict = field(default_factory=dict)

    @property
    def samples(self):
        return list(zip(self.times, self.ratios))

    @property
    def monotone(self):
        """Ratios grow as t decreases."""
        return all(b > a for a, b in zip(self.ratios, self.ratios[1:]))

    def lower_bound_margin(self):
        """min_j ratio_j * t_j^(alpha - beta); at least 1 for the exact solution."""
        e = self.experiment
        return float(min(r * t ** (e.alpha - e.beta) for t, r in zip(self.times, self.ratios)))

    def inside_oracle(self, inflate=0.05):
        if not self.oracle_lo:
            return None
        return all(lo * (1 - inflate) <= r <= hi * (1 + inflate)
                   for r, lo, hi in zip(self.ratios, self.oracle_lo, self.oracle_hi))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_j", "ratio_j", "oracle_lo", "oracle_hi"])
            for i, (t, r) in enumerate(zip(self.times, self.ratios)):
                lo = repr(float(self.oracle_lo[i])) if self.oracle_lo else ""
                hi = repr(float(self.oracle_hi[i])) if self.oracle_hi else ""
                w.writerow([repr(float(t)), repr(float(r)), lo, hi])

    def summary(self):
        e = self.experiment
        return {"alpha": e.alpha, "beta": e.beta, "variant": e.variant, "n": e.n,
                "probe": list(e.probe), "fitted_exponent": self.fitted_exponent,
                "exponent_stderr": self.exponent_stderr, "target": -(e.alpha - e.beta),
                "monotone": self.monotone, "inside_oracle": self.inside_oracle(),
                "lower_bound_margin": self.lower_bound_margin(),
                "dropped_times": list(self.dropped), "grid": self.grid}

    def to_json(self):
        return json.dumps(self.summary(), sort_keys=True, indent=1)


def _fit(times, ratios):
    if len(times) < 2:
        return float("nan"), float("nan")
    if len(times) == 2:
        s = np.diff(np.log(ratios)) / np.diff(np.log(times))
        return float(s[0]), float("nan")
    lr = stats.linregress(np.log(times), np.log(ratios))
    return float(lr.slope), float(lr.stderr)


def run_blowup(exp: BlowupExperiment, grid: Grid | None = None, growth: float = 1.05,
               positivity_floor: float = 1e-12, drop_unresolved: bool = False,
               with_oracle: bool = True) -> BlowupResult:
    """Solve for u and v, sample v/u at the probe, fit the log-log slope.

    Time levels are graded geometrically from t = 0 and include every probe
    time.  A probe where u < positivity_floor * t^alpha is unresolved: it
    raises, or is dropped and listed when ``drop_unresolved`` is set.
    """
    n = exp.n
    h = grid.h if grid is not None else (2.0 ** -10 if n == 1 else 2.0 ** -6)
    scheme = grid.scheme if grid is not None else "cn"
    domain = GraphDomain(n, None, center=(0.0,) * n, t0=exp.T, radius=1.0, shape="ball")
    t_max = max(exp.times)
    ts = geometric_times(0.0, t_max, exp.times, h, ratio=1.0, growth=growth)
    steps = np.diff(ts)
    for t in exp.times:
        if t < 2 * steps[0]:
            raise UnresolvedProbeError(f"probe time {t} is below two time steps")
    g = Grid(h, scheme=scheme, times=ts)
    phi = exp.phi()

    def data(a):
        return lambda X, t: phi(X) * max(t, 0.0) ** a

    U = solve_heat(domain, None, None, g, boundary=data(exp.alpha), check_resolution=False)
    V = U if exp.alpha == exp.beta else solve_heat(domain, None, None, g, boundary=data(exp.beta),
                                                   check_resolution=False)
    idx = tuple(int(round((p - a[0]) / h)) for p, a in zip(exp.probe, U.axes))
    node = tuple(float(a[i]) for a, i in zip(U.axes, idx))
    if any(abs(a - b) > 1e-9 * h for a, b in zip(node, exp.probe)):
        raise ValueError(f"probe {exp.probe} is not a grid node for h={h}")
    times, ratios, uvals, dropped = [], [], [], []
    for t in exp.times:
        j = U.level_index(t)
        uu = float(U.values[j][idx])
        vv = float(V.values[j][idx])
        if not np.isfinite(uu) or uu < positivity_floor * t ** exp.alpha:
            if drop_unresolved:
                dropped.append(t)
                continue
            raise UnresolvedProbeError(f"u = {uu:.3g} at t = {t} is below the positivity floor")
        times.append(t)
        ratios.append(vv / uu)
        uvals.append(uu)
    slope, se = _fit(times, ratios)
    res = BlowupResult(exp, times, ratios, uvals, slope, se, dropped=dropped,
                       grid={"h": h, "levels": len(ts), "growth": growth, "scheme": scheme})
    if with_oracle and n == 1:
        for t in times:
            lo, hi = kernel_quadrature_oracle(exp, t)
            res.oracle_lo.append(lo)
            res.oracle_hi.append(hi)
    return res


# -- independent oracle on the interval (-1, 1)

def _step_response(active, x, tau, K):
    """Solution at (x, tau) with zero initial data and lateral data 1 on the active ends.

    Image series for the interval (-1, 1); returns (value, bound on the neglected terms).
    """
    if tau <= 0:
        return 0.0, 0.0
    s = 2.0 * np.sqrt(tau)
    k = np.arange(K)
    if active == "both":
        terms = (-1.0) ** k * (erfc((2 * k + 1 - x) / s) + erfc((2 * k + 1 + x) / s))
        tail = 2 * erfc((2 * K + 1 - abs(x)) / s)
    else:
        z = 1.0 - x if active == "right" else 1.0 + x
        terms = erfc((4 * k + z) / s) - erfc((4 * k + 4 - z) / s)
        tail = erfc((4 * K + z) / s)
    return float(np.sum(terms)), float(tail)


def _lateral(exp: BlowupExperiment, x, t, a, K, tol):
    if exp.variant == "base":
        active = "both"
    else:
        active = "left" if exp.corner_point[0] > 0 else "right"
    tails = []

    def W(s):
        val, tail = _step_response(active, x, t - s, K)
        tails.append(tail)
        return val

    # u = int_0^t W(x, t - s) d(s^a) = a int_0^t W(x, t - s) s^(a-1) ds
    val, err = quad(W, 0.0, t, weight="alg", wvar=(a - 1.0, 0.0), epsabs=0.0, epsrel=1e-12, limit=400)
    tail = max(tails, default=0.0) * t ** a
    if tail > tol * abs(a * val):
        raise SeriesTruncationError(f"series tail {tail:.3g} too large relative to {a * val:.3g}; raise K")
    return a * val, a * err + tail


def kernel_quadrature_oracle(exp: BlowupExperiment, t: float, x=None, K: int = 40, tol: float = 1e-8):
    """Lower and upper bounds for v/u at (x, t) (default x = the probe), n = 1 only."""
    if exp.n != 1:
        raise ValueError("the kernel oracle is one-dimensional")
    x = exp.probe[0] if x is None else float(np.ravel(x)[0])
    if not -1 < x < 1:
        raise ValueError("x must lie in (-1, 1)")
    u, eu = _lateral(exp, x, t, exp.alpha, K, tol)
    if exp.alpha == exp.beta:
        v, ev = u, eu
    else:
        v, ev = _lateral(exp, x, t, exp.beta, K, tol)
    if u - eu <= 0:
        raise SeriesTruncationError(f"u = {u:.3g} is not resolved by the quadrature at t = {t}")
    return (v - ev) / (u + eu), (v + ev) / (u - eu)
