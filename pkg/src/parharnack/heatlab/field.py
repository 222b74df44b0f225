"""Grids and sampled fields on moving graph domains."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .domain import GraphDomain


class RatioError(ValueError):
    """Time step not tied to the space step as required."""


@dataclass(frozen=True)
class Grid:
    """Uniform space step h; time step tau = tau_ratio * h unless given.

    Time levels run from the cylinder bottom to its top.  ``times`` may list
    explicit levels instead (a graded mesh, for instance); they must start at
    the bottom and increase.
    """

    h: float
    tau: float | None = None
    scheme: str = "cn"
    tau_ratio: float = 1.0
    times: tuple | None = None
    max_ratio: float = 4.0

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("h must be positive")
        if self.scheme not in ("cn", "be"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        tau = self.tau if self.tau is not None else self.tau_ratio * self.h
        if tau <= 0:
            raise ValueError("tau must be positive")
        if tau / self.h > self.max_ratio:
            raise RatioError(f"tau/h = {tau / self.h:.3g} exceeds the allowed ratio {self.max_ratio}")
        object.__setattr__(self, "tau", float(tau))

    def axes(self, domain: GraphDomain):
        m = 2 * domain.radius / self.h
        N = int(round(m))
        if abs(m - N) > 1e-9 * max(1.0, m):
            raise ValueError(f"2r/h = {m} must be an integer")
        return tuple(c - domain.radius + self.h * np.arange(N + 1) for c in domain.center)

    def levels(self, domain: GraphDomain, t_end: float | None = None) -> np.ndarray:
        t_end = domain.t0 if t_end is None else t_end
        if self.times is not None:
            ts = np.asarray(self.times, dtype=float)
            if abs(ts[0] - domain.t_start) > 1e-12 or np.any(np.diff(ts) <= 0):
                raise ValueError("explicit times must start at the cylinder bottom and increase")
            if np.max(np.diff(ts)) / self.h > self.max_ratio:
                raise RatioError("explicit time steps exceed the allowed tau/h ratio")
            return ts
        span = t_end - domain.t_start
        M = max(1, int(math.ceil(span / self.tau - 1e-9)))
        return domain.t_start + span * np.arange(M + 1) / M


def geometric_times(t_start, t_end, probes, h, ratio=1.0, growth=1.1, first=None):
    """Graded time mesh: small steps near t_start growing geometrically up to ratio*h.

    Every probe time is included exactly.
    """
    first = h * h if first is None else first
    pts = {float(t_start), float(t_end)}
    pts.update(float(p) for p in probes)
    out = [float(t_start)]
    targets = sorted(p for p in pts if p > t_start)
    dt = first
    for tgt in targets:
        while out[-1] + dt < tgt - 1e-14:
            out.append(out[-1] + dt)
            dt = min(dt * growth, ratio * h)
        out.append(tgt)
    return tuple(out)


@dataclass(frozen=True)
class BoundaryEdges:
    """Stencil arms cut by the boundary at one time level."""

    node: np.ndarray   # flat index of the active node
    axis: np.ndarray   # coordinate axis of the arm
    sign: np.ndarray   # +1 or -1
    theta: np.ndarray  # arm length as a fraction of h, in (0, 1]


@dataclass(frozen=True)
class GridField:
    """Values on a tensor grid per time level; NaN marks inactive nodes."""

    domain: GraphDomain
    h: float
    tau: float
    times: np.ndarray
    axes: tuple
    values: np.ndarray
    edges: tuple = ()
    scheme: str = "cn"
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def shape(self):
        return tuple(len(a) for a in self.axes)

    @property
    def n(self):
        return len(self.axes)

    def active(self, j=None):
        return ~np.isnan(self.values) if j is None else ~np.isnan(self.values[j])

    def coords(self):
        """Node coordinates, shape (*shape, n)."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    def samples(self):
        """(X, T, V) over all active nodes: time-major, then C order over nodes."""
        X = self.coords().reshape(-1, self.n)
        xs, ts, vs = [], [], []
        for j, t in enumerate(self.times):
            v = self.values[j].reshape(-1)
            ok = ~np.isnan(v)
            xs.append(X[ok])
            ts.append(np.full(ok.sum(), t))
            vs.append(v[ok])
        return np.concatenate(xs), np.concatenate(ts), np.concatenate(vs)

    def with_values(self, values, **meta):
        values = np.asarray(values, dtype=float)
        if values.shape != self.values.shape:
            raise ValueError("shape mismatch")
        return GridField(self.domain, self.h, self.tau, self.times, self.axes, values,
                         self.edges, self.scheme, {**self.meta, **meta})

    def level_index(self, t, tol=1e-12):
        j = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[j] - t) > tol * max(1.0, abs(t)):
            raise KeyError(f"no time level at t={t}")
        return j

    def value_at(self, x, t):
        """Value at a grid node."""
        j = self.level_index(t)
        idx = tuple(int(round((xi - a[0]) / self.h)) for xi, a in zip(x, self.axes))
        for xi, a, i in zip(x, self.axes, idx):
            if not 0 <= i < len(a) or abs(a[i] - xi) > 1e-9 * self.h:
                raise KeyError(f"{tuple(x)} is not a grid node")
        return float(self.values[j][idx])

    def normalize(self, point=None, t=None):
        """Scale so the value at ``point`` and time ``t`` equals 1.

        Defaults are x0 + (r/2) e_n and t0 - 3r^2/8, which on Q_2(0,0) is the
        point (e_n, -3/2).  The nearest node and level are used.
        """
        d = self.domain
        if point is None:
            point = tuple(d.center[:-1]) + (d.center[-1] + d.radius / 2,)
        if t is None:
            t = d.t0 - 3 * d.radius ** 2 / 8
        j = int(np.argmin(np.abs(self.times - t)))
        X = self.coords().reshape(-1, self.n)
        k = int(np.argmin(np.linalg.norm(X - np.asarray(point), axis=1)))
        val = self.values[j].reshape(-1)[k]
        if not np.isfinite(val) or val == 0:
            raise ValueError("normalization point is not active or the value vanishes")
        return self.with_values(self.values / val, normalized_by=float(val))

    def to_csv(self, path):
        X, T, V = self.samples()
        level = np.repeat(np.arange(len(self.times)), [int(np.sum(self.active(j))) for j in range(len(self.times))])
        names = [f"x{i + 1}" for i in range(self.n)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "t"] + names + ["value"])
            for lv, t, x, v in zip(level, T, X, V):
                w.writerow([int(lv), repr(float(t))] + [repr(float(c)) for c in x] + [repr(float(v))])

    def to_npz(self, path):
        np.savez(path, times=self.times, values=self.values, h=self.h, tau=self.tau,
                 **{f"axis{i}": a for i, a in enumerate(self.axes)})


def sample_function(domain: GraphDomain, grid: Grid, fn, t_end=None) -> GridField:
    """Closed-form field fn(X, t) sampled at nodes strictly inside the domain."""
    axes = grid.axes(domain)
    times = grid.levels(domain, t_end)
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    vals = np.full((len(times),) + X.shape[:-1], np.nan)
    for j, t in enumerate(times):
        ok = domain.level(X, t) > 0
        v = np.asarray(fn(X, t), dtype=float)
        v = np.broadcast_to(v, X.shape[:-1])
        vals[j][ok] = v[ok]
    return GridField(domain, grid.h, grid.tau, times, axes, vals, (), grid.scheme,
                     {"source": "closed form"})
