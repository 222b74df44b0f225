"""Space-time graph domains {x_n > f(x', t)} cut by a parabolic cylinder."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class EmptySliceError(ValueError):
    pass


def _zero_f(xp, t):
    return np.zeros(np.broadcast_shapes(np.shape(xp)[:-1], np.shape(t)))


@dataclass(frozen=True)
class GraphDomain:
    """{x_n > f(x', t)} intersected with Q_r(x0, t0) = B_r(x0) x (t0 - r^2, t0].

    ``f`` takes x' with shape (..., n-1) (shape (..., 0) when n = 1) and t,
    and returns heights of shape (...).  ``f=None`` means no graph: the
    domain is the whole cylinder.  ``shape`` selects a ball or a box for the
    spatial cross-section.  ``f_grad`` may supply the exact gradient of f in
    x'; otherwise it is approximated by central differences.
    """

    n: int
    f: Callable | None = None
    center: tuple = None
    t0: float = 0.0
    radius: float = 1.0
    shape: str = "ball"
    f_grad: Callable | None = None
    regularity: tuple | None = None
    seminorm_bound: float | None = None
    normalized: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError(f"only n in {{1, 2}} is supported, got {self.n}")
        c = tuple(float(v) for v in (self.center if self.center is not None else (0.0,) * self.n))
        if len(c) != self.n:
            raise ValueError("center must have n coordinates")
        object.__setattr__(self, "center", c)
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.shape not in ("ball", "box"):
            raise ValueError(f"unknown cross-section {self.shape!r}")
        if self.normalized:
            if self.f is None:
                raise ValueError("a normalized domain needs a graph")
            f0 = float(self.height(np.zeros(self.n - 1), 0.0))
            g0 = self.grad_f(np.zeros(self.n - 1), 0.0)
            if abs(f0) > 1e-12 or np.max(np.abs(g0), initial=0.0) > 1e-8:
                raise ValueError(f"normalization f(0,0)=0, grad f(0,0)=0 fails: f={f0}, grad={g0}")

    @property
    def t_start(self) -> float:
        return self.t0 - self.radius ** 2

    @property
    def has_graph(self) -> bool:
        return self.f is not None

    def height(self, xp, t):
        xp = np.asarray(xp, dtype=float)
        if self.f is None:
            return np.full(np.broadcast_shapes(xp.shape[:-1], np.shape(t)), -np.inf)
        return np.asarray(self.f(xp, t), dtype=float)

    def grad_f(self, xp, t, step=1e-5):
        """Gradient of f in x', shape (..., n-1)."""
        xp = np.asarray(xp, dtype=float)
        if self.f is None or self.n == 1:
            return np.zeros(xp.shape[:-1] + (self.n - 1,))
        if self.f_grad is not None:
            return np.asarray(self.f_grad(xp, t), dtype=float)
        out = []
        for i in range(self.n - 1):
            e = np.zeros(self.n - 1)
            e[i] = step
            out.append((self.height(xp + e, t) - self.height(xp - e, t)) / (2 * step))
        return np.stack(out, axis=-1)

    def normal(self, xp, t):
        """Inward unit normal (-grad f, 1)/|(-grad f, 1)| at graph points."""
        g = self.grad_f(xp, t)
        v = np.concatenate([-g, np.ones(g.shape[:-1] + (1,))], axis=-1)
        return v / np.linalg.norm(v, axis=-1, keepdims=True)

    def wall_level(self, x):
        """Positive inside the spatial cross-section, zero on its boundary."""
        x = np.asarray(x, dtype=float)
        d = x - np.asarray(self.center)
        if self.shape == "ball":
            return self.radius - np.linalg.norm(d, axis=-1)
        return self.radius - np.max(np.abs(d), axis=-1)

    def graph_level(self, x, t):
        x = np.asarray(x, dtype=float)
        if self.f is None:
            return np.full(np.broadcast_shapes(x.shape[:-1], np.shape(t)), np.inf)
        return x[..., -1] - self.height(x[..., :-1], t)

    def level(self, x, t):
        """Positive exactly on the open time slice."""
        return np.minimum(self.wall_level(x), self.graph_level(x, t))

    def contains(self, x, t):
        return self.level(x, t) > 0

    def on_graph(self, x, t, tol=1e-9):
        x = np.asarray(x, dtype=float)
        return np.abs(self.graph_level(x, t)) <= tol * max(1.0, self.radius)

    def in_cylinder(self, x, t, tol=1e-12):
        t = np.asarray(t, dtype=float)
        return (self.wall_level(x) > -tol) & (t > self.t_start - tol) & (t <= self.t0 + tol)

    def curvature_bound(self, samples=65):
        """Largest |second x'-derivative| of f sampled over the cylinder (n=2)."""
        if self.f is None or self.n == 1:
            return 0.0
        s = np.linspace(self.center[0] - self.radius, self.center[0] + self.radius, samples)
        ts = np.linspace(self.t_start, self.t0, 9)
        S, T = np.meshgrid(s, ts, indexing="ij")
        e = 1e-3 * self.radius
        xp = S[..., None]
        f2 = (self.height(xp + e, T) - 2 * self.height(xp, T) + self.height(xp - e, T)) / e ** 2
        return float(np.max(np.abs(f2)))

    def rescaled(self, r0) -> "GraphDomain":
        """Domain of u(r0 x, r0^2 t)/r0: graph f(r0 x', r0^2 t)/r0, same cylinder."""
        if self.f is None:
            return self
        f = self.f
        fg = self.f_grad

        def fr(xp, t):
            return f(np.asarray(xp) * r0, np.asarray(t) * r0 ** 2) / r0

        gr = None
        if fg is not None:
            def gr(xp, t):
                return fg(np.asarray(xp) * r0, np.asarray(t) * r0 ** 2)
        return GraphDomain(self.n, fr, self.center, self.t0, self.radius, self.shape, gr,
                           self.regularity, self.seminorm_bound, self.normalized, dict(self.meta))


def sine_graph(amp=0.05, freq=1.0, speed=1.0):
    """f(x1, t) = amp * sin(freq * x1 + speed * t) with its exact gradient."""
    def f(xp, t):
        return amp * np.sin(freq * np.asarray(xp)[..., 0] + speed * np.asarray(t))

    def g(xp, t):
        return (amp * freq * np.cos(freq * np.asarray(xp)[..., 0] + speed * np.asarray(t)))[..., None]
    return f, g


def rough_graph(amp=0.02, holder=0.5, octaves=6, seed=0):
    """Random-phase Weierstrass sum sum_j 2^{-j holder} cos(2^j x1 + phase_j + 2^j t), scaled by amp.

    Its x1-regularity is C^holder uniformly in the number of octaves; no
    exact gradient is supplied, so the second entry is None.
    """
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0, 2 * np.pi, octaves)
    freqs = 2.0 ** np.arange(octaves)
    weights = freqs ** -holder

    def f(xp, t):
        x = np.asarray(xp)[..., 0, None]
        return amp * np.sum(weights * np.cos(freqs * x + phases + freqs * np.asarray(t)[..., None]), axis=-1)
    return f, None
