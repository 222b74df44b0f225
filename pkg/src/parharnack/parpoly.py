"""Exact parabolic polynomials.

A monomial x^m t^l in n space variables carries the weighted degree
|m| + 2l, since time scales like length squared.  Coefficients are kept as
``fractions.Fraction`` so that identities such as caloricity can be checked
exactly.  Float coefficients are accepted too (least-squares fits produce
them) and flow through the same code.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from functools import total_ordering
from itertools import product as _iproduct
from numbers import Rational

import numpy as np

MAX_DIM = 4


@total_ordering
@dataclass(frozen=True)
class ParIndex:
    """Exponent pair (m, ell) of the monomial x^m t^ell."""

    m: tuple
    ell: int = 0

    def __post_init__(self):
        m = tuple(int(e) for e in self.m)
        if not m:
            raise ValueError("ParIndex needs at least one spatial exponent")
        if any(e < 0 for e in m) or self.ell < 0:
            raise ValueError(f"negative exponent in {m}, {self.ell}")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "ell", int(self.ell))

    @property
    def dim(self) -> int:
        return len(self.m)

    @property
    def wdeg(self) -> int:
        return sum(self.m) + 2 * self.ell

    @property
    def mn(self) -> int:
        return self.m[-1]

    def sort_key(self):
        # graded, then m_n ascending, then reverse-lex on (m, ell)
        return (self.wdeg, self.m[-1], tuple(-e for e in reversed(self.m + (self.ell,))))

    def __lt__(self, other):
        if not isinstance(other, ParIndex):
            return NotImplemented
        return self.sort_key() < other.sort_key()

    def shift(self, i: int, by: int = 1) -> "ParIndex | None":
        """Index with m_i changed by ``by``; None if it would go negative."""
        m = list(self.m)
        m[i] += by
        if m[i] < 0:
            return None
        return ParIndex(tuple(m), self.ell)

    def shift_t(self, by: int = 1) -> "ParIndex | None":
        if self.ell + by < 0:
            return None
        return ParIndex(self.m, self.ell + by)

    def __repr__(self):
        return f"ParIndex({self.m}, {self.ell})"


def indices_up_to(n: int, k: int, min_wdeg: int = 0) -> list:
    """All indices in dimension n with min_wdeg <= wdeg <= k, sorted."""
    out = []
    for ell in range(k // 2 + 1):
        rest = k - 2 * ell
        for m in _iproduct(range(rest + 1), repeat=n):
            w = sum(m) + 2 * ell
            if min_wdeg <= w <= k:
                out.append(ParIndex(m, ell))
    out.sort()
    return out


def _coerce(c):
    if isinstance(c, Fraction):
        return c
    if isinstance(c, (bool, np.bool_)):
        raise TypeError("boolean coefficient")
    if isinstance(c, (int, np.integer, Rational)):
        return Fraction(int(c)) if isinstance(c, (int, np.integer)) else Fraction(c)
    if isinstance(c, (float, np.floating)):
        return float(c)
    raise TypeError(f"unsupported coefficient type {type(c).__name__}")


class ParPoly:
    """Sparse parabolic polynomial with an immutable coefficient map."""

    __slots__ = ("dim", "_c", "degree_cap", "_key")

    def __init__(self, dim: int, coeffs=None, degree_cap: int | None = None):
        if not 1 <= dim <= MAX_DIM:
            raise ValueError(f"dimension must be in 1..{MAX_DIM}, got {dim}")
        c = {}
        for idx, val in (coeffs or {}).items():
            if not isinstance(idx, ParIndex):
                m, ell = idx
                idx = ParIndex(tuple(m), ell)
            if idx.dim != dim:
                raise ValueError(f"index {idx} does not match dimension {dim}")
            val = _coerce(val)
            if val != 0:
                c[idx] = c.get(idx, 0) + val
                if c[idx] == 0:
                    del c[idx]
        if degree_cap is not None:
            bad = [i for i in c if i.wdeg > degree_cap]
            if bad:
                raise ValueError(f"index {bad[0]} exceeds degree cap {degree_cap}")
        self.dim = dim
        self._c = c
        self.degree_cap = degree_cap
        self._key = None

    # -- constructors
    @classmethod
    def zero(cls, dim):
        return cls(dim)

    @classmethod
    def constant(cls, dim, c=1):
        return cls(dim, {ParIndex((0,) * dim, 0): c})

    @classmethod
    def monomial(cls, dim, m, ell=0, c=1):
        return cls(dim, {ParIndex(tuple(m), ell): c})

    @classmethod
    def var(cls, dim, i):
        """x_{i+1} (zero-based axis i); ``var(n, n-1)`` is x_n."""
        m = [0] * dim
        m[i] = 1
        return cls(dim, {ParIndex(tuple(m), 0): 1})

    @classmethod
    def time(cls, dim):
        return cls(dim, {ParIndex((0,) * dim, 1): 1})

    # -- access
    @property
    def coeffs(self) -> dict:
        return dict(self._c)

    def terms(self):
        """(index, coefficient) pairs in the monomial order."""
        return sorted(self._c.items(), key=lambda kv: kv[0].sort_key())

    def __getitem__(self, idx):
        if not isinstance(idx, ParIndex):
            idx = ParIndex(tuple(idx[0]), idx[1])
        return self._c.get(idx, 0)

    def __len__(self):
        return len(self._c)

    def __iter__(self):
        return iter(self.terms())

    def is_zero(self) -> bool:
        return not self._c

    def is_exact(self) -> bool:
        return all(isinstance(v, Fraction) for v in self._c.values())

    @property
    def wdeg(self) -> int:
        """Largest weighted degree present; -1 for the zero polynomial."""
        return max((i.wdeg for i in self._c), default=-1)

    @property
    def min_wdeg(self) -> int:
        return min((i.wdeg for i in self._c), default=-1)

    def norm(self):
        return max((abs(v) for v in self._c.values()), default=Fraction(0))

    def with_cap(self, k):
        return ParPoly(self.dim, self._c, degree_cap=k)

    def truncate(self, max_wdeg: int, min_wdeg: int = 0) -> "ParPoly":
        return ParPoly(self.dim, {i: v for i, v in self._c.items()
                                  if min_wdeg <= i.wdeg <= max_wdeg})

    def split(self, k: int):
        """(terms with wdeg <= k-1, terms with wdeg >= k)."""
        lo = {i: v for i, v in self._c.items() if i.wdeg <= k - 1}
        hi = {i: v for i, v in self._c.items() if i.wdeg >= k}
        return ParPoly(self.dim, lo), ParPoly(self.dim, hi)

    # -- arithmetic
    def _check(self, other):
        if not isinstance(other, ParPoly):
            raise TypeError("expected ParPoly")
        if other.dim != self.dim:
            raise ValueError(f"dimension mismatch: {self.dim} vs {other.dim}")

    def __add__(self, other):
        if not isinstance(other, ParPoly):
            other = ParPoly.constant(self.dim, other)
        self._check(other)
        c = dict(self._c)
        for i, v in other._c.items():
            c[i] = c.get(i, 0) + v
        return ParPoly(self.dim, c)

    __radd__ = __add__

    def __neg__(self):
        return ParPoly(self.dim, {i: -v for i, v in self._c.items()}, self.degree_cap)

    def __sub__(self, other):
        if not isinstance(other, ParPoly):
            other = ParPoly.constant(self.dim, other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def scale(self, s):
        s = _coerce(s)
        return ParPoly(self.dim, {i: s * v for i, v in self._c.items()}, self.degree_cap)

    def __mul__(self, other):
        if isinstance(other, ParPoly):
            return multiply(self, other)
        return self.scale(other)

    def __rmul__(self, other):
        return self.scale(other)

    def __eq__(self, other):
        if isinstance(other, ParPoly):
            return self.dim == other.dim and self._c == other._c
        if isinstance(other, (int, Fraction, float)):
            return self == ParPoly.constant(self.dim, other)
        return NotImplemented

    def __hash__(self):
        if self._key is None:
            self._key = hash((self.dim, frozenset(self._c.items())))
        return self._key

    # -- evaluation
    def __call__(self, x, t):
        return self.eval(x, t)

    def eval(self, x, t):
        """Exact evaluation at a point (rational input keeps the result rational)."""
        x = tuple(x)
        if len(x) != self.dim:
            raise ValueError(f"point has {len(x)} coordinates, polynomial has dim {self.dim}")
        x = tuple(_coerce(v) for v in x)
        t = _coerce(t)
        # power tables, then sum of products
        top = [max((i.m[a] for i in self._c), default=0) for a in range(self.dim)]
        tt = max((i.ell for i in self._c), default=0)
        xp = [[_coerce(1)] for _ in range(self.dim)]
        for a in range(self.dim):
            for _ in range(top[a]):
                xp[a].append(xp[a][-1] * x[a])
        tp = [_coerce(1)]
        for _ in range(tt):
            tp.append(tp[-1] * t)
        total = Fraction(0)
        for i, v in self._c.items():
            term = v * tp[i.ell]
            for a, e in enumerate(i.m):
                if e:
                    term = term * xp[a][e]
            total = total + term
        return total

    def eval_float(self, x, t):
        """Vectorized float evaluation; x has shape (..., dim), t broadcasts against x[..., 0]."""
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError("last axis of x must equal dim")
        out = np.zeros(np.broadcast_shapes(x.shape[:-1], t.shape))
        for i, v in self.terms():
            term = float(v) * t ** i.ell
            for a, e in enumerate(i.m):
                if e:
                    term = term * x[..., a] ** e
            out = out + term
        return out

    # -- calculus
    def partial(self, i: int) -> "ParPoly":
        c = {}
        for idx, v in self._c.items():
            e = idx.m[i]
            if e:
                c[idx.shift(i, -1)] = v * e
        return ParPoly(self.dim, c)

    def grad(self) -> list:
        return [self.partial(i) for i in range(self.dim)]

    def dt(self) -> "ParPoly":
        c = {}
        for idx, v in self._c.items():
            if idx.ell:
                c[idx.shift_t(-1)] = v * idx.ell
        return ParPoly(self.dim, c)

    def laplacian(self) -> "ParPoly":
        c = {}
        for idx, v in self._c.items():
            for a, e in enumerate(idx.m):
                if e >= 2:
                    j = idx.shift(a, -2)
                    c[j] = c.get(j, 0) + v * e * (e - 1)
        return ParPoly(self.dim, c)

    def heat(self) -> "ParPoly":
        return heat_apply(self)

    def rescale(self, r) -> "ParPoly":
        return rescale(self, r)

    # -- misc
    def to_float(self) -> "ParPoly":
        return ParPoly(self.dim, {i: float(v) for i, v in self._c.items()})

    def __repr__(self):
        if not self._c:
            return f"ParPoly(dim={self.dim}, 0)"
        return f"ParPoly(dim={self.dim}, {to_string(self)})"

    def to_records(self):
        return to_records(self)


@dataclass(frozen=True)
class HolderClassParams:
    """Order k and exponent alpha of a parabolic Hoelder class."""

    k: int
    alpha: Fraction

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 0:
            raise ValueError(f"k must be a non-negative integer, got {self.k}")
        a = Fraction(self.alpha) if not isinstance(self.alpha, float) else Fraction(self.alpha).limit_denominator(10**6)
        if not 0 < a < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "alpha", a)

    @property
    def order(self) -> Fraction:
        return self.k + self.alpha


def heat_apply(P: ParPoly) -> ParPoly:
    """Delta P - dP/dt."""
    c = {}
    for idx, v in P._c.items():
        for a, e in enumerate(idx.m):
            if e >= 2:
                j = idx.shift(a, -2)
                c[j] = c.get(j, 0) + v * e * (e - 1)
        if idx.ell:
            j = idx.shift_t(-1)
            c[j] = c.get(j, 0) - v * idx.ell
    return ParPoly(P.dim, c)


def multiply(P: ParPoly, Q: ParPoly, max_wdeg: int | None = None) -> ParPoly:
    """Product of two polynomials, optionally dropping terms above max_wdeg."""
    P._check(Q)
    c = {}
    for i, a in P._c.items():
        wi = i.wdeg
        for j, b in Q._c.items():
            if max_wdeg is not None and wi + j.wdeg > max_wdeg:
                continue
            idx = ParIndex(tuple(x + y for x, y in zip(i.m, j.m)), i.ell + j.ell)
            c[idx] = c.get(idx, 0) + a * b
    return ParPoly(P.dim, c)


def rescale(P: ParPoly, r) -> ParPoly:
    """Q(x, t) = P(x/r, t/r^2)."""
    r = _coerce(r)
    if r <= 0:
        raise ValueError(f"scale must be positive, got {r}")
    c = {}
    for idx, v in P._c.items():
        c[idx] = v / r ** idx.wdeg
    return ParPoly(P.dim, c, P.degree_cap)


def grad(P: ParPoly) -> list:
    return P.grad()


def dt(P: ParPoly) -> ParPoly:
    return P.dt()


def eval_poly(P: ParPoly, x, t):
    return P.eval(x, t)


def inner_grad(P: ParPoly, Q: ParPoly) -> ParPoly:
    """<DP, DQ>."""
    out = ParPoly.zero(P.dim)
    for a, b in zip(P.grad(), Q.grad()):
        out = out + multiply(a, b)
    return out


# -- serialization

def _frac_parts(v):
    if isinstance(v, float):
        num, den = v.as_integer_ratio()
    else:
        num, den = v.numerator, v.denominator
    return int(num), int(den)


def to_records(P: ParPoly) -> list:
    recs = []
    for idx, v in P.terms():
        num, den = _frac_parts(v)
        recs.append({"m": list(idx.m), "ell": idx.ell, "num": num, "den": den})
    return recs


def from_records(records, dim: int | None = None) -> ParPoly:
    records = list(records)
    if dim is None:
        if not records:
            raise ValueError("dimension required for an empty record list")
        dim = len(records[0]["m"])
    c = {}
    for r in records:
        if r["den"] == 0:
            raise ValueError("zero denominator")
        idx = ParIndex(tuple(r["m"]), r["ell"])
        if idx in c:
            raise ValueError(f"duplicate index {idx}")
        c[idx] = Fraction(int(r["num"]), int(r["den"]))
    return ParPoly(dim, c)


def dumps(P: ParPoly) -> str:
    return json.dumps({"dim": P.dim, "terms": to_records(P)}, sort_keys=True)


def loads(s: str) -> ParPoly:
    d = json.loads(s)
    return from_records(d["terms"], d["dim"])


def to_string(P: ParPoly) -> str:
    """Readable rendering, e.g. ``t + 1/6*x2^2``."""
    if P.is_zero():
        return "0"
    parts = []
    for idx, v in P.terms():
        fac = []
        for a, e in enumerate(idx.m):
            if e:
                fac.append(f"x{a + 1}" + (f"^{e}" if e > 1 else ""))
        if idx.ell:
            fac.append("t" + (f"^{idx.ell}" if idx.ell > 1 else ""))
        mono = "*".join(fac)
        if not mono:
            parts.append(str(v))
        elif v == 1:
            parts.append(mono)
        elif v == -1:
            parts.append("-" + mono)
        else:
            parts.append(f"{v}*{mono}")
    s = " + ".join(parts)
    return s.replace("+ -", "- ")
