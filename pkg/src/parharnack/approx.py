"""Approximating polynomials for u P, where u = x_n + P1 + (higher order).

For a polynomial P of weighted degree <= k the source (Delta - d_t)(u P) is
split into the part of weighted degree <= k-1 (which must match a prescribed
polynomial d) and the rest.  Writing out the low part coefficientwise gives a
linear system in the coefficients a_{m,l} of P.  Coefficients with m_n = 0 are
free; every other coefficient is determined by the row of the monomial
x^{m - e_n} t^l, whose diagonal entry is m_n (m_n + 1).  Processing indices by
weighted degree and then by m_n makes the system triangular, and the solver
below performs exactly that elimination in exact arithmetic.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .parpoly import (ParIndex, ParPoly, heat_apply, indices_up_to, multiply,
                      from_records, to_records)

MAX_K = 12
MAX_DIM = 4


class TriangularityError(ValueError):
    """The coefficient system cannot be eliminated in induction order."""


class DegreeCapError(ValueError):
    pass


def _check_caps(n, k):
    if not 1 <= n <= MAX_DIM:
        raise ValueError(f"dimension {n} outside 1..{MAX_DIM}")
    if not 0 <= k <= MAX_K:
        raise ValueError(f"order {k} outside 0..{MAX_K}")


def x_n(dim) -> ParPoly:
    return ParPoly.var(dim, dim - 1)


@dataclass(frozen=True)
class UModel:
    """Taylor data of u = x_n + P1 + z with ||P1|| <= delta_bound."""

    P1: ParPoly
    delta_bound: Fraction | None = None

    def __post_init__(self):
        low = [i for i, _ in self.P1 if i.wdeg <= 1]
        if low:
            raise ValueError(f"P1 may not contain terms of weighted degree <= 1 (found {low[0]})")
        if self.delta_bound is None:
            object.__setattr__(self, "delta_bound", self.P1.norm())
        elif self.P1.norm() > self.delta_bound:
            raise ValueError(f"norm(P1) = {self.P1.norm()} exceeds delta_bound = {self.delta_bound}")

    @classmethod
    def flat(cls, dim):
        return cls(ParPoly.zero(dim), Fraction(0))

    @property
    def dim(self):
        return self.P1.dim

    def u_poly(self) -> ParPoly:
        return x_n(self.dim) + self.P1


@dataclass(frozen=True)
class SourceMap:
    """Per-monomial contributions to the low-degree source.

    ``entries[idx]`` is the polynomial sum_{q,kappa} c^{idx}_{q,kappa} x^q t^kappa
    of weighted degree <= k-1.  The principal part (Delta - d_t)(x_n x^m t^l)
    is not stored; it is the same for every operator considered here.
    """

    dim: int
    k: int
    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        _check_caps(self.dim, self.k)
        for idx, e in self.entries.items():
            if e.dim != self.dim:
                raise ValueError("entry dimension mismatch")
            if not e.is_zero() and e.wdeg > self.k - 1:
                raise ValueError(f"entry for {idx} has weighted degree {e.wdeg} > k-1")

    def entry(self, idx: ParIndex) -> ParPoly:
        return self.entries.get(idx, ParPoly.zero(self.dim))

    def violations(self):
        """Entries with a term of weighted degree below the source monomial."""
        bad = []
        for idx, e in self.entries.items():
            for q, v in e:
                if q.wdeg < idx.wdeg:
                    bad.append((idx, q, v))
        return bad

    def check_triangular(self):
        bad = self.violations()
        if bad:
            idx, q, v = bad[0]
            raise TriangularityError(
                f"monomial {idx} (wdeg {idx.wdeg}) feeds row {q} (wdeg {q.wdeg}) with coefficient {v}; "
                f"{len(bad)} offending entries")

    def contribution(self, P: ParPoly) -> ParPoly:
        out = ParPoly.zero(self.dim)
        for idx, a in P:
            e = self.entries.get(idx)
            if e is not None:
                out = out + e.scale(a)
        return out

    def rescaled(self, r) -> "SourceMap":
        """Map for the problem in coordinates (x/r, t/r^2): c -> r^{|q|+2kappa+1-(|m|+2l)} c."""
        r = Fraction(r) if not isinstance(r, float) else r
        new = {}
        for idx, e in self.entries.items():
            new[idx] = ParPoly(self.dim, {q: v * r ** (q.wdeg + 1 - idx.wdeg) for q, v in e})
        return SourceMap(self.dim, self.k, new)

    def to_records(self):
        return [{"m": list(i.m), "ell": i.ell, "entry": to_records(e)}
                for i, e in sorted(self.entries.items()) if not e.is_zero()]

    @classmethod
    def from_records(cls, dim, k, records):
        return cls(dim, k, {ParIndex(tuple(r["m"]), r["ell"]): from_records(r["entry"], dim)
                            for r in records})


def principal(P: ParPoly, k: int) -> ParPoly:
    """Weighted degree <= k-1 part of (Delta - d_t)(x_n P)."""
    return heat_apply(multiply(x_n(P.dim), P)).truncate(k - 1)


def expand_source(u_model: UModel, P: ParPoly, k: int):
    """Split (Delta - d_t)((x_n + P1) P) into (R, W) at weighted degree k."""
    if P.wdeg > k:
        raise DegreeCapError(f"P has weighted degree {P.wdeg} > k = {k}")
    full = heat_apply(multiply(u_model.u_poly(), P))
    return full.split(k)


def build_source_map(u_model: UModel, k: int) -> SourceMap:
    """Source contributions of P1 x^m t^l for every monomial of weighted degree <= k."""
    n = u_model.dim
    _check_caps(n, k)
    entries = {}
    if not u_model.P1.is_zero():
        for idx in indices_up_to(n, k):
            mono = ParPoly(n, {idx: 1})
            # heat lowers weighted degree by at most two
            prod = multiply(u_model.P1, mono, max_wdeg=k + 1)
            e = heat_apply(prod).truncate(k - 1)
            if not e.is_zero():
                entries[idx] = e
    return SourceMap(n, k, entries)


def free_indices(n: int, k: int) -> list:
    return [i for i in indices_up_to(n, k) if i.mn == 0]


def _principal_column(idx: ParIndex, k: int) -> dict:
    """Rows hit by (Delta - d_t)(x_n x^m t^l), as {row index: coefficient}."""
    n = idx.dim
    col = {}
    m, ell = idx.m, idx.ell
    if m[-1] >= 1:
        col[idx.shift(n - 1, -1)] = Fraction(m[-1] * (m[-1] + 1))
    for i in range(n - 1):
        if m[i] >= 2:
            q = ParIndex(tuple(e - 2 if a == i else e + 1 if a == n - 1 else e
                               for a, e in enumerate(m)), ell)
            col[q] = col.get(q, 0) + Fraction(m[i] * (m[i] - 1))
    if ell:
        q = ParIndex(m[:-1] + (m[-1] + 1,), ell - 1)
        col[q] = col.get(q, 0) - ell
    return {q: v for q, v in col.items() if q.wdeg <= k - 1 and v != 0}


def _rows(source: SourceMap, k: int):
    """Transpose principal + source columns into {row: {unknown: coefficient}}."""
    rows = {}
    for idx in indices_up_to(source.dim, k):
        col = _principal_column(idx, k)
        for q, v in source.entry(idx):
            col[q] = col.get(q, 0) + v
        for q, v in col.items():
            if v != 0:
                rows.setdefault(q, {})[idx] = v
    return rows


def solve_approximating(source: SourceMap, d: ParPoly | None = None, free=None, k: int | None = None,
                        log: list | None = None) -> ParPoly:
    """Coefficients of P with (Delta - d_t)(u P) = d up to weighted degree k-1.

    ``free`` maps indices with m_n = 0 to values (missing ones are 0).  If
    ``log`` is a list, each determined index is appended together with the
    indices its value depended on.
    """
    k = source.k if k is None else k
    n = source.dim
    _check_caps(n, k)
    if k != source.k:
        raise ValueError(f"source map built for k={source.k}, asked for k={k}")
    d = ParPoly.zero(n) if d is None else d
    if d.dim != n:
        raise ValueError("dimension mismatch between d and source map")
    if not d.is_zero() and d.wdeg > k - 1:
        raise DegreeCapError(f"d has weighted degree {d.wdeg} > k-1 = {k - 1}")
    free = dict(free or {})
    for idx in list(free):
        if not isinstance(idx, ParIndex):
            free[ParIndex(tuple(idx[0]), idx[1])] = free.pop(idx)
    for idx in free:
        if idx.dim != n or idx.mn != 0 or idx.wdeg > k:
            raise ValueError(f"{idx} is not a free index for n={n}, k={k}")
    source.check_triangular()

    rows = _rows(source, k)
    a = {}
    for idx in indices_up_to(n, k):
        if idx.mn == 0:
            a[idx] = Fraction(free.get(idx, 0)) if not isinstance(free.get(idx, 0), float) else free[idx]
            continue
        q = idx.shift(n - 1, -1)
        row = rows.get(q, {})
        pivot = row.get(idx, 0)
        if pivot == 0:
            raise TriangularityError(f"zero pivot for {idx} in row {q}")
        acc = d[q]
        deps = []
        for j, cj in row.items():
            if j == idx:
                continue
            earlier = j.wdeg < idx.wdeg or (j.wdeg == idx.wdeg and j.mn < idx.mn)
            if not earlier or j not in a:
                raise TriangularityError(
                    f"row {q}: unknown {j} is not determined before {idx}")
            acc = acc - cj * a[j]
            deps.append(j)
        a[idx] = acc / pivot
        if log is not None:
            log.append((idx, tuple(deps)))
    return ParPoly(n, a, degree_cap=k)


def caloric_basis(n: int, k: int) -> list:
    """One polynomial Q per free index with (Delta - d_t)(x_n Q) = 0 up to degree k-1."""
    _check_caps(n, k)
    sm = SourceMap(n, k, {})
    return [solve_approximating(sm, None, {idx: 1}, k) for idx in free_indices(n, k)]


def is_approximating(u_model: UModel, P: ParPoly, k: int, d: ParPoly | None = None) -> bool:
    R, _ = expand_source(u_model, P, k)
    d = ParPoly.zero(P.dim) if d is None else d
    return R == d


def project(source: SourceMap, P: ParPoly, d: ParPoly | None = None) -> ParPoly:
    """Approximating polynomial sharing the free (m_n = 0) coefficients of P."""
    free = {i: v for i, v in P if i.mn == 0}
    return solve_approximating(source, d, free, source.k)


# -- variable coefficients

@dataclass(frozen=True)
class VCModel:
    """Taylor polynomials of A, b, c, g and u for L w = Tr(A D^2 w) + b.Dw + c w - w_t."""

    A_taylor: tuple
    b_taylor: tuple
    u_model: UModel
    g_taylor: ParPoly
    c_taylor: ParPoly | None = None

    def __post_init__(self):
        n = self.u_model.dim
        A = tuple(tuple(row) for row in self.A_taylor)
        if len(A) != n or any(len(row) != n for row in A):
            raise ValueError("A_taylor must be n x n")
        b = tuple(self.b_taylor) if self.b_taylor is not None else tuple(ParPoly.zero(n) for _ in range(n))
        if len(b) != n:
            raise ValueError("b_taylor must have n entries")
        c = self.c_taylor if self.c_taylor is not None else ParPoly.zero(n)
        origin = ((0,) * n, 0)
        for i in range(n):
            for j in range(n):
                if A[i][j][origin] != (1 if i == j else 0):
                    raise ValueError("A(0,0) must be the identity")
                if A[i][j] != A[j][i]:
                    raise ValueError("A_taylor must be symmetric")
        object.__setattr__(self, "A_taylor", A)
        object.__setattr__(self, "b_taylor", b)
        object.__setattr__(self, "c_taylor", c)

    @property
    def dim(self):
        return self.u_model.dim

    def check_caps(self, k):
        def over(p, cap):
            return not p.is_zero() and p.wdeg > cap
        for row in self.A_taylor:
            for a in row:
                if over(a, k - 1):
                    raise DegreeCapError(f"A entry of weighted degree {a.wdeg} > k-1 = {k - 1}")
        for p in list(self.b_taylor) + [self.c_taylor]:
            if over(p, k - 2):
                raise DegreeCapError(f"b/c entry of weighted degree {p.wdeg} > k-2 = {k - 2}")
        if over(self.g_taylor, k - 1):
            raise DegreeCapError(f"g of weighted degree {self.g_taylor.wdeg} > k-1 = {k - 1}")
        if over(self.u_model.P1, k):
            raise DegreeCapError(f"P1 of weighted degree {self.u_model.P1.wdeg} > k = {k}")

    def apply(self, w: ParPoly, max_wdeg: int | None = None) -> ParPoly:
        """L w with every field replaced by its Taylor polynomial."""
        n = self.dim
        D = w.grad()
        out = -w.dt()
        for i in range(n):
            Di = D[i]
            for j in range(n):
                a = self.A_taylor[i][j]
                if not a.is_zero():
                    out = out + multiply(a, Di.partial(j), max_wdeg)
            if not self.b_taylor[i].is_zero():
                out = out + multiply(self.b_taylor[i], Di, max_wdeg)
        if not self.c_taylor.is_zero():
            out = out + multiply(self.c_taylor, w, max_wdeg)
        return out


def identity_A(n):
    return tuple(tuple(ParPoly.constant(n, 1 if i == j else 0) for j in range(n)) for i in range(n))


def build_vc_source_map(model: VCModel, k: int):
    """Source map for L in place of the heat operator.

    Returns the map together with ``correction``: for every monomial the
    difference from the heat-operator entry built from the same u.  The
    correction vanishes identically when A = I and b = c = 0.
    """
    n = model.dim
    _check_caps(n, k)
    model.check_caps(k)
    u = model.u_model.u_poly()
    heat_map = build_source_map(model.u_model, k)
    xn = x_n(n)
    entries, correction = {}, {}
    for idx in indices_up_to(n, k):
        mono = ParPoly(n, {idx: 1})
        lu = model.apply(multiply(u, mono, max_wdeg=k + 1)).truncate(k - 1)
        e = lu - heat_apply(multiply(xn, mono)).truncate(k - 1)
        if not e.is_zero():
            entries[idx] = e
        corr = e - heat_map.entry(idx)
        if not corr.is_zero():
            correction[idx] = corr
    return SourceMap(n, k, entries), correction


def vc_approximating(model: VCModel, k: int, free=None) -> ParPoly:
    """Approximating polynomial for L(uP) = g, matching g's Taylor polynomial."""
    sm, _ = build_vc_source_map(model, k)
    return solve_approximating(sm, model.g_taylor.truncate(k - 1), free, k)


# -- random instances

def _rand_frac(rng, bound, den=12):
    return Fraction(rng.randint(-den, den), den) * bound


def random_instance(rng, n, k, bound=Fraction(1, 4)):
    """Random (UModel, d, free) with P1 of weighted degree in [2, k] and |coefficients| <= bound."""
    idx_p1 = indices_up_to(n, k, min_wdeg=2)
    P1 = ParPoly(n, {i: _rand_frac(rng, bound) for i in idx_p1 if rng.random() < 0.5})
    d = ParPoly(n, {i: _rand_frac(rng, bound) for i in indices_up_to(n, k - 1) if rng.random() < 0.5})
    free = {i: _rand_frac(rng, bound) for i in free_indices(n, k)}
    return UModel(P1, bound), d, free


def verify_random_instance(rng, n, k, bound=Fraction(1, 4)):
    """Solve a random instance and check the annihilation identity exactly."""
    um, d, free = random_instance(rng, n, k, bound)
    P = solve_approximating(build_source_map(um, k), d, free, k)
    R, _ = expand_source(um, P, k)
    ok = R == d and all(P[i] == v for i, v in free.items())
    return ok, {"p1_terms": len(um.P1), "P": P, "u_model": um, "d": d}
