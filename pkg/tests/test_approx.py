import random
from fractions import Fraction

import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from parharnack.approx import (DegreeCapError, SourceMap, TriangularityError, UModel, VCModel,
                               build_source_map, build_vc_source_map, caloric_basis, expand_source,
                               free_indices, identity_A, is_approximating, principal, project,
                               random_instance, solve_approximating, vc_approximating,
                               verify_random_instance)
from parharnack.parpoly import ParIndex, ParPoly, heat_apply, indices_up_to, multiply, rescale


def X(n, i):
    return ParPoly.var(n, i)


def T(n):
    return ParPoly.time(n)


def as_dict(P):
    return {(i.m, i.ell): v for i, v in P}


fracs = st.fractions(min_value=Fraction(-1, 4), max_value=Fraction(1, 4), max_denominator=12)


@st.composite
def instances(draw, max_n=3, max_k=5):
    n = draw(st.integers(1, max_n))
    k = draw(st.integers(1, max_k))
    high = indices_up_to(n, k, min_wdeg=2)
    p1 = draw(st.lists(st.sampled_from(high), max_size=4, unique=True)) if high else []
    P1 = ParPoly(n, {i: draw(fracs) for i in p1})
    low = indices_up_to(n, k - 1)
    d = ParPoly(n, {i: draw(fracs) for i in draw(st.lists(st.sampled_from(low), max_size=4, unique=True))})
    free = {i: draw(fracs) for i in free_indices(n, k)}
    return n, k, UModel(P1), d, free


# -- expand_source

def test_expand_flat_constant():
    R, W = expand_source(UModel.flat(2), ParPoly.constant(2, 1), 2)
    assert R.is_zero() and W.is_zero()


def test_expand_flat_xn():
    R, W = expand_source(UModel.flat(2), X(2, 1), 1)
    assert R == ParPoly.constant(2, 2) and W.is_zero()


def test_expand_p1_x1_squared():
    n = 2
    um = UModel(X(n, 0) * X(n, 0))
    R, W = expand_source(um, X(n, 0), 3)
    # heat((x2 + x1^2) x1) = heat(x1^3) = 6 x1; the split keeps it in R
    want = oracles.truncate(oracles.heat(oracles.mul(oracles.add(oracles.xn(n), as_dict(um.P1)),
                                                     as_dict(X(n, 0)))), 2)
    assert as_dict(R) == want
    assert R == X(n, 0).scale(6)
    assert W.is_zero()


def test_expand_degree_cap():
    with pytest.raises(DegreeCapError):
        expand_source(UModel.flat(1), T(1) * T(1), 3)


@settings(max_examples=40, deadline=None)
@given(instances(max_k=4))
def test_expand_split(inst):
    n, k, um, d, free = inst
    P = ParPoly(n, free)
    R, W = expand_source(um, P, k)
    assert R + W == heat_apply(multiply(um.u_poly(), P))
    assert R.is_zero() or R.wdeg <= k - 1
    assert W.is_zero() or W.min_wdeg >= k


# -- source map

def test_source_map_flat_empty():
    assert build_source_map(UModel.flat(3), 4).entries == {}


def test_source_map_entry_x1xn():
    n = 2
    sm = build_source_map(UModel(X(n, 0) * X(n, 1)), 3)
    assert sm.entry(ParIndex((1, 0), 0)) == X(n, 1).scale(2)


@settings(max_examples=40, deadline=None)
@given(instances())
def test_source_map_degree_condition(inst):
    n, k, um, d, free = inst
    sm = build_source_map(um, k)
    assert sm.violations() == []
    for idx, e in sm.entries.items():
        assert e.min_wdeg >= idx.wdeg


@settings(max_examples=30, deadline=None)
@given(instances(max_k=4))
def test_source_map_reproduces_expansion(inst):
    n, k, um, d, free = inst
    P = ParPoly(n, {i: Fraction(j % 5 - 2, 3) for j, i in enumerate(indices_up_to(n, k))})
    R, _ = expand_source(um, P, k)
    assert R == principal(P, k) + build_source_map(um, k).contribution(P)


def test_source_map_rejects_high_entry():
    with pytest.raises(ValueError):
        SourceMap(1, 2, {ParIndex((0,), 0): T(1)})


def test_source_map_records_round_trip():
    sm = build_source_map(UModel(X(2, 0) * X(2, 1) + T(2).scale(Fraction(1, 8))), 4)
    back = SourceMap.from_records(2, 4, sm.to_records())
    assert back.entries == sm.entries


# -- solver examples

def test_solve_affine_k1():
    n = 3
    free = {i: (1 if i.wdeg == 0 else 0) for i in free_indices(n, 1)}
    P = solve_approximating(SourceMap(n, 1), None, free, 1)
    assert P == ParPoly.constant(n, 1)
    assert P[ParIndex((0, 0, 1), 0)] == 0


def test_solve_t_plus_xn2_over_6():
    P = solve_approximating(SourceMap(1, 2), None, {ParIndex((0,), 1): 1}, 2)
    assert P == T(1) + (X(1, 0) * X(1, 0)).scale(Fraction(1, 6))
    assert heat_apply(multiply(X(1, 0), P)).is_zero()


def test_solve_g_equals_two():
    n = 2
    P = solve_approximating(SourceMap(n, 1), ParPoly.constant(n, 2), {}, 1)
    assert P[ParIndex((0, 1), 0)] == 1


def test_solve_rejects_non_free_assignment():
    with pytest.raises(ValueError):
        solve_approximating(SourceMap(1, 2), None, {ParIndex((1,), 0): 1}, 2)


def test_solve_rejects_high_d():
    with pytest.raises(DegreeCapError):
        solve_approximating(SourceMap(1, 2), X(1, 0) * X(1, 0), {}, 2)


def test_triangularity_violation_rejected():
    # monomial of weighted degree 2 feeding the constant row
    bad = SourceMap(1, 3, {ParIndex((2,), 0): ParPoly.constant(1, 1)})
    with pytest.raises(TriangularityError):
        solve_approximating(bad, None, {}, 3)


def test_caps():
    with pytest.raises(ValueError):
        caloric_basis(5, 2)
    with pytest.raises(ValueError):
        caloric_basis(1, 13)


def test_umodel_invariants():
    with pytest.raises(ValueError):
        UModel(X(2, 0))
    with pytest.raises(ValueError):
        UModel(X(1, 0) * X(1, 0), Fraction(1, 2))
    assert UModel(T(1).scale(Fraction(1, 3))).delta_bound == Fraction(1, 3)


@settings(max_examples=60, deadline=None)
@given(instances())
def test_exact_annihilation(inst):
    n, k, um, d, free = inst
    P = solve_approximating(build_source_map(um, k), d, free, k)
    # independent check with the dict oracle
    lhs = oracles.truncate(oracles.heat(oracles.mul(oracles.add(oracles.xn(n), as_dict(um.P1)), as_dict(P))), k - 1)
    assert lhs == as_dict(d)
    assert all(P[i] == v for i, v in free.items())
    assert is_approximating(um, P, k, d)


@settings(max_examples=30, deadline=None)
@given(instances())
def test_uniqueness(inst):
    n, k, um, d, free = inst
    sm = build_source_map(um, k)
    assert solve_approximating(sm, d, free, k) == solve_approximating(sm, d, dict(free), k)


@settings(max_examples=30, deadline=None)
@given(instances())
def test_elimination_order(inst):
    n, k, um, d, free = inst
    log = []
    solve_approximating(build_source_map(um, k), d, free, k, log=log)
    for idx, deps in log:
        for j in deps:
            assert j.wdeg < idx.wdeg or (j.wdeg == idx.wdeg and j.mn < idx.mn)


@settings(max_examples=30, deadline=None)
@given(instances(max_k=4))
def test_projection(inst):
    n, k, um, d, free = inst
    sm = build_source_map(um, k)
    P = ParPoly(n, {i: Fraction((3 * j) % 7 - 3, 4) for j, i in enumerate(indices_up_to(n, k))})
    Q = project(sm, P, d)
    assert project(sm, Q, d) == Q
    assert is_approximating(um, Q, k, d)


@settings(max_examples=30, deadline=None)
@given(instances(max_k=4), st.fractions(min_value=Fraction(1, 5), max_value=3, max_denominator=5))
def test_rescale_commutes(inst, r):
    n, k, um, d, free = inst
    sm = build_source_map(um, k)
    # u_r(y) = u(r y, r^2 s) / r has P1_r = P1(r .) / r
    um_r = UModel(rescale(um.P1, 1 / r).scale(1 / r))
    sm_r = build_source_map(um_r, k)
    assert sm_r.entries == sm.rescaled(r).entries
    # P(r y) solves the rescaled problem with d_r(y) = r d(r y)
    P = solve_approximating(sm, d, free, k)
    P_r = rescale(P, 1 / r)
    d_r = rescale(d, 1 / r).scale(r)
    free_r = {i: v for i, v in P_r if i.mn == 0}
    assert solve_approximating(sm.rescaled(r), d_r, free_r, k) == P_r


# -- caloric basis

def test_basis_examples():
    assert caloric_basis(1, 2) == [ParPoly.constant(1, 1), T(1) + (X(1, 0) * X(1, 0)).scale(Fraction(1, 6))]
    assert caloric_basis(2, 1) == [ParPoly.constant(2, 1), X(2, 0)]
    for n in (1, 2, 3):
        assert caloric_basis(n, 0) == [ParPoly.constant(n, 1)]


@pytest.mark.parametrize("n,k", [(1, 4), (2, 3), (2, 4), (3, 3)])
def test_basis_dimension_rank(n, k):
    basis = caloric_basis(n, k)
    count = sum(1 for m, ell in oracles.monomials(n, k) if m[-1] == 0)
    assert len(basis) == count
    M, _, cols = oracles.system_matrix(n, k)
    assert len(cols) - oracles.rank(M) == count
    for Q in basis:
        assert oracles.truncate(oracles.heat(oracles.mul(oracles.xn(n), as_dict(Q))), k - 1) == {}


def test_rank_with_perturbation():
    n, k = 2, 4
    p1 = {((2, 0), 0): Fraction(1, 4), ((1, 1), 1): Fraction(-1, 8)}
    M, _, cols = oracles.system_matrix(n, k, p1)
    assert len(cols) - oracles.rank(M) == len(free_indices(n, k))


# -- variable coefficients

def test_vc_reduces_to_heat():
    n, k = 2, 4
    um = UModel(X(n, 0) * X(n, 1).scale(Fraction(1, 4)))
    model = VCModel(identity_A(n), None, um, ParPoly.zero(n))
    sm, corr = build_vc_source_map(model, k)
    assert corr == {}
    assert sm.entries == build_source_map(um, k).entries


def test_vc_g_two():
    n = 2
    model = VCModel(identity_A(n), None, UModel.flat(n), ParPoly.constant(n, 2))
    P = vc_approximating(model, 1)
    assert P[ParIndex((0, 1), 0)] == 1


def test_vc_caps():
    n = 1
    A = ((ParPoly.constant(n, 1) + T(n),),)
    model = VCModel(A, None, UModel.flat(n), ParPoly.zero(n))
    with pytest.raises(DegreeCapError):
        build_vc_source_map(model, 2)


def test_vc_rejects_bad_A():
    n = 2
    z, one = ParPoly.zero(n), ParPoly.constant(n, 1)
    with pytest.raises(ValueError):
        VCModel(((one.scale(2), z), (z, one)), None, UModel.flat(n), z)
    with pytest.raises(ValueError):
        VCModel(((one, X(n, 0)), (z, one)), None, UModel.flat(n), z)


def _sympy_L(A, b, c, w, xs, t):
    n = len(xs)
    out = -sp.diff(w, t) + c * w
    for i in range(n):
        out += b[i] * sp.diff(w, xs[i])
        for j in range(n):
            out += A[i][j] * sp.diff(w, xs[i], xs[j])
    return sp.expand(out)


def _sympy_truncate(expr, xs, t, k):
    poly = sp.Poly(expr, *xs, t)
    keep = sum((coef * sp.prod([x ** e for x, e in zip(xs, mon[:-1])]) * t ** mon[-1]
                for mon, coef in poly.terms() if sum(mon[:-1]) + 2 * mon[-1] <= k), sp.Integer(0))
    return sp.expand(keep)


def _to_sympy(P, xs, t):
    return sum((sp.Rational(v.numerator, v.denominator) * sp.prod([x ** e for x, e in zip(xs, i.m)]) * t ** i.ell
                for i, v in P), sp.Integer(0))


def test_vc_symbolic_diag():
    n, k = 2, 2
    eps = Fraction(1, 3)
    one, z = ParPoly.constant(n, 1), ParPoly.zero(n)
    A = ((one + X(n, 0).scale(eps), z), (z, one + X(n, 1).scale(eps)))
    um = UModel((X(n, 0) * X(n, 0)).scale(Fraction(1, 4)))
    model = VCModel(A, None, um, z)
    sm, _ = build_vc_source_map(model, k)
    xs = sp.symbols("x1 x2")
    t = sp.Symbol("t")
    e = sp.Rational(1, 3)
    A_s = [[1 + e * xs[0], 0], [0, 1 + e * xs[1]]]
    u_s = xs[1] + xs[0] ** 2 / 4
    for P in (X(n, 0), X(n, 1), T(n), X(n, 0) * X(n, 1)):
        lhs = principal(P, k) + sm.contribution(P)
        want = _sympy_truncate(_sympy_L(A_s, [0, 0], 0, u_s * _to_sympy(P, xs, t), xs, t), xs, t, k - 1)
        assert sp.expand(_to_sympy(lhs, xs, t) - want) == 0


@pytest.mark.parametrize("seed", range(5))
def test_vc_solution_matches_g(seed):
    rng = random.Random(seed)
    n, k = 2, 3
    q = lambda: Fraction(rng.randint(-3, 3), 12)  # noqa: E731
    one, z = ParPoly.constant(n, 1), ParPoly.zero(n)
    a12 = X(n, 0).scale(q()) + T(n).scale(q())
    A = ((one + X(n, 1).scale(q()), a12), (a12, one + (X(n, 0) * X(n, 1)).scale(q())))
    b = (X(n, 0).scale(q()), ParPoly.constant(n, q()))
    c = ParPoly.constant(n, q())
    um = UModel((X(n, 1) * X(n, 1)).scale(q()) + T(n).scale(q()))
    g = ParPoly.constant(n, 2) + X(n, 0).scale(q()) + (X(n, 1) * X(n, 1)).scale(q())
    model = VCModel(A, b, um, g, c)
    P = vc_approximating(model, k, {ParIndex((1, 0), 0): q()})
    assert model.apply(multiply(um.u_poly(), P)).truncate(k - 1) == g


# -- random instances

def test_random_instance_bounds():
    rng = random.Random(3)
    for _ in range(20):
        um, d, free = random_instance(rng, 2, 4)
        assert um.P1.is_zero() or (um.P1.min_wdeg >= 2 and um.P1.wdeg <= 4)
        assert um.P1.norm() <= Fraction(1, 4)


def test_verify_random_instance():
    rng = random.Random(0)
    for _ in range(10):
        ok, info = verify_random_instance(rng, 3, 4)
        assert ok
