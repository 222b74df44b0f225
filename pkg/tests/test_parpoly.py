from fractions import Fraction

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from parharnack.parpoly import (HolderClassParams, ParIndex, ParPoly, dt, dumps, eval_poly, from_records,
                                grad, heat_apply, indices_up_to, inner_grad, loads, multiply, rescale,
                                to_records, to_string)


def X(n, i):
    return ParPoly.var(n, i)


def T(n):
    return ParPoly.time(n)


# -- sympy oracle: independent symbolic differentiation

def to_sympy(P):
    xs = sp.symbols(f"x1:{P.dim + 1}")
    t = sp.Symbol("t")
    expr = sum((sp.Rational(v.numerator, v.denominator) * sp.prod([x ** e for x, e in zip(xs, i.m)]) * t ** i.ell
                for i, v in P), sp.Integer(0))
    return expr, xs, t


def sympy_heat(P):
    e, xs, t = to_sympy(P)
    return sp.expand(sum(sp.diff(e, x, 2) for x in xs) - sp.diff(e, t))


fracs = st.fractions(min_value=-3, max_value=3, max_denominator=7)


@st.composite
def polys(draw, n=None, max_w=6):
    n = draw(st.integers(1, 3)) if n is None else n
    idx = indices_up_to(n, max_w)
    chosen = draw(st.lists(st.sampled_from(idx), max_size=6, unique=True))
    return ParPoly(n, {i: draw(fracs) for i in chosen})


# -- index and ordering

def test_index_weighted_degree():
    i = ParIndex((1, 2, 0), 3)
    assert i.wdeg == 9
    assert i.mn == 0


def test_order_graded_then_mn():
    idx = indices_up_to(2, 4)
    keys = [(i.wdeg, i.mn) for i in idx]
    assert keys == sorted(keys)
    assert len(set(idx)) == len(idx)


def test_order_is_strict_total():
    idx = indices_up_to(3, 5)
    for a, b in zip(idx, idx[1:]):
        assert a < b and not b < a


def test_count_indices():
    # n=1: pairs (m, l) with m + 2l <= 4 -> 5 + 3 + 1
    assert len(indices_up_to(1, 4)) == 9


def test_negative_exponent_rejected():
    with pytest.raises(ValueError):
        ParIndex((-1,), 0)


def test_holder_params():
    HolderClassParams(2, Fraction(1, 2))
    for a in (0, 1, Fraction(3, 2)):
        with pytest.raises(ValueError):
            HolderClassParams(1, a)


# -- canonical form and norm

def test_zero_coefficients_dropped():
    P = ParPoly(1, {ParIndex((1,), 0): 0, ParIndex((0,), 1): Fraction(2, 3)})
    assert len(P) == 1
    assert P.norm() == Fraction(2, 3)
    assert ParPoly.zero(2).norm() == 0


def test_degree_cap_enforced():
    with pytest.raises(ValueError):
        ParPoly(1, {ParIndex((0,), 2): 1}, degree_cap=3)


# -- heat_apply examples

def test_heat_linear():
    assert heat_apply(X(3, 2)).is_zero()


def test_heat_caloric_quadratic():
    assert heat_apply(X(2, 0) * X(2, 0) + T(2).scale(2)).is_zero()


def test_heat_x1_xn2_t():
    n = 2
    P = X(n, 0) * X(n, 1) * X(n, 1) * T(n)
    want = (X(n, 0) * T(n)).scale(2) - X(n, 0) * X(n, 1) * X(n, 1)
    assert heat_apply(P) == want
    assert to_string(heat_apply(P)) == "2*x1*t - x1*x2^2"


# -- multiply, grad, dt, rescale, eval

def test_multiply_example():
    n = 2
    Q = T(n) + (X(n, 1) * X(n, 1)).scale(Fraction(1, 6))
    got = multiply(X(n, 1), Q)
    want = X(n, 1) * T(n) + (X(n, 1) * X(n, 1) * X(n, 1)).scale(Fraction(1, 6))
    assert got == want
    rng = np.random.default_rng(1)
    for _ in range(3):
        x = [Fraction(int(v), 7) for v in rng.integers(-9, 9, n)]
        t = Fraction(int(rng.integers(-9, 9)), 5)
        assert eval_poly(got, x, t) == eval_poly(X(n, 1), x, t) * eval_poly(Q, x, t)


def test_multiply_identity_and_zero():
    P = X(2, 0) + T(2)
    assert multiply(P, ParPoly.constant(2, 1)) == P
    assert multiply(P, ParPoly.zero(2)).is_zero()


def test_multiply_dim_mismatch():
    with pytest.raises(ValueError):
        multiply(X(1, 0), X(2, 0))


def test_grad_dt():
    n = 3
    g = grad(X(n, 0) * X(n, 2))
    assert g == [X(n, 2), ParPoly.zero(n), X(n, 0)]
    assert dt(T(n) * T(n)) == T(n).scale(2)
    assert all(p.is_zero() for p in grad(T(n)))


def test_rescale_examples():
    assert rescale(X(1, 0) * X(1, 0), Fraction(1, 2)) == (X(1, 0) * X(1, 0)).scale(4)
    assert rescale(T(1), Fraction(1, 2)) == T(1).scale(4)
    P = X(2, 0) + T(2)
    assert rescale(P, 1) == P
    with pytest.raises(ValueError):
        rescale(P, 0)


def test_eval_examples():
    n = 3
    e_n = (0, 0, 1)
    assert eval_poly(X(n, 2) * T(n), e_n, -1) == -1
    assert eval_poly(ParPoly.constant(n, 1), (5, 6, 7), 3) == 1
    Q = T(n) + (X(n, 2) * X(n, 2)).scale(Fraction(1, 6))
    assert eval_poly(Q, (0, 0, 3), 2) == Fraction(7, 2)


def test_eval_dim_mismatch():
    with pytest.raises(ValueError):
        eval_poly(X(2, 0), (1,), 0)


def test_eval_float_matches_exact():
    P = X(2, 0) * X(2, 1) + T(2).scale(Fraction(1, 3))
    pts = np.array([[0.5, -0.25], [1.0, 2.0]])
    got = P.eval_float(pts, np.array([0.1, -0.2]))
    want = [float(eval_poly(P, [Fraction(a) for a in p], Fraction(t))) for p, t in zip(pts, [0.1, -0.2])]
    assert np.allclose(got, want, rtol=1e-14)


# -- properties

@settings(max_examples=60, deadline=None)
@given(polys(max_w=8))
def test_heat_matches_sympy(P):
    e, xs, t = to_sympy(heat_apply(P))
    assert sp.expand(e - sympy_heat(P)) == 0


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3).flatmap(lambda n: st.tuples(polys(n, 8), polys(n, 8))), fracs, fracs)
def test_heat_linearity(PQ, a, b):
    P, Q = PQ
    assert heat_apply(P.scale(a) + Q.scale(b)) == heat_apply(P).scale(a) + heat_apply(Q).scale(b)


@settings(max_examples=60, deadline=None)
@given(polys(max_w=8))
def test_heat_degree_drop(P):
    H = heat_apply(P)
    if not H.is_zero():
        assert H.wdeg <= P.wdeg - 2


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3).flatmap(lambda n: st.tuples(polys(n, 5), polys(n, 5))))
def test_leibniz(UP):
    u, P = UP
    lhs = heat_apply(multiply(u, P))
    rhs = multiply(u, heat_apply(P)) + multiply(P, heat_apply(u)) + inner_grad(u, P).scale(2)
    assert lhs == rhs


@settings(max_examples=40, deadline=None)
@given(polys(max_w=6), st.fractions(min_value=Fraction(1, 9), max_value=5, max_denominator=9),
       st.lists(fracs, min_size=3, max_size=3), fracs)
def test_rescale_evaluation(P, r, x, t):
    x = x[:P.dim]
    assert eval_poly(rescale(P, r), x, t) == eval_poly(P, [xi / r for xi in x], t / r ** 2)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3).flatmap(lambda n: st.tuples(polys(n, 6), polys(n, 6))), fracs)
def test_norm_properties(PQ, c):
    P, Q = PQ
    assert (P + Q).norm() <= P.norm() + Q.norm()
    assert P.scale(c).norm() == abs(c) * P.norm()


@settings(max_examples=40, deadline=None)
@given(polys(max_w=8))
def test_records_round_trip(P):
    assert from_records(to_records(P), P.dim) == P
    assert loads(dumps(P)) == P


def test_record_format():
    recs = to_records(T(1).scale(Fraction(-3, 4)))
    assert recs == [{"m": [0], "ell": 1, "num": -3, "den": 4}]


def test_float_coefficients_round_trip():
    P = ParPoly(2, {ParIndex((1, 0), 0): 0.1})
    assert loads(dumps(P))[ParIndex((1, 0), 0)] == 0.1
