import csv
import warnings

import numpy as np
import pytest

from parharnack.heatlab import (CompatibilityWarning, EllipticityError, EmptySliceError, GraphDomain, Grid,
                                GridResolutionError, RatioError, VCFields, normal_derivative,
                                rough_graph, sample_function, sine_graph, solve_heat, solve_vc)


def unit_interval():
    # (0, 1) x (0, 1/4]
    return GraphDomain(1, None, center=(0.5,), t0=0.25, radius=0.5, shape="box")


def sin_exact(X, t, rate=np.pi ** 2):
    return np.exp(-rate * t) * np.sin(np.pi * X[..., 0])


def final_error(field, exact):
    j = len(field.times) - 1
    X = field.coords()
    ok = field.active(j)
    return float(np.max(np.abs(field.values[j][ok] - exact(X, field.times[j])[ok])))


def orders(errs):
    return [np.log2(a / b) for a, b in zip(errs, errs[1:])]


# -- grids and fields

def test_ratio_error():
    with pytest.raises(RatioError):
        Grid(0.1, tau=1.0)


def test_axes_require_integer_cells():
    with pytest.raises(ValueError):
        Grid(0.3).axes(GraphDomain(1, None))


def test_sample_function_inactive_below_graph():
    f, g = sine_graph()
    d = GraphDomain(2, f, f_grad=g)
    F = sample_function(d, Grid(2.0 ** -3), lambda X, t: X[..., 1] - f(X[..., :1], t))
    assert np.all(F.values[F.active()] > 0)


def test_csv_is_time_major_c_order(tmp_path):
    d = GraphDomain(2, None, radius=0.5, shape="box")
    F = sample_function(d, Grid(0.25), lambda X, t: X[..., 0] + 10 * X[..., 1] + 100 * t)
    p = tmp_path / "f.csv"
    F.to_csv(p)
    with open(p) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["level", "t", "x1", "x2", "value"]
    keys = [(int(r[0]), float(r[2]), float(r[3])) for r in rows[1:]]
    assert keys == sorted(keys)
    X, T, V = F.samples()
    assert np.allclose(V, X[:, 0] + 10 * X[:, 1] + 100 * T)


def test_normalize_default_point():
    d = GraphDomain(1, None, center=(0.0,), t0=0.0, radius=2.0, shape="box")
    F = sample_function(d, Grid(0.25), lambda X, t: 3.0 + 0 * X[..., 0]).normalize()
    assert np.allclose(F.values[F.active()], 1.0)
    assert F.meta["normalized_by"] == 3.0


def test_domain_normal_and_rescale():
    f, g = sine_graph(0.1)
    d = GraphDomain(2, f, f_grad=g)
    nu = d.normal(np.array([0.0]), 0.0)
    assert np.allclose(np.linalg.norm(nu), 1.0) and nu[..., -1] > 0
    dr = d.rescaled(0.5)
    # graph of u(r x, r^2 t) / r is f(r x', r^2 t) / r
    assert np.isclose(dr.height(np.array([0.4]), -0.2), f(np.array([0.2]), -0.05) / 0.5)


def test_normalized_flag_checks_graph():
    f, g = sine_graph(0.1)
    with pytest.raises(ValueError):
        GraphDomain(2, f, f_grad=g, normalized=True)
    GraphDomain(2, lambda xp, t: xp[..., 0] ** 2 + 0 * t, normalized=True)


# -- heat solver

def test_linear_exact():
    d = GraphDomain(1, None, center=(0.0,), t0=0.0, radius=1.0, shape="box")
    u = solve_heat(d, lambda X: X[:, 0], boundary=lambda X, t: X[:, 0], grid=Grid(2.0 ** -5))
    assert final_error(u, lambda X, t: X[..., 0]) < 1e-13


@pytest.mark.parametrize("scheme", ["cn", "be"])
def test_sin_convergence(scheme):
    errs = []
    hs = [2.0 ** -p for p in (5, 6, 7)]
    for h in hs:
        g = Grid(h, scheme=scheme, tau=h if scheme == "cn" else h * h * 4)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            u = solve_heat(unit_interval(), lambda X: np.sin(np.pi * X[:, 0]), grid=g)
        errs.append(final_error(u, sin_exact))
    for o in orders(errs):
        assert 1.7 <= o <= 2.3


def test_curved_self_convergence():
    f, g = sine_graph(0.05)
    d = GraphDomain(2, f, f_grad=g)

    def data(X, t):
        return (X[..., 1] - f(X[..., :1], t)) * (1 + 0.5 * X[..., 0])
    sols = {}
    for p in (4, 5, 6):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            sols[p] = solve_heat(d, lambda X: data(X, d.t_start), boundary=data, grid=Grid(2.0 ** -p))

    def at_coarse(F, step):
        return F.values[-1][::step, ::step]
    ref = sols[4].values[-1]
    e1 = np.nanmax(np.abs(at_coarse(sols[5], 2) - ref))
    e2 = np.nanmax(np.abs(at_coarse(sols[6], 4) - at_coarse(sols[5], 2)))
    assert 1.7 <= np.log2(e1 / e2) <= 2.3


def test_rough_graph_reports_order(capsys):
    f, g = rough_graph()
    assert g is None
    d = GraphDomain(2, f)

    def data(X, t):
        return np.maximum(X[..., 1] - f(X[..., :1], t), 0) * (1 + 0.5 * X[..., 0])
    sols = {}
    for p in (4, 5, 6):
        sols[p] = solve_heat(d, lambda X: data(X, d.t_start), boundary=data,
                             grid=Grid(2.0 ** -p, scheme="be"), check_resolution=False)
        ok = sols[p].active()
        assert np.min(sols[p].values[ok]) >= -1e-12
        assert sols[p].meta["max_principle"]["holds"]
    e1 = np.nanmax(np.abs(sols[5].values[-1][::2, ::2] - sols[4].values[-1]))
    e2 = np.nanmax(np.abs(sols[6].values[-1][::4, ::4] - sols[5].values[-1][::2, ::2]))
    # reported only; no order is guaranteed for a C^{1/2} boundary
    print(f"rough graph self-convergence order {np.log2(e1 / e2):.2f}")


def test_empty_slice():
    d = GraphDomain(2, lambda xp, t: 2.0 + 0 * xp[..., 0])
    with pytest.raises(EmptySliceError):
        solve_heat(d, grid=Grid(0.25))


def test_resolution_check():
    d = GraphDomain(2, lambda xp, t: 0.2 * np.sin(8 * xp[..., 0]) + 0 * t)
    with pytest.raises(GridResolutionError):
        solve_heat(d, grid=Grid(0.25))


def test_compatibility_warning():
    with pytest.warns(CompatibilityWarning):
        solve_heat(unit_interval(), lambda X: np.ones(len(X)), grid=Grid(2.0 ** -4, scheme="be"))


def test_max_principle_and_comparison():
    f, g = sine_graph(0.05)
    d = GraphDomain(2, f, f_grad=g)
    grid = Grid(2.0 ** -5, scheme="be")

    def bu(X, t):
        return np.maximum(X[..., 1] - f(X[..., :1], t), 0) * (1 + 0.5 * X[..., 0])

    def bv(X, t):
        return bu(X, t) + 0.1 * (1 + X[..., 0]) ** 2
    u = solve_heat(d, lambda X: bu(X, d.t_start), boundary=bu, grid=grid)
    v = solve_heat(d, lambda X: bv(X, d.t_start), boundary=bv, grid=grid)
    ok = u.active()
    # data extremes on the parabolic boundary: bu lies in [0, 1.5 * 2]
    assert np.min(u.values[ok]) >= -1e-12
    assert np.max(u.values[ok]) <= 3.0
    assert np.all(v.values[ok] >= u.values[ok] - 1e-12)


def test_fields_immutable_copy():
    u = solve_heat(unit_interval(), lambda X: np.sin(np.pi * X[:, 0]), grid=Grid(2.0 ** -4, scheme="be"))
    w = u.with_values(u.values * 2)
    assert np.nanmax(w.values) == pytest.approx(2 * np.nanmax(u.values))


# -- variable coefficients

def test_vc_reaction_term():
    errs = []
    for p in (5, 6, 7):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            u = solve_vc(unit_interval(), VCFields(c=lambda X, t: -np.ones(len(X))),
                         lambda X: np.sin(np.pi * X[:, 0]), grid=Grid(2.0 ** -p))
        errs.append(final_error(u, lambda X, t: sin_exact(X, t, np.pi ** 2 + 1)))
    for o in orders(errs):
        assert 1.7 <= o <= 2.3


def test_vc_manufactured():
    # w = e^{-t} sin(pi x), A = 1 + x^2/10; L w = g gives g = A w_xx - w_t
    def w(X, t):
        return np.exp(-t) * np.sin(np.pi * X[..., 0])

    def A(X, t):
        return (1 + X[:, 0] ** 2 / 10)[:, None, None]

    def g(X, t):
        x = X[:, 0]
        return np.exp(-t) * np.sin(np.pi * x) * (1 - (1 + x ** 2 / 10) * np.pi ** 2)
    errs = []
    for p in (5, 6, 7):
        u = solve_vc(unit_interval(), VCFields(A=A, g=g), lambda X: w(X, 0.0), grid=Grid(2.0 ** -p))
        errs.append(final_error(u, w))
    for o in orders(errs):
        assert 1.7 <= o <= 2.3


def test_vc_bitwise_reduction():
    f, gr = sine_graph(0.05)
    d = GraphDomain(2, f, f_grad=gr)

    def data(X, t):
        return (X[..., 1] - f(X[..., :1], t)) * (1 + 0.5 * X[..., 0])

    def g(X, t):
        return np.cos(X[:, 0]) * (1 + t)
    grid = Grid(2.0 ** -5)
    a = solve_vc(d, VCFields(g=g), lambda X: data(X, d.t_start), grid=grid, boundary=data)
    b = solve_heat(d, lambda X: data(X, d.t_start), source=lambda X, t: -g(X, t), grid=grid, boundary=data)
    assert np.array_equal(a.values, b.values, equal_nan=True)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        c = solve_vc(d, VCFields(), lambda X: data(X, d.t_start), grid=grid, boundary=data)
        e = solve_heat(d, lambda X: data(X, d.t_start), grid=grid, boundary=data)
    assert np.array_equal(c.values, e.values, equal_nan=True)


def test_ellipticity_violation():
    def A(X, t):
        return np.full((len(X), 1, 1), -1.0)
    with pytest.raises(EllipticityError):
        solve_vc(unit_interval(), VCFields(A=A), lambda X: np.sin(np.pi * X[:, 0]), grid=Grid(2.0 ** -4))


# -- normal derivative

def half_plane():
    return GraphDomain(2, lambda xp, t: 0 * xp[..., 0] + 0 * t)


def test_normal_derivative_linear():
    d = half_plane()
    F = sample_function(d, Grid(2.0 ** -4), lambda X, t: X[..., 1])
    assert normal_derivative(F, [0.0]) == pytest.approx(1.0, abs=1e-12)


def test_normal_derivative_sin():
    d = GraphDomain(1, lambda xp, t: 0 * t + np.zeros(np.shape(xp)[:-1]), center=(0.5,), t0=0.25,
                    radius=0.5, shape="box")
    errs = []
    for h in (2.0 ** -5, 2.0 ** -6):
        F = sample_function(d, Grid(h), sin_exact)
        t = F.times[-1]
        errs.append(abs(normal_derivative(F, [], t) - np.pi * np.exp(-np.pi ** 2 * t)))
    assert errs[1] < errs[0] / 3


def test_normal_derivative_zero():
    F = sample_function(half_plane(), Grid(2.0 ** -4), lambda X, t: 0 * X[..., 0])
    assert normal_derivative(F, [0.25]) == 0.0


def test_normal_derivative_no_room():
    d = GraphDomain(2, lambda xp, t: 0.9 + 0 * xp[..., 0])
    F = sample_function(d, Grid(2.0 ** -3), lambda X, t: X[..., 1] - 0.9)
    with pytest.raises(ValueError):
        normal_derivative(F, [0.0])
