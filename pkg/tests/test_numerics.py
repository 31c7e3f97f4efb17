import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from invlab.errors import ValidationError
from invlab.numerics import (Grid, GridField, discrete_norm, fd_derivative, field_from_csv,
                             field_from_json, field_to_csv, field_to_json, interpolate,
                             interpolation_matrix, quadrature_inner, sobolev_seminorm,
                             spectral_sobolev_norm)


def test_grid_geometry():
    g = Grid(1, 7)
    assert g.h == 0.125
    assert g.shape == (9,)
    assert g.nodes[0] == 0.0 and g.nodes[-1] == 1.0
    assert g.interior.sum() == 7
    g2 = Grid(2, 3)
    assert g2.size == 25 and g2.points.shape == (25, 2)
    # row-major flattening: second coordinate varies fastest
    assert np.allclose(g2.points[1], [0.0, 0.25])


@pytest.mark.parametrize("d, n", [(3, 7), (0, 7), (1, 2), (1, 4.5)])
def test_grid_rejects_bad_parameters(d, n):
    with pytest.raises(ValidationError):
        Grid(d, n)


def test_gridfield_is_immutable_and_finite():
    g = Grid(1, 5)
    u = g.field(lambda x: x)
    with pytest.raises(ValueError):
        u.values[0] = 1.0
    with pytest.raises(ValidationError):
        GridField(g, np.full(g.shape, np.nan))
    with pytest.raises(ValidationError):
        GridField(g, np.zeros(3))


def test_arithmetic_requires_same_grid():
    a = Grid(1, 5).field(1.0)
    b = Grid(1, 7).field(1.0)
    with pytest.raises(ValidationError):
        a + b
    assert np.all((a * 3 - 1).values == 2.0)


def test_trapezoid_quadrature_oracle():
    # trapezoid is exact on linear integrands; for x^2 the error is h^2/6
    g = Grid(1, 31)
    one = g.field(1.0)
    x = g.field(lambda x: x)
    assert quadrature_inner(one, one) == pytest.approx(1.0, abs=1e-15)
    assert quadrature_inner(x, one) == pytest.approx(0.5, abs=1e-15)
    assert quadrature_inner(x, x) == pytest.approx(1 / 3 + g.h**2 / 6, abs=1e-14)


def test_fd_derivatives_exact_on_quadratics():
    g = Grid(1, 9)
    u = g.field(lambda x: 3 * x**2 - 2 * x + 1)
    assert np.allclose(fd_derivative(u, 0, 1).values, 6 * g.nodes - 2, atol=1e-12)
    assert np.allclose(fd_derivative(u, 0, 2).values, 6.0, atol=1e-9)
    g2 = Grid(2, 9)
    v = g2.field(lambda x, y: x * y**2)
    assert np.allclose(fd_derivative(v, 1, 1).values, 2 * g2.mesh[0] * g2.mesh[1], atol=1e-12)
    assert np.allclose(fd_derivative(v, 1, 2).values, 2 * g2.mesh[0], atol=1e-9)


def test_fd_derivative_second_order_convergence():
    errs = []
    for n in (63, 127):
        g = Grid(1, n)
        u = g.field(lambda x: np.sin(3 * x))
        errs.append(np.max(np.abs(fd_derivative(u, 0, 2).values + 9 * np.sin(3 * g.nodes))))
    assert 3.0 < errs[0] / errs[1] < 5.0


def test_norms_of_sine():
    g = Grid(1, 511)
    u = g.field(lambda x: np.sin(np.pi * x))
    assert discrete_norm(u, "L2") == pytest.approx(np.sqrt(0.5), rel=1e-12)
    assert discrete_norm(u, "H1") == pytest.approx(np.sqrt(0.5 + np.pi**2 / 2), rel=1e-5)
    assert discrete_norm(u, "H2") == pytest.approx(
        np.sqrt(0.5 + np.pi**2 / 2 + np.pi**4 / 2), rel=1e-4)
    assert discrete_norm(u, "Linf") == pytest.approx(1.0, abs=1e-5)
    assert discrete_norm(u, "C1") == pytest.approx(np.pi, rel=1e-4)
    assert discrete_norm(u, "C2") == pytest.approx(np.pi**2, rel=1e-4)
    assert sobolev_seminorm(u, 1) == pytest.approx(np.pi / np.sqrt(2), rel=1e-5)


def test_norm_validation():
    u = Grid(1, 3).field(1.0)
    with pytest.raises(ValidationError):
        discrete_norm(u, "H3")
    with pytest.raises(ValidationError):
        discrete_norm(u, "H2")
    with pytest.raises(ValidationError):
        sobolev_seminorm(u, 3)


def test_spectral_proxy_on_cosine_modes():
    g = Grid(1, 127)
    for k in (0, 1, 4):
        u = g.field(lambda x: np.cos(k * np.pi * x))
        l2 = 1.0 if k == 0 else np.sqrt(0.5)
        for s in (0, 1, 2.5):
            assert spectral_sobolev_norm(u, s) == pytest.approx(
                l2 * (1 + (k * np.pi) ** 2) ** (s / 2), rel=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=20),
       st.floats(-3, 3), st.floats(-3, 3))
def test_interpolation_exact_on_affine(xs, a, b):
    g = Grid(1, 10)
    u = g.field(lambda x: a + b * x)
    assert np.allclose(interpolate(u, np.array(xs)[:, None]), a + b * np.array(xs), atol=1e-12)


def test_bilinear_interpolation_exact_and_node_consistent():
    g = Grid(2, 6)
    u = g.field(lambda x, y: 1 + 2 * x - y + 3 * x * y)
    pts = np.random.default_rng(0).uniform(size=(50, 2))
    exact = 1 + 2 * pts[:, 0] - pts[:, 1] + 3 * pts[:, 0] * pts[:, 1]
    assert np.allclose(u.at(pts), exact, atol=1e-12)
    assert np.allclose(u.at(g.points), u.values.ravel(), atol=1e-14)
    P = interpolation_matrix(g, pts)
    assert np.allclose(np.asarray(P.sum(axis=1)).ravel(), 1.0)
    with pytest.raises(ValidationError):
        u.at(np.array([[0.5, 1.2]]))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=6, max_size=6))
def test_serialization_round_trip_is_exact(vals):
    u = GridField(Grid(1, 4), np.array(vals))
    for dump, load in ((field_to_json, field_from_json), (field_to_csv, field_from_csv)):
        back = load(dump(u))
        assert back.grid == u.grid
        assert np.array_equal(back.values, u.values)


@pytest.mark.parametrize("text", ["", "nonsense", "# d=1\n1.0\n", '{"d": 1}', "# d=1,n=3\n1\n2\n"])
def test_malformed_serialization_rejected(text):
    with pytest.raises(ValidationError):
        (field_from_json if text.startswith("{") else field_from_csv)(text)
