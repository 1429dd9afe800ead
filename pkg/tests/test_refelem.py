import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fenni.errors import DegenerateElement
from fenni.refelem import (
    from_reference_1d,
    from_reference_tri,
    physical_gradients,
    shapes_1d,
    shapes_linear_1d,
    shapes_linear_tri,
    shapes_quadratic_1d,
    to_reference_1d,
    to_reference_tri,
)

coord = st.floats(min_value=-10, max_value=10, allow_nan=False)


def random_triangle(rng):
    while True:
        tri = rng.uniform(-3, 3, size=(3, 2))
        a, b, c = tri
        if abs((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])) > 0.5:
            return tri


@pytest.mark.parametrize("x, xa, xb, expected", [(0, 0, 10, -1), (5, 0, 10, 0), (7.5, 5, 10, 0), (10, 0, 10, 1)])
def test_to_reference_1d(x, xa, xb, expected):
    assert to_reference_1d(x, xa, xb) == pytest.approx(expected)


def test_to_reference_1d_degenerate():
    with pytest.raises(DegenerateElement):
        to_reference_1d(1.0, 2.0, 2.0)


@settings(max_examples=50)
@given(coord, st.floats(min_value=0.1, max_value=5), st.floats(min_value=-1, max_value=1))
def test_1d_map_roundtrip(xa, h, xi):
    x = from_reference_1d(xi, xa, xa + h)
    assert to_reference_1d(x, xa, xa + h) == pytest.approx(xi, abs=1e-9)


def test_shape_values_at_nodes():
    assert np.allclose(shapes_linear_1d(-1.0).values, [1, 0])
    assert np.allclose(shapes_linear_tri(np.array([1 / 3, 1 / 3])).values, [1 / 3] * 3)
    assert np.allclose(shapes_quadratic_1d(0.0).values, [0, 0, 1])


def test_quadratic_basis_matches_vandermonde_solve():
    # Lagrange basis on nodes (-1, 1, 0) from the 3x3 Vandermonde system
    nodes = np.array([-1.0, 1.0, 0.0])
    V = np.vander(nodes, 3, increasing=True)
    coef = np.linalg.solve(V, np.eye(3))
    xi = np.linspace(-1, 1, 11)
    expected = np.vander(xi, 3, increasing=True) @ coef
    assert np.allclose(shapes_quadratic_1d(xi).values, expected, atol=1e-14)


@settings(max_examples=50)
@given(st.floats(min_value=-1, max_value=1), st.sampled_from([1, 2]))
def test_1d_partition_of_unity(xi, order):
    s = shapes_1d(xi, order)
    assert s.values.sum() == pytest.approx(1.0, abs=1e-12)
    assert s.grads_ref.sum() == pytest.approx(0.0, abs=1e-12)


def test_unsupported_1d_order():
    with pytest.raises(ValueError):
        shapes_1d(0.0, 3)


def test_to_reference_tri_cases():
    tri = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]])
    # (x_ref, y_ref) are the barycentric weights of nodes a and b
    assert np.allclose(to_reference_tri([0.5, 0.5], tri).xi, [0.5, 0.25])
    assert np.allclose(to_reference_tri(tri[0], tri).xi, [1.0, 0.0])
    assert np.allclose(to_reference_tri(tri.mean(axis=0), tri).xi, [1 / 3, 1 / 3])
    assert to_reference_tri([0.5, 0.5], tri).inside()
    assert not to_reference_tri([3.0, 3.0], tri).inside()


def test_to_reference_tri_degenerate():
    with pytest.raises(DegenerateElement):
        to_reference_tri([0.5, 0.5], [[0, 0], [1, 1], [2, 2]])


def test_physical_gradients_identity_and_1d():
    tri = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    s = physical_gradients(tri, shapes_linear_tri(np.array([0.2, 0.3])))
    assert np.allclose(s.grads_phys[2], [-1.0, -1.0])
    s1 = physical_gradients(np.array([0.0, 2.0]), shapes_linear_1d(0.0))
    assert s1.grads_phys[1, 0] == pytest.approx(0.5)


def test_physical_gradients_degenerate():
    with pytest.raises(DegenerateElement):
        physical_gradients(np.array([[0, 0], [1, 1], [2, 2.0]]), shapes_linear_tri(np.array([0.2, 0.2])))


@settings(max_examples=40)
@given(st.integers(0, 10_000))
def test_triangle_map_properties(seed):
    rng = np.random.default_rng(seed)
    tri = random_triangle(rng)
    xi = rng.dirichlet(np.ones(3))[:2]
    x = from_reference_tri(xi, tri)
    assert np.allclose(to_reference_tri(x, tri).xi, xi, atol=1e-10)
    s = physical_gradients(tri, shapes_linear_tri(xi))
    assert np.allclose(s.grads_phys.sum(axis=0), 0.0, atol=1e-12)
    # gradients reproduce an affine field exactly
    c = rng.normal(size=2)
    vals = tri @ c
    assert np.allclose(vals @ s.grads_phys, c, atol=1e-10)
