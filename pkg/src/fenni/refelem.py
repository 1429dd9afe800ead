"""Reference elements, shape functions and the affine element maps.

1D elements live on xi in [-1, 1] with local node order (left, right[, mid]).
Triangles use the reference triangle {x_ref, y_ref >= 0, x_ref + y_ref <= 1}
with N0 = x_ref, N1 = y_ref, N2 = 1 - x_ref - y_ref attached to the element
nodes (a, b, c) in connectivity order, so (x_ref, y_ref) are the barycentric
weights of nodes a and b.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateElement

REF_TOL = 1e-9


@dataclass
class RefCoords:
    xi: np.ndarray

    def inside(self, tol: float = REF_TOL) -> bool:
        xi = np.atleast_1d(self.xi)
        if xi.size == 1:
            return bool(-1.0 - tol <= xi[0] <= 1.0 + tol)
        return bool(xi[0] >= -tol and xi[1] >= -tol and xi[0] + xi[1] <= 1.0 + tol)


@dataclass
class ShapeEval:
    """Shape values and derivatives at one or more reference points.

    ``values`` has shape (..., n_local), ``grads_ref`` (..., n_local, k) and
    ``grads_phys`` the same once :func:`physical_gradients` has been applied.
    """

    values: np.ndarray
    grads_ref: np.ndarray
    grads_phys: np.ndarray | None = None


# 1D -------------------------------------------------------------------------
def to_reference_1d(x, xa: float, xb: float):
    if not xb > xa:
        raise DegenerateElement(f"element [{xa}, {xb}] has non-positive length")
    return 2.0 * (np.asarray(x, dtype=float) - xa) / (xb - xa) - 1.0


def from_reference_1d(xi, xa: float, xb: float):
    return 0.5 * (xb - xa) * np.asarray(xi, dtype=float) + 0.5 * (xa + xb)


def shapes_linear_1d(xi) -> ShapeEval:
    xi = np.asarray(xi, dtype=float)
    values = np.stack([-0.5 * xi + 0.5, 0.5 * xi + 0.5], axis=-1)
    grads = np.broadcast_to(np.array([[-0.5], [0.5]]), xi.shape + (2, 1)).copy()
    return ShapeEval(values, grads)


def shapes_quadratic_1d(xi) -> ShapeEval:
    """Lagrange triple on nodes (-1, +1, 0)."""
    xi = np.asarray(xi, dtype=float)
    values = np.stack([0.5 * xi * (xi - 1.0), 0.5 * xi * (xi + 1.0), 1.0 - xi * xi], axis=-1)
    grads = np.stack([xi - 0.5, xi + 0.5, -2.0 * xi], axis=-1)[..., None]
    return ShapeEval(values, grads)


def shapes_1d(xi, order: int) -> ShapeEval:
    if order == 1:
        return shapes_linear_1d(xi)
    if order == 2:
        return shapes_quadratic_1d(xi)
    raise ValueError(f"unsupported 1D order {order}")


# triangles ------------------------------------------------------------------
def shapes_linear_tri(xi) -> ShapeEval:
    xi = np.asarray(xi, dtype=float)
    x, y = xi[..., 0], xi[..., 1]
    values = np.stack([x, y, 1.0 - x - y], axis=-1)
    grads = np.broadcast_to(np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]]), x.shape + (3, 2)).copy()
    return ShapeEval(values, grads)


def tri_jacobian_matrix(tri) -> np.ndarray:
    """d(x, y)/d(x_ref, y_ref) for a triangle given as a 3x2 array."""
    tri = np.asarray(tri, dtype=float)
    a, b, c = tri
    return np.array([[a[0] - c[0], b[0] - c[0]], [a[1] - c[1], b[1] - c[1]]])


def to_reference_tri(x, tri) -> RefCoords:
    """Barycentric weights of nodes a and b, from the 3x3 affine system."""
    tri = np.asarray(tri, dtype=float)
    m = np.vstack([tri.T, np.ones(3)])
    if abs(np.linalg.det(tri_jacobian_matrix(tri))) == 0.0:
        raise DegenerateElement("triangle has zero area")
    lam = np.linalg.solve(m, np.array([x[0], x[1], 1.0]))
    return RefCoords(lam[:2])


def from_reference_tri(xi, tri) -> np.ndarray:
    tri = np.asarray(tri, dtype=float)
    n = shapes_linear_tri(xi).values
    return n @ tri


# chain rule -----------------------------------------------------------------
def physical_gradients(coords, shape: ShapeEval) -> ShapeEval:
    """Fill ``grads_phys`` by pushing reference derivatives through the map.

    ``coords`` are the element vertex coordinates: (xa, xb) in 1D or a 3x2
    array for a triangle.  The map is affine, so the inverse Jacobian is
    constant over the element.
    """
    coords = np.asarray(coords, dtype=float)
    if coords.ndim == 1:
        xa, xb = coords[0], coords[1]
        if not xb > xa:
            raise DegenerateElement(f"element [{xa}, {xb}] has non-positive length")
        gp = shape.grads_ref * (2.0 / (xb - xa))
    else:
        jac = tri_jacobian_matrix(coords)
        if np.linalg.det(jac) == 0.0:
            raise DegenerateElement("triangle has zero area")
        gp = shape.grads_ref @ np.linalg.inv(jac)
    return ShapeEval(shape.values, shape.grads_ref, gp)
