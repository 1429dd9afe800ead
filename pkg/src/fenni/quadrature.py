"""Quadrature rules on the reference elements and the trapezoid alternative."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import NonFiniteValue, UnsupportedDimension, UnsupportedOrder


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (n,) on [-1, 1] or (n, 2) on the reference triangle
    weights: np.ndarray
    name: str = ""

    def __len__(self) -> int:
        return len(self.weights)


# Gauss-Legendre abscissae are the roots of P_n; 17 significant digits.
_GAUSS_LEGENDRE = {
    1: ([0.0], [2.0]),
    2: ([-0.57735026918962576, 0.57735026918962576], [1.0, 1.0]),
    3: (
        [-0.77459666924148338, 0.0, 0.77459666924148338],
        [0.55555555555555556, 0.88888888888888889, 0.55555555555555556],
    ),
    4: (
        [-0.86113631159405258, -0.33998104358485626, 0.33998104358485626, 0.86113631159405258],
        [0.34785484513745386, 0.65214515486254614, 0.65214515486254614, 0.34785484513745386],
    ),
    5: (
        [-0.90617984593866399, -0.53846931010568309, 0.0, 0.53846931010568309, 0.90617984593866399],
        [0.23692688505618909, 0.47862867049936647, 0.56888888888888889, 0.47862867049936647, 0.23692688505618909],
    ),
}


def gauss_1d(n: int) -> QuadratureRule:
    if n not in _GAUSS_LEGENDRE:
        raise UnsupportedOrder(f"Gauss-Legendre rule with {n} points is not tabulated (1..5)")
    pts, wts = _GAUSS_LEGENDRE[n]
    return QuadratureRule(np.array(pts), np.array(wts), f"gauss{n}")


def gauss_tri(n: int) -> QuadratureRule:
    if n == 1:
        return QuadratureRule(np.array([[1.0 / 3.0, 1.0 / 3.0]]), np.array([0.5]), "tri1")
    if n == 3:
        pts = np.array([[1.0 / 6.0, 1.0 / 6.0], [2.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 2.0 / 3.0]])
        return QuadratureRule(pts, np.full(3, 1.0 / 6.0), "tri3")
    raise UnsupportedOrder(f"triangle rule with {n} points is not available (1 or 3)")


def integrate_loss(model, integrand, rule: QuadratureRule):
    """Sum_j Sum_i w_i l(x(xi_i, e_j)) |J_j| over all elements of ``model``.

    ``integrand`` receives the :class:`~fenni.model.PointEval` of the model at
    the mapped quadrature points (arrays shaped (n_elements, n_points)) and
    returns the loss density there.  Quadrature point positions and the
    Jacobian are computed from the model's current (possibly trainable) nodal
    coordinates, so gradients flow through both.
    """
    pe = model.at_quadrature(rule)
    dens = integrand(pe)
    total = ad.sum(dens * pe.measure * rule.weights)
    if not np.isfinite(ad.value_of(total)):
        raise NonFiniteValue("integrated loss is not finite")
    return total


@dataclass(frozen=True)
class Trapezoid:
    """Composite trapezoid sampling with ``samples_per_element`` points."""

    samples_per_element: int
    name: str = "trapezoid"


def integrate(model, integrand, rule):
    """Dispatch to Gauss quadrature or the trapezoid rule."""
    if isinstance(rule, Trapezoid):
        return trapezoid_loss(model, integrand, rule.samples_per_element)
    return integrate_loss(model, integrand, rule)


def trapezoid_points(mesh, n: int) -> np.ndarray:
    """Sorted, de-duplicated sample points: ``n`` uniform points per element."""
    if mesh.dim != 1:
        raise UnsupportedDimension("the trapezoid rule is only available in 1D")
    if n < 2:
        raise ValueError("trapezoid sampling needs at least 2 points per element")
    xa = mesh.coords[mesh.conn[:, 0], 0]
    xb = mesh.coords[mesh.conn[:, 1], 0]
    t = np.linspace(0.0, 1.0, n)
    pts = (xa[:, None] + (xb - xa)[:, None] * t[None, :]).ravel()
    return np.unique(pts)


def trapezoid_loss(model, integrand, samples_per_element: int):
    """Composite trapezoid rule on points anchored to the model's initial mesh.

    The sample points never move, even when nodal coordinates are trained.
    """
    if model.mesh.dim != 1:
        raise UnsupportedDimension("the trapezoid rule is only available in 1D")
    pts = model.trapezoid_samples(samples_per_element)
    pe = model.evaluate(pts)
    dens = integrand(pe)
    dx = np.diff(pts)
    total = ad.sum((dens[1:] + dens[:-1]) * (0.5 * dx))
    if not np.isfinite(ad.value_of(total)):
        raise NonFiniteValue("integrated loss is not finite")
    return total
