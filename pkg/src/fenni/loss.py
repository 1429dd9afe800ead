"""Physics-based loss functionals and constitutive helpers.

All functions work on bound models (returning tape variables) and unbound
models (returning floats) alike.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, NonFiniteValue
from .quadrature import QuadratureRule, integrate


@dataclass(frozen=True)
class Material1D:
    A: float = 1.0
    E: float = 175.0

    def __post_init__(self):
        if not (self.A > 0 and self.E > 0):
            raise ConfigError("A and E must be positive")

    @property
    def AE(self) -> float:
        return self.A * self.E


@dataclass(frozen=True)
class Material2D:
    lam: float = 1.25
    mu: float = 1.0

    def __post_init__(self):
        if not (self.mu > 0 and self.lam + 2.0 * self.mu / 3.0 > 0):
            raise ConfigError("Lame coefficients must give a positive-definite law")


@dataclass
class StressState:
    eps: np.ndarray  # (..., 2, 2)
    sigma: np.ndarray  # (..., 2, 2)
    sigma_zz: np.ndarray
    vm: np.ndarray


# 1D -----------------------------------------------------------------------------
def potential_energy_1d(model, material: Material1D, body_force, rule):
    """1/2 int AE (du/dx)^2 dx - int u b dx."""
    ae = material.AE

    def density(pe):
        return (pe.du[0][0] ** 2) * (0.5 * ae) - pe.u[0] * body_force(pe.x[0])

    return integrate(model, density, rule)


def weak_residuals_1d(model, material: Material1D, body_force, rule):
    """Nodal weak-form residuals R_i = int AE u' N_i' dx - int N_i b dx (all nodes)."""
    if not isinstance(rule, QuadratureRule):
        raise ConfigError("the weak loss needs a Gauss rule")
    pe = model.at_quadrature(rule)
    ae = material.AE
    flux = pe.du[0][0] * ae
    load = body_force(pe.x[0])
    w = pe.measure * rule.weights
    n = model.mesh.n_nodes
    R = None
    for a in range(model.mesh.conn.shape[1]):
        r = ad.sum((flux * pe.dN[a][0] - load * pe.N[:, a]) * w, axis=1)
        part = ad.scatter_add(r, model.mesh.conn[:, a], n)
        R = part if R is None else R + part
    return R


def weak_loss_1d(model, material: Material1D, body_force, rule):
    """Sum of squared weak residuals over test functions of free nodes."""
    R = weak_residuals_1d(model, material, body_force, rule)
    test = np.flatnonzero(~model.params.frozen_U[:, 0])
    r = R[test]
    total = ad.sum(r * r)
    if not np.isfinite(ad.value_of(total)):
        raise NonFiniteValue("weak loss is not finite")
    return total


def residual_loss_1d(model_u, model_strain, material: Material1D, body_force, points, lam1=None, lam2=1.0):
    """lam1 * mean((AE du_x/dx + b)^2) + lam2 * mean((du/dx - u_x)^2).

    ``model_u`` predicts the displacement (quadratic elements),
    ``model_strain`` the strain field (linear elements); ``lam1`` defaults to
    the domain length.
    """
    if model_u.order != 2 or model_strain.order != 1:
        raise ConfigError("residual loss needs a quadratic displacement model and a linear strain model")
    pts = np.asarray(points, dtype=float).reshape(-1)
    if lam1 is None:
        xs = model_u.initial_mesh.coords[:, 0]
        lam1 = float(xs.max() - xs.min())
    pu = model_u.evaluate(pts)
    ps = model_strain.evaluate(pts)
    eq = ps.du[0][0] * material.AE + body_force(pts)
    comp = pu.du[0][0] - ps.u[0]
    n = float(len(pts))
    total = ad.sum(eq * eq) * (lam1 / n) + ad.sum(comp * comp) * (lam2 / n)
    if not np.isfinite(ad.value_of(total)):
        raise NonFiniteValue("residual loss is not finite")
    return total


# 2D -----------------------------------------------------------------------------
def strain_components(du):
    """(eps_xx, eps_yy, eps_xy) from displacement gradients du[c][d]."""
    exx = du[0][0]
    eyy = du[1][1]
    exy = (du[0][1] + du[1][0]) * 0.5
    return exx, eyy, exy


def potential_energy_2d(model, material: Material2D, rule):
    """1/2 int sigma : eps dx with sigma = lam tr(eps) I + 2 mu eps."""
    lam, mu = material.lam, material.mu

    def density(pe):
        exx, eyy, exy = strain_components(pe.du)
        tr = exx + eyy
        return (tr * tr) * (0.5 * lam) + (exx * exx + eyy * eyy + (exy * exy) * 2.0) * mu

    return integrate(model, density, rule)


def von_mises(sigma, sigma_zz=None):
    """sqrt(3/2 s:s) of a 3x3 stress, or of a 2x2 in-plane stress with the
    given out-of-plane component."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape[-2:] == (2, 2):
        szz = np.zeros(sigma.shape[:-2]) if sigma_zz is None else np.asarray(sigma_zz, dtype=float)
        full = np.zeros(sigma.shape[:-2] + (3, 3))
        full[..., :2, :2] = sigma
        full[..., 2, 2] = szz
        sigma = full
    tr = np.trace(sigma, axis1=-2, axis2=-1)
    dev = sigma - tr[..., None, None] / 3.0 * np.eye(3)
    return np.sqrt(1.5 * np.einsum("...ij,...ij->...", dev, dev))


def stress_from_gradient(grad, material: Material2D) -> StressState:
    """Plane-strain stress state from displacement gradients (..., 2, 2)
    with ``grad[..., c, d] = d u_c / d x_d``."""
    grad = np.asarray(grad, dtype=float)
    eps = 0.5 * (grad + np.swapaxes(grad, -1, -2))
    tr = eps[..., 0, 0] + eps[..., 1, 1]
    sigma = 2.0 * material.mu * eps + material.lam * tr[..., None, None] * np.eye(2)
    szz = material.lam * tr
    return StressState(eps, sigma, szz, von_mises(sigma, szz))


def stress_strain_2d(model, x, elem, material: Material2D | None = None) -> StressState:
    """Strain, stress and von Mises stress at ``x`` inside element ``elem``."""
    material = material or Material2D()
    pe = model.evaluate(np.asarray(x, dtype=float).reshape(1, 2), elements=[elem])
    grad = np.array([[float(np.ravel(ad.value_of(d))[0]) for d in row] for row in pe.du])
    return stress_from_gradient(grad, material)


def element_stress(model, material: Material2D | None = None) -> StressState:
    """Per-element (constant) stress state of a linear triangle model."""
    material = material or Material2D()
    conn = model.mesh.conn
    X = model.params.X
    U = model.params.U
    a, b, c = X[conn[:, 0]], X[conn[:, 1]], X[conn[:, 2]]
    det = (a[:, 0] - c[:, 0]) * (b[:, 1] - c[:, 1]) - (b[:, 0] - c[:, 0]) * (a[:, 1] - c[:, 1])
    dN0 = np.stack([(b[:, 1] - c[:, 1]) / det, -(b[:, 0] - c[:, 0]) / det], axis=1)
    dN1 = np.stack([-(a[:, 1] - c[:, 1]) / det, (a[:, 0] - c[:, 0]) / det], axis=1)
    dN2 = -(dN0 + dN1)
    grad = (
        U[conn[:, 0]][:, :, None] * dN0[:, None, :]
        + U[conn[:, 1]][:, :, None] * dN1[:, None, :]
        + U[conn[:, 2]][:, :, None] * dN2[:, None, :]
    )
    return stress_from_gradient(grad, material)
