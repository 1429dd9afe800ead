"""Classical finite-element solver, benchmark problems and error metrics.

The assembly here is written directly against the reference shape functions
in :mod:`fenni.refelem`; it shares no code with the loss functionals it is
used to check.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse import linalg as splinalg

from . import autodiff as ad
from .errors import SingularSystem, ZeroReferenceNorm
from .loss import Material1D, Material2D, stress_from_gradient
from .mesh import Mesh, generate_bar_1d, generate_plate_with_hole
from .quadrature import QuadratureRule, gauss_1d
from .refelem import shapes_1d

DENSE_LIMIT = 5000
CG_RTOL = 1e-12


# benchmark problems -------------------------------------------------------------
@dataclass(frozen=True)
class Bar1D:
    """Bar on [0, L] fixed at x = 0, displaced by u_L at x = L, loaded by
    two Gaussian bumps centred at x1 and x2."""

    L: float = 10.0
    A: float = 1.0
    E: float = 175.0
    u_L: float = 5e-4
    x1: float = 2.5
    x2: float = 7.5

    @property
    def material(self) -> Material1D:
        return Material1D(self.A, self.E)

    def body_force(self, x):
        s1 = x - self.x1
        s2 = x - self.x2
        q1 = s1 * s1
        q2 = s2 * s2
        pi = np.pi
        t1 = (q1 * (4.0 * pi**2) - 2.0 * pi) * ad.exp(q1 * (-pi))
        t2 = (q2 * (8.0 * pi**2) - 4.0 * pi) * ad.exp(q2 * (-pi))
        return -(t1 + t2)

    def _linear_coeff(self) -> float:
        e1 = np.exp(-np.pi * self.x1**2)
        e2 = np.exp(-np.pi * self.x2**2)
        return (e1 - e2) / (10.0 * self.A * self.E)

    def analytic_u(self, x):
        x = np.asarray(x, dtype=float)
        ae = self.A * self.E
        e1 = np.exp(-np.pi * self.x1**2)
        e2 = np.exp(-np.pi * self.x2**2)
        return (
            (np.exp(-np.pi * (x - self.x1) ** 2) - e1) / ae
            + 2.0 * (np.exp(-np.pi * (x - self.x2) ** 2) - e2) / ae
            - self._linear_coeff() * x
            + self.u_L * x / self.L
        )

    def analytic_du(self, x):
        x = np.asarray(x, dtype=float)
        ae = self.A * self.E
        s1, s2 = x - self.x1, x - self.x2
        return (
            -2.0 * np.pi * s1 * np.exp(-np.pi * s1**2) / ae
            - 4.0 * np.pi * s2 * np.exp(-np.pi * s2**2) / ae
            - self._linear_coeff()
            + self.u_L / self.L
        )


_DEFAULT_BAR = Bar1D()


def body_force_1d(x):
    return _DEFAULT_BAR.body_force(x)


def analytic_u(x):
    return _DEFAULT_BAR.analytic_u(x)


def analytic_du(x):
    return _DEFAULT_BAR.analytic_du(x)


@dataclass(frozen=True)
class Plate2D:
    """Plate with a hole, clamped on the left edge, displaced on the right."""

    width: float = 10.0
    height: float = 5.0
    hole_center: tuple = (5.0, 2.5)
    hole_radius: float = 1.0
    lam: float = 1.25
    mu: float = 1.0
    u_left: tuple = (0.0, 0.0)
    u_right: tuple = (1.0, 0.0)

    @property
    def material(self) -> Material2D:
        return Material2D(self.lam, self.mu)

    def mesh(self, level: int) -> Mesh:
        return generate_plate_with_hole(self.width, self.height, self.hole_center, self.hole_radius, level)

    @property
    def bcs(self) -> dict:
        return {"left": self.u_left, "right": self.u_right}

    def key(self, level: int) -> str:
        doc = json.dumps({"problem": asdict(self), "level": level}, sort_keys=True)
        return hashlib.sha256(doc.encode()).hexdigest()[:16]


# linear systems -------------------------------------------------------------------
@dataclass
class LinearSystem:
    stiffness: sparse.csr_matrix
    load: np.ndarray
    dirichlet: dict = field(default_factory=dict)  # dof -> value

    def energy(self, u) -> float:
        u = np.ravel(u)
        return float(0.5 * u @ (self.stiffness @ u) - u @ self.load)

    def residual(self, u) -> np.ndarray:
        return self.stiffness @ np.ravel(u) - self.load


def assemble_1d(mesh: Mesh, material: Material1D, body_force, rule: QuadratureRule | None = None) -> LinearSystem:
    """Stiffness and load of the bar on a linear or quadratic 1D mesh."""
    rule = rule or gauss_1d(3)
    conn = mesh.conn
    xa = mesh.coords[conn[:, 0], 0]
    xb = mesh.coords[conn[:, 1], 0]
    h = xb - xa
    if np.any(h <= 0):
        raise SingularSystem("non-positive element length")
    sh = shapes_1d(rule.points, mesh.order)
    N = sh.values  # (nq, nloc)
    dN = sh.grads_ref[..., 0]  # (nq, nloc)
    xq = xa[:, None] + 0.5 * h[:, None] * (rule.points[None, :] + 1.0)
    bq = np.asarray(body_force(xq), dtype=float)
    jac = 0.5 * h
    ke = material.AE * np.einsum("q,qa,qb->ab", rule.weights, dN, dN)[None] / jac[:, None, None]
    fe = np.einsum("q,eq,qa->ea", rule.weights, bq, N) * jac[:, None]
    return _scatter(mesh.n_nodes, conn, ke, fe)


def _scatter(ndof, dofs, ke, fe) -> LinearSystem:
    nl = dofs.shape[1]
    rows = np.repeat(dofs, nl, axis=1).ravel()
    cols = np.tile(dofs, (1, nl)).ravel()
    K = sparse.coo_matrix((ke.ravel(), (rows, cols)), shape=(ndof, ndof)).tocsr()
    F = np.zeros(ndof)
    np.add.at(F, dofs.ravel(), fe.ravel())
    return LinearSystem(K, F)


def plane_strain_matrix(material: Material2D) -> np.ndarray:
    lam, mu = material.lam, material.mu
    return np.array([[lam + 2 * mu, lam, 0.0], [lam, lam + 2 * mu, 0.0], [0.0, 0.0, mu]])


def assemble_2d(mesh: Mesh, material: Material2D) -> LinearSystem:
    """P1 plane-strain stiffness; dof 2 i + c is component c of node i."""
    conn = mesh.conn
    c = mesh.coords
    a, b, cc = c[conn[:, 0]], c[conn[:, 1]], c[conn[:, 2]]
    det = (a[:, 0] - cc[:, 0]) * (b[:, 1] - cc[:, 1]) - (b[:, 0] - cc[:, 0]) * (a[:, 1] - cc[:, 1])
    if np.any(det == 0):
        raise SingularSystem("degenerate triangle")
    gx = np.stack([(b[:, 1] - cc[:, 1]), -(a[:, 1] - cc[:, 1]), (a[:, 1] - cc[:, 1]) - (b[:, 1] - cc[:, 1])], 1) / det[:, None]
    gy = np.stack([-(b[:, 0] - cc[:, 0]), (a[:, 0] - cc[:, 0]), (b[:, 0] - cc[:, 0]) - (a[:, 0] - cc[:, 0])], 1) / det[:, None]
    ne = len(conn)
    B = np.zeros((ne, 3, 6))
    B[:, 0, 0::2] = gx
    B[:, 1, 1::2] = gy
    B[:, 2, 0::2] = gy
    B[:, 2, 1::2] = gx
    D = plane_strain_matrix(material)
    area = 0.5 * np.abs(det)
    ke = np.einsum("eik,ij,ejl->ekl", B, D, B) * area[:, None, None]
    dofs = np.stack([2 * conn, 2 * conn + 1], axis=2).reshape(ne, 6)
    return _scatter(2 * mesh.n_nodes, dofs, ke, np.zeros((ne, 6)))


def solve_system(system: LinearSystem) -> np.ndarray:
    """Eliminate Dirichlet dofs and solve the SPD remainder.

    Up to ``DENSE_LIMIT`` free dofs a dense Cholesky factorization is used,
    above it Jacobi-preconditioned conjugate gradients.
    """
    n = len(system.load)
    if not system.dirichlet:
        raise SingularSystem("no Dirichlet constraints: the system has rigid modes")
    fixed = np.array(sorted(system.dirichlet), dtype=np.int64)
    u = np.zeros(n)
    u[fixed] = [system.dirichlet[i] for i in fixed]
    free = np.setdiff1d(np.arange(n), fixed)
    K = system.stiffness
    rhs = system.load[free] - K[free][:, fixed] @ u[fixed]
    Kff = K[free][:, free]
    if len(free) == 0:
        return u
    if len(free) <= DENSE_LIMIT:
        try:
            fac = scipy.linalg.cho_factor(Kff.toarray(), lower=True, check_finite=True)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(f"stiffness is not positive definite: {exc}") from None
        u[free] = scipy.linalg.cho_solve(fac, rhs)
    else:
        diag = Kff.diagonal()
        if np.any(diag <= 0):
            raise SingularSystem("non-positive diagonal entry")
        M = sparse.diags(1.0 / diag)
        sol, info = splinalg.cg(Kff, rhs, rtol=CG_RTOL, atol=0.0, maxiter=20 * len(free), M=M)
        if info != 0:
            raise SingularSystem(f"conjugate gradients did not converge (info={info})")
        u[free] = sol
    return u


def dirichlet_1d(mesh: Mesh, bcs: dict) -> dict:
    """Map ``{tag or node id: value}`` to ``{dof: value}``."""
    out = {}
    for key, value in bcs.items():
        nodes = [key] if isinstance(key, (int, np.integer)) else mesh.tagged(key)
        for i in nodes:
            out[int(i)] = float(value)
    return out


def dirichlet_2d(mesh: Mesh, bcs: dict) -> dict:
    out = {}
    for tag, value in bcs.items():
        value = np.broadcast_to(np.asarray(value, dtype=float), (2,))
        for i in mesh.tagged(tag):
            out[2 * int(i)] = float(value[0])
            out[2 * int(i) + 1] = float(value[1])
    return out


def fem_solve_1d(mesh: Mesh, material: Material1D, body_force, bcs: dict, rule=None) -> np.ndarray:
    system = assemble_1d(mesh, material, body_force, rule)
    system.dirichlet = dirichlet_1d(mesh, bcs)
    return solve_system(system)


def fem_solve_2d(mesh: Mesh, material: Material2D, bcs: dict) -> np.ndarray:
    system = assemble_2d(mesh, material)
    system.dirichlet = dirichlet_2d(mesh, bcs)
    return solve_system(system).reshape(-1, 2)


def bar_bcs(problem: Bar1D) -> dict:
    return {"left": 0.0, "right": problem.u_L}


# reference solutions ----------------------------------------------------------------
@dataclass
class Reference2D:
    mesh: Mesh
    U: np.ndarray  # (n, 2)
    centroids: np.ndarray
    u_centroid: np.ndarray  # (ne, 2)
    vm: np.ndarray  # (ne,)


def reference_solution_2d(problem: Plate2D, level: int = 4, cache_dir=None) -> Reference2D:
    """FEM solution on a fine generated mesh, optionally cached as .npz."""
    mesh = problem.mesh(level)
    U = None
    path = None
    if cache_dir is not None:
        os.makedirs(cache_dir, exist_ok=True)
        path = os.path.join(cache_dir, f"plate_ref_{problem.key(level)}.npz")
        if os.path.exists(path):
            with np.load(path) as data:
                if data["U"].shape == (mesh.n_nodes, 2):
                    U = data["U"]
    if U is None:
        U = fem_solve_2d(mesh, problem.material, problem.bcs)
        if path is not None:
            np.savez(path, U=U)
    cent = mesh.centroids()
    u_c = U[mesh.conn].mean(axis=1)
    grad = p1_gradients(mesh, U)
    vm = stress_from_gradient(grad, problem.material).vm
    return Reference2D(mesh, U, cent, u_c, vm)


def p1_gradients(mesh: Mesh, U) -> np.ndarray:
    """Element-wise constant gradients grad[e, c, d] = d u_c / d x_d."""
    conn = mesh.conn
    c = mesh.coords
    a, b, cc = c[conn[:, 0]], c[conn[:, 1]], c[conn[:, 2]]
    det = (a[:, 0] - cc[:, 0]) * (b[:, 1] - cc[:, 1]) - (b[:, 0] - cc[:, 0]) * (a[:, 1] - cc[:, 1])
    dN0 = np.stack([(b[:, 1] - cc[:, 1]), -(b[:, 0] - cc[:, 0])], 1) / det[:, None]
    dN1 = np.stack([-(a[:, 1] - cc[:, 1]), (a[:, 0] - cc[:, 0])], 1) / det[:, None]
    dN2 = -(dN0 + dN1)
    U = np.asarray(U)
    return (U[conn[:, 0]][:, :, None] * dN0[:, None, :] + U[conn[:, 1]][:, :, None] * dN1[:, None, :]
            + U[conn[:, 2]][:, :, None] * dN2[:, None, :])


# error metrics -------------------------------------------------------------------------
def normalized_l2(pred, ref) -> float:
    """||pred - ref|| / ||ref|| over all entries."""
    pred = np.asarray(pred, dtype=float)
    ref = np.asarray(ref, dtype=float)
    den = np.sqrt(np.sum(ref * ref))
    if den == 0.0:
        raise ZeroReferenceNorm("reference field has zero norm")
    return float(np.sqrt(np.sum((pred - ref) ** 2)) / den)


def error_norms_1d(u, du, problem: Bar1D = _DEFAULT_BAR, n_eval: int = 1000) -> dict:
    """Normalized displacement and strain errors at ``n_eval`` uniform points.

    ``u`` and ``du`` are callables mapping an array of points to values.
    """
    x = np.linspace(0.0, problem.L, n_eval)
    return {
        "e_u": normalized_l2(u(x), problem.analytic_u(x)),
        "e_grad": normalized_l2(du(x), problem.analytic_du(x)),
    }


def error_norms(pred_u, ref_u, pred_vm=None, ref_vm=None) -> dict:
    """Displacement (all components), per-component, von Mises and max-VM ratio."""
    pred_u = np.asarray(pred_u, dtype=float).reshape(len(ref_u), -1)
    ref_u = np.asarray(ref_u, dtype=float).reshape(len(ref_u), -1)
    out = {"e_u": normalized_l2(pred_u, ref_u)}
    if ref_u.shape[1] == 2:
        out["e_ux"] = normalized_l2(pred_u[:, 0], ref_u[:, 0])
        out["e_uy"] = normalized_l2(pred_u[:, 1], ref_u[:, 1])
    if pred_vm is not None and ref_vm is not None:
        out["e_vm"] = normalized_l2(pred_vm, ref_vm)
        rmax = float(np.max(ref_vm))
        if rmax == 0.0:
            raise ZeroReferenceNorm("reference von Mises stress is zero everywhere")
        out["vm_max_ratio"] = float(np.max(pred_vm)) / rmax
    return out


def error_norms_2d(model, ref: Reference2D, material: Material2D | None = None) -> dict:
    """Compare a trained 2D model with the reference at its element centroids."""
    material = material or Material2D()
    pe = model.evaluate(ref.centroids)
    n = len(ref.centroids)
    u = np.column_stack([ad.value_of(c) for c in pe.u])
    grad = np.array([[np.broadcast_to(ad.value_of(d), (n,)) for d in row] for row in pe.du])
    grad = np.transpose(grad, (2, 0, 1))
    vm = stress_from_gradient(grad, material).vm
    return error_norms(u, ref.u_centroid, vm, ref.vm)


def validate_analytic(problem: Bar1D = _DEFAULT_BAR, n_nodes: int = 10001) -> float:
    """Relative L2 mismatch between the analytic displacement and a fine FEM
    solve, compared at the FEM nodes."""
    mesh = generate_bar_1d(problem.L, n_nodes)
    u = fem_solve_1d(mesh, problem.material, problem.body_force, bar_bcs(problem))
    return normalized_l2(u, problem.analytic_u(mesh.coords[:, 0]))
