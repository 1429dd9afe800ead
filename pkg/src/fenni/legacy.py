"""1D interpolation built from ReLU blocks and an affine assembly layer.

Each element produces auxiliary piecewise functions from the linear building
block; a sparse affine layer ``N = A @ aux + b`` combines them into the
global shape functions.  The construction is independent of the reference
element machinery in :mod:`fenni.model`, which makes it a useful cross-check.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse

from . import autodiff as ad
from .errors import DegenerateElement, UnsupportedDimension


def legacy_linear_block(x, xa, xb, ya, yb):
    """Constant ``ya`` left of ``xa``, linear ramp to ``yb`` at ``xb``,
    constant ``yb`` beyond."""
    if np.any(ad.value_of(xb) <= ad.value_of(xa)):
        raise DegenerateElement("linear block needs xb > xa")
    inner = ad.relu(xb - x) * (-1.0) / (xb - xa) + 1.0
    return (yb - ya) * ad.relu(inner) + ya


def element_block(x, xa, xb, order: int = 1, xm=None):
    """Auxiliary functions of one element, each with constant tails.

    Linear: ``(down, up)``; quadratic: ``(left, right, mid)`` where ``left``
    and ``right`` are the end-node Lagrange parabolas extended by 1 on their
    own side and 0 on the other, and ``mid`` vanishes outside the element.
    """
    if order == 1:
        return (legacy_linear_block(x, xa, xb, 1.0, 0.0), legacy_linear_block(x, xa, xb, 0.0, 1.0))
    if xm is None:
        xm = 0.5 * (xa + xb)
    h = xb - xa
    left = legacy_linear_block(x, xa, xb, xm - xa, xm - xb) * legacy_linear_block(x, xa, xb, h, 0.0)
    left = left / ((xa - xm) * (xa - xb))
    right = legacy_linear_block(x, xa, xb, 0.0, h) * legacy_linear_block(x, xa, xb, xa - xm, xb - xm)
    right = right / (h * (xb - xm))
    mid = legacy_linear_block(x, xa, xb, 0.0, h) * legacy_linear_block(x, xa, xb, h, 0.0)
    mid = mid / ((xm - xa) * (xb - xm))
    return (left, right, mid)


def assembly_matrices(mesh):
    """Sparse ``A`` (n_nodes, n_aux) and ``b`` (n_nodes,) of the assembly layer.

    Auxiliary functions are numbered element by element in local node order,
    so ``A`` routes aux ``k * e + a`` to node ``conn[e, a]``.  Each node sums
    the auxiliaries of its elements and subtracts one per extra element to
    cancel the constant tails.
    """
    if mesh.dim != 1:
        raise UnsupportedDimension("the assembly layer is defined for 1D meshes only")
    ne, k = mesh.conn.shape
    rows = mesh.conn.ravel()
    cols = np.arange(ne * k)
    A = sparse.csr_matrix((np.ones(ne * k), (rows, cols)), shape=(mesh.n_nodes, ne * k))
    degree = np.bincount(rows, minlength=mesh.n_nodes)
    b = -(degree - 1).astype(float)
    return A, b


def legacy_assemble(aux, mesh):
    """Global shape values from auxiliary values ``aux`` (n_points, n_aux)."""
    A, b = assembly_matrices(mesh)
    return ad.matmul(aux, A.T.toarray()) + b


class LegacyHidennModel:
    """1D model evaluated through the assembly layer.

    Shares the :class:`~fenni.model.ParamSet` of a FENNI model, so both
    architectures can be compared on identical parameters.
    """

    def __init__(self, mesh, params):
        if mesh.dim != 1:
            raise UnsupportedDimension("the legacy architecture is 1D only")
        self.mesh = mesh
        self.params = params
        self._A, self._b = assembly_matrices(mesh)

    def auxiliaries(self, x, X=None):
        X = self.params.X[:, 0] if X is None else X
        conn = self.mesh.conn
        ne = len(conn)
        x = np.asarray(x, dtype=float).reshape(-1, 1)
        xa = X[conn[:, 0]].reshape(1, ne)
        xb = X[conn[:, 1]].reshape(1, ne)
        xm = X[conn[:, 2]].reshape(1, ne) if self.mesh.order == 2 else None
        funcs = element_block(x, xa, xb, self.mesh.order, xm)
        # interleave to aux index k * e + a
        k = len(funcs)
        n = x.shape[0]
        if not any(isinstance(f, ad.Var) for f in funcs):
            return np.stack([np.broadcast_to(f, (n, ne)) for f in funcs], axis=2).reshape(n, ne * k)
        scat = [np.arange(ne) * k + a for a in range(k)]
        out = None
        for f, idx in zip(funcs, scat):
            spread = ad.matmul(f, _selector(ne, idx, ne * k))
            out = spread if out is None else out + spread
        return out

    def shape_values(self, x, X=None):
        aux = self.auxiliaries(x, X)
        return ad.matmul(aux, self._A.T.toarray()) + self._b

    def __call__(self, x, U=None):
        U = self.params.U[:, 0] if U is None else U
        N = self.shape_values(x)
        return ad.matmul(N, U.reshape(-1, 1)).reshape(-1)


def _selector(ne, idx, width):
    m = np.zeros((ne, width))
    m[np.arange(ne), idx] = 1.0
    return m
