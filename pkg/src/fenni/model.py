"""The finite-element interpolation model with trainable nodal values and
coordinates.

``u(x) = sum_a N_a(xi(x; X)) U_a`` where the element containing ``x`` is
found by point location and ``xi`` is its reference coordinate.  Both the
nodal values ``U`` and the nodal coordinates ``X`` are parameters; frozen
entries (Dirichlet values, domain-boundary coordinates) are held constant.

During training the model is *bound* to a tape: its free parameters become a
slice of one leaf variable and every forward evaluation records onto that
tape.  Unbound, the same code evaluates with plain arrays.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, UnknownTag
from .mesh import GreenMark, Mesh, locate_points

MODES = ("fixed", "r", "rh")
CHECKPOINT_FORMAT = "fenni-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ParamSet:
    """Nodal values ``U`` (n, n_comp) and coordinates ``X`` (n, dim) with
    per-entry frozen flags."""

    U: np.ndarray
    X: np.ndarray
    frozen_U: np.ndarray
    frozen_X: np.ndarray

    def copy(self) -> "ParamSet":
        return ParamSet(self.U.copy(), self.X.copy(), self.frozen_U.copy(), self.frozen_X.copy())

    @property
    def n_free(self) -> int:
        return int((~self.frozen_U).sum() + (~self.frozen_X).sum())


@dataclass
class PointEval:
    """Model output at a batch of points.

    ``x[d]``, ``u[c]`` and ``du[c][d]`` are arrays (or tape variables)
    broadcastable to the batch shape; ``measure`` is the quadrature Jacobian
    factor when the points come from a quadrature rule.
    """

    x: list
    u: list
    du: list
    measure: object = None
    elements: np.ndarray | None = None
    N: np.ndarray | None = None  # shape values (n_points, n_local) at quadrature points
    dN: list | None = None  # dN[a][d], physical shape derivatives


@dataclass
class _Binding:
    u: list = field(default_factory=list)  # per component, (n,)
    x: list = field(default_factory=list)  # per dimension, (n,)


class FenniModel:
    """Interpolation model on ``mesh``.

    Parameters
    ----------
    mesh
        Discretization; its order sets the interpolation order.
    n_comp
        Number of field components (default: 1 in 1D, 2 in 2D).
    mode
        ``fixed`` freezes every coordinate; ``r`` and ``rh`` leave interior
        coordinates trainable.
    init
        Uniform initial nodal value (default 0.1 in 1D, 0.5 in 2D).
    """

    def __init__(self, mesh: Mesh, n_comp: int | None = None, mode: str = "fixed", init: float | None = None):
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
        self.mesh = mesh
        self.initial_mesh = mesh
        self.mode = mode
        self.n_comp = n_comp or mesh.dim
        if init is None:
            init = 0.1 if mesh.dim == 1 else 0.5
        n = mesh.n_nodes
        self.params = ParamSet(
            np.full((n, self.n_comp), float(init)),
            np.array(mesh.coords, dtype=float),
            np.zeros((n, self.n_comp), dtype=bool),
            self._default_frozen_X(mesh, mode),
        )
        self.dirichlet: dict = {}
        self._bound: _Binding | None = None

    # construction helpers -------------------------------------------------
    @staticmethod
    def _default_frozen_X(mesh: Mesh, mode: str) -> np.ndarray:
        if mode == "fixed":
            return np.ones((mesh.n_nodes, mesh.dim), dtype=bool)
        frozen = np.repeat(mesh.on_boundary[:, None], mesh.dim, axis=1)
        if mesh.dim == 1 and mesh.order == 2:
            frozen[mesh.conn[:, 2]] = True  # mid-nodes follow their endpoints
        return frozen

    @property
    def order(self) -> int:
        return self.mesh.order

    @property
    def dim(self) -> int:
        return self.mesh.dim

    def __repr__(self) -> str:
        return f"FenniModel({self.mesh!r}, mode={self.mode!r}, free={self.params.n_free})"

    def copy(self) -> "FenniModel":
        new = FenniModel.__new__(FenniModel)
        new.mesh = self.mesh
        new.initial_mesh = self.initial_mesh
        new.mode = self.mode
        new.n_comp = self.n_comp
        new.params = self.params.copy()
        new.dirichlet = {k: np.array(v) for k, v in self.dirichlet.items()}
        new._bound = None
        return new

    def current_mesh(self) -> Mesh:
        """The mesh with the trained nodal coordinates."""
        return self.mesh.with_coords(self.params.X)

    def set_dirichlet(self, tag: str, value) -> None:
        set_dirichlet(self, tag, value)

    def reapply_dirichlet(self) -> None:
        for tag, value in self.dirichlet.items():
            nodes = self.mesh.tagged(tag)
            self.params.U[nodes] = value
            self.params.frozen_U[nodes] = True

    # free-parameter vector ------------------------------------------------
    def free_vector(self) -> np.ndarray:
        p = self.params
        return np.concatenate([p.U[~p.frozen_U], p.X[~p.frozen_X]])

    def set_free_vector(self, theta) -> None:
        p = self.params
        theta = np.asarray(theta, dtype=float)
        nu = int((~p.frozen_U).sum())
        p.U[~p.frozen_U] = theta[:nu]
        p.X[~p.frozen_X] = theta[nu:]
        self._sync_midnodes()

    def _sync_midnodes(self) -> None:
        if self.dim == 1 and self.order == 2:
            c = self.mesh.conn
            self.params.X[c[:, 2]] = 0.5 * (self.params.X[c[:, 0]] + self.params.X[c[:, 1]])

    def jacobians(self, X=None) -> np.ndarray:
        return self.mesh.jacobians(self.params.X if X is None else X)

    def trial_jacobians(self, theta) -> np.ndarray:
        """Element Jacobians if the free vector were ``theta``."""
        p = self.params
        nu = int((~p.frozen_U).sum())
        X = p.X.copy()
        X[~p.frozen_X] = np.asarray(theta)[nu:]
        return self.mesh.jacobians(X)

    # tape binding ---------------------------------------------------------
    def bind(self, theta: ad.Var, offset: int = 0) -> int:
        """Route the free parameters through ``theta[offset:offset + n_free]``.

        Returns the offset just past this model's slice.
        """
        p = self.params
        nu = int((~p.frozen_U).sum())
        nx = int((~p.frozen_X).sum())
        b = _Binding()
        b.u = self._bind_array(theta, offset, nu, p.U, p.frozen_U)
        b.x = self._bind_array(theta, offset + nu, nx, p.X, p.frozen_X)
        self._bound = b
        return offset + nu + nx

    @staticmethod
    def _bind_array(theta, start, count, values, frozen) -> list:
        n, k = values.shape
        if count == 0:
            return [values[:, c].copy() for c in range(k)]
        free_flat = np.flatnonzero(~frozen.ravel())
        const = np.where(frozen, values, 0.0).ravel()
        full = ad.scatter_add(theta[start : start + count], free_flat, n * k) + const
        if k == 1:
            return [full]
        return [full[np.arange(n) * k + c] for c in range(k)]

    def unbind(self) -> None:
        self._bound = None

    def variables(self):
        """(per-component U, per-dimension X) as tape variables when bound,
        plain arrays otherwise."""
        if self._bound is not None:
            return self._bound.u, self._bound.x
        p = self.params
        return [p.U[:, c] for c in range(self.n_comp)], [p.X[:, d] for d in range(self.dim)]

    # forward evaluation ---------------------------------------------------
    def at_quadrature(self, rule) -> PointEval:
        """Model output at the mapped points of ``rule`` on every element;
        arrays have shape (n_elements, n_points)."""
        U, X = self.variables()
        conn = self.mesh.conn
        ne = self.mesh.n_elements
        if self.dim == 1:
            xi = np.asarray(rule.points, dtype=float)
            xa = X[0][conn[:, 0]].reshape(ne, 1)
            xb = X[0][conn[:, 1]].reshape(ne, 1)
            h = xb - xa
            x = xa + h * ((xi + 1.0) * 0.5)
            vals, grads = _shape_tables_1d(xi, self.order)
            u, du = [], []
            for Uc in U:
                nodal = [Uc[conn[:, a]].reshape(ne, 1) for a in range(conn.shape[1])]
                u.append(_dot(nodal, [vals[:, a] for a in range(len(nodal))]))
                du.append([_dot(nodal, [grads[:, a] for a in range(len(nodal))]) * (2.0 / h)])
            dN = [[grads[:, a] * (2.0 / h)] for a in range(conn.shape[1])]
            return PointEval([x], u, du, 0.5 * h, np.arange(ne), vals, dN)

        pts = np.asarray(rule.points, dtype=float)
        N = np.stack([pts[:, 0], pts[:, 1], 1.0 - pts[:, 0] - pts[:, 1]], axis=1)
        geo = _tri_geometry(X, conn, ne)
        x = [sum_(geo.v[d][a] * N[:, a] for a in range(3)) for d in range(2)]
        u, du = [], []
        for Uc in U:
            nodal = [Uc[conn[:, a]].reshape(ne, 1) for a in range(3)]
            u.append(_dot(nodal, [N[:, a] for a in range(3)]))
            du.append([_dot(nodal, [geo.dN[a][d] for a in range(3)]) for d in range(2)])
        return PointEval(x, u, du, ad.absolute(geo.det), np.arange(ne), N, geo.dN)

    def evaluate(self, pts, elements=None) -> PointEval:
        """Model output at fixed physical points (n,) in 1D or (n, 2) in 2D.

        Points are located in the current mesh; points outside every
        element take the value of the closest node (zero gradient in 1D,
        gradient of that node's first element in 2D).
        """
        U, X = self.variables()
        conn = self.mesh.conn
        pts = np.asarray(pts, dtype=float)
        Xv = self.params.X
        if elements is None:
            elem, _ref, nearest = locate_points(self.mesh, pts, Xv)
        else:
            elem = np.asarray(elements, dtype=np.int64)
            nearest = np.zeros(len(elem), dtype=np.int64)
        outside = elem < 0
        if self.dim == 1:
            pts = pts.reshape(-1)
            e = np.where(outside, 0, elem)
            xa, xb = X[0][conn[e, 0]], X[0][conn[e, 1]]
            h = xb - xa
            if self.order == 1:
                n0 = (xb - pts) / h
                n1 = (pts - xa) / h
                vals = [n0, n1]
                grads = [-1.0 / h, 1.0 / h]
            else:
                xi = (pts - xa) * (2.0 / h) - 1.0
                vals = [0.5 * xi * (xi - 1.0), 0.5 * xi * (xi + 1.0), 1.0 - xi * xi]
                s = 2.0 / h
                grads = [(xi - 0.5) * s, (xi + 0.5) * s, xi * (-2.0) * s]
            u, du = [], []
            for Uc in U:
                nodal = [Uc[conn[e, a]] for a in range(conn.shape[1])]
                uc, gc = _dot(nodal, vals), _dot(nodal, grads)
                if outside.any():
                    uc = ad.where(outside, Uc[nearest], uc)
                    gc = ad.where(outside, 0.0, gc)
                u.append(uc)
                du.append([gc])
            return PointEval([pts], u, du, None, elem)

        pts = pts.reshape(-1, 2)
        e = elem.copy()
        if outside.any():
            first = _first_element_of_nodes(conn, self.mesh.n_nodes)
            e[outside] = first[nearest[outside]]
        geo = _tri_geometry(X, conn[e], len(e), flat=True)
        xc, yc = geo.v[0][2], geo.v[1][2]
        dx, dy = pts[:, 0] - xc, pts[:, 1] - yc
        la = (geo.j22 * dx - geo.j12 * dy) / geo.det
        lb = (geo.j11 * dy - geo.j21 * dx) / geo.det
        vals = [la, lb, 1.0 - la - lb]
        u, du = [], []
        for Uc in U:
            nodal = [Uc[conn[e, a]] for a in range(3)]
            uc = _dot(nodal, vals)
            if outside.any():
                uc = ad.where(outside, Uc[nearest], uc)
            u.append(uc)
            du.append([_dot(nodal, [geo.dN[a][d] for a in range(3)]) for d in range(2)])
        return PointEval([pts[:, 0], pts[:, 1]], u, du, None, elem)

    def __call__(self, pts) -> np.ndarray:
        """Plain-array displacement at ``pts``: (n,) in 1D, (n, n_comp) in 2D."""
        pe = self.evaluate(pts)
        u = np.column_stack([ad.value_of(c) for c in pe.u])
        return u[:, 0] if self.n_comp == 1 else u

    def gradient(self, pts) -> np.ndarray:
        """Plain-array gradient at ``pts``: (n,) in 1D, (n, n_comp, dim) in 2D."""
        pe = self.evaluate(pts)
        n = len(pe.elements)
        g = np.array([[np.broadcast_to(ad.value_of(d), (n,)) for d in row] for row in pe.du])
        if self.dim == 1 and self.n_comp == 1:
            return g[0, 0]
        return np.transpose(g, (2, 0, 1))

    # sample points anchored to the initial mesh ---------------------------
    def trapezoid_samples(self, n: int) -> np.ndarray:
        from .quadrature import trapezoid_points

        return trapezoid_points(self.initial_mesh, n)

    def interior_samples(self, n: int) -> np.ndarray:
        """``n`` points per element at (k + 1/2)/n of each initial element."""
        m = self.initial_mesh
        xa = m.coords[m.conn[:, 0], 0]
        xb = m.coords[m.conn[:, 1], 0]
        t = (np.arange(n) + 0.5) / n
        return np.sort((xa[:, None] + (xb - xa)[:, None] * t[None, :]).ravel())


def forward(model: FenniModel, x, elem_id: int):
    """Interpolated value at a single point ``x`` inside element ``elem_id``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    pts = x if model.dim == 1 else x[None, :]
    pe = model.evaluate(pts, elements=[elem_id])
    vals = [c[0] if isinstance(c, ad.Var) else np.asarray(c)[0] for c in pe.u]
    return vals[0] if model.n_comp == 1 else vals


def set_dirichlet(model: FenniModel, tag: str, value) -> None:
    """Set and freeze the nodal values of every node tagged ``tag``."""
    if tag not in model.mesh.tags():
        raise UnknownTag(tag)
    value = np.broadcast_to(np.asarray(value, dtype=float), (model.n_comp,)).copy()
    model.dirichlet[tag] = value
    nodes = model.mesh.tagged(tag)
    model.params.U[nodes] = value
    model.params.frozen_U[nodes] = True


# geometry helpers -------------------------------------------------------------
def sum_(terms):
    out = None
    for t in terms:
        out = t if out is None else out + t
    return out


def _dot(nodal, weights):
    return sum_(n * w for n, w in zip(nodal, weights))


def _shape_tables_1d(xi, order):
    if order == 1:
        vals = np.stack([0.5 - 0.5 * xi, 0.5 + 0.5 * xi], axis=1)
        grads = np.tile([-0.5, 0.5], (len(xi), 1))
    else:
        vals = np.stack([0.5 * xi * (xi - 1.0), 0.5 * xi * (xi + 1.0), 1.0 - xi * xi], axis=1)
        grads = np.stack([xi - 0.5, xi + 0.5, -2.0 * xi], axis=1)
    return vals, grads


@dataclass
class _TriGeo:
    v: list  # v[d][a]: coordinate d of vertex a
    j11: object
    j12: object
    j21: object
    j22: object
    det: object
    dN: list  # dN[a][d]


def _tri_geometry(X, conn, ne, flat=False) -> _TriGeo:
    shape = (ne,) if flat else (ne, 1)
    v = [[X[d][conn[:, a]].reshape(shape) for a in range(3)] for d in range(2)]
    j11 = v[0][0] - v[0][2]
    j12 = v[0][1] - v[0][2]
    j21 = v[1][0] - v[1][2]
    j22 = v[1][1] - v[1][2]
    det = j11 * j22 - j12 * j21
    inv = 1.0 / det
    dN0 = [j22 * inv, -(j12 * inv)]
    dN1 = [-(j21 * inv), j11 * inv]
    dN2 = [-(dN0[0] + dN1[0]), -(dN0[1] + dN1[1])]
    return _TriGeo(v, j11, j12, j21, j22, det, [dN0, dN1, dN2])


def _first_element_of_nodes(conn, n):
    first = np.full(n, -1, dtype=np.int64)
    for e in range(len(conn) - 1, -1, -1):
        first[conn[e]] = e
    return first


# checkpoints --------------------------------------------------------------------
def _mesh_to_dict(mesh: Mesh) -> dict:
    return {
        "coords": mesh.coords.tolist(),
        "conn": mesh.conn.tolist(),
        "order": mesh.order,
        "node_tags": list(mesh.node_tags),
        "split_count": mesh.split_count.tolist(),
        "green": [
            None if g is None else [list(g.parent), g.parent_split_count, g.midpoint, list(g.edge)]
            for g in mesh.green
        ],
    }


def _mesh_from_dict(d: dict) -> Mesh:
    green = [
        None if g is None else GreenMark(tuple(g[0]), int(g[1]), int(g[2]), tuple(g[3])) for g in d["green"]
    ]
    coords = np.array(d["coords"], dtype=float)
    return Mesh(coords, np.array(d["conn"], dtype=np.int64), order=d["order"], node_tags=d["node_tags"],
                split_count=np.array(d["split_count"], dtype=np.int64), green=green)


def save_checkpoint(model: FenniModel, path) -> None:
    """Lossless JSON checkpoint (floats are written with round-trip repr)."""
    p = model.params
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "mode": model.mode,
        "n_comp": model.n_comp,
        "mesh": _mesh_to_dict(model.mesh),
        "initial_mesh": _mesh_to_dict(model.initial_mesh),
        "U": p.U.tolist(),
        "X": p.X.tolist(),
        "frozen_U": p.frozen_U.tolist(),
        "frozen_X": p.frozen_X.tolist(),
        "dirichlet": {k: np.asarray(v).tolist() for k, v in model.dirichlet.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> FenniModel:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a model checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    mesh = _mesh_from_dict(doc["mesh"])
    model = FenniModel(mesh, n_comp=doc["n_comp"], mode=doc["mode"])
    model.initial_mesh = _mesh_from_dict(doc["initial_mesh"])
    model.params = ParamSet(
        np.array(doc["U"], dtype=float).reshape(mesh.n_nodes, -1),
        np.array(doc["X"], dtype=float).reshape(mesh.n_nodes, -1),
        np.array(doc["frozen_U"], dtype=bool).reshape(mesh.n_nodes, -1),
        np.array(doc["frozen_X"], dtype=bool).reshape(mesh.n_nodes, -1),
    )
    model.dirichlet = {k: np.array(v, dtype=float) for k, v in doc["dirichlet"].items()}
    return model
