"""Meshes of the computational domain and their refinement.

A :class:`Mesh` stores node coordinates and a connectivity table as numpy
arrays.  1D elements list ``(left, right)`` or ``(left, right, mid)`` node
ids; triangles list ``(a, b, c)`` counter-clockwise.  Meshes are immutable:
refinement and coordinate updates return new instances.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .errors import InvalidDiscretization, InvalidGeometry

BARY_TOL = 1e-9


@dataclass(frozen=True)
class Node:
    id: int
    coords: tuple
    on_boundary: bool
    dirichlet_tag: str | None = None


@dataclass(frozen=True)
class GreenMark:
    """Bookkeeping carried by both halves of a green bisection."""

    parent: tuple  # parent connectivity (a, b, c)
    parent_split_count: int
    midpoint: int  # node inserted on the bisected edge
    edge: tuple  # the bisected parent edge (p, q)


@dataclass(frozen=True)
class Element:
    id: int
    node_ids: tuple
    split_count: int = 0
    jacobian_prev: float | None = None
    green: GreenMark | None = None


class Located(NamedTuple):
    element: int
    ref: tuple


class NearestNode(NamedTuple):
    node: int


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


class Mesh:
    """Nodes, connectivity and boundary classification of a 1D or 2D domain."""

    def __init__(
        self,
        coords,
        conn,
        *,
        order: int = 1,
        node_tags: Sequence[str | None] | None = None,
        split_count=None,
        green: Sequence[GreenMark | None] | None = None,
        jacobian_prev=None,
    ):
        coords = np.asarray(coords, dtype=float)
        if coords.ndim == 1:
            coords = coords[:, None]
        conn = np.asarray(conn, dtype=np.int64)
        if conn.ndim != 2 or len(conn) == 0:
            raise InvalidDiscretization("mesh needs at least one element")
        if not np.all(np.isfinite(coords)):
            raise InvalidGeometry("node coordinates must be finite")
        if conn.min() < 0 or conn.max() >= len(coords):
            raise InvalidDiscretization("connectivity references a missing node")
        self.coords = _frozen(coords)
        self.conn = _frozen(conn)
        self.dim = coords.shape[1]
        self.order = int(order)
        n = len(coords)
        self.node_tags = tuple(node_tags) if node_tags is not None else (None,) * n
        if len(self.node_tags) != n:
            raise ValueError("node_tags length does not match node count")
        ne = len(conn)
        self.split_count = _frozen(np.zeros(ne, dtype=np.int64) if split_count is None else split_count)
        self.green = tuple(green) if green is not None else (None,) * ne
        self.jacobian_prev = None if jacobian_prev is None else _frozen(np.asarray(jacobian_prev, dtype=float))
        self._boundary = None

    # sizes ------------------------------------------------------------------
    @property
    def n_nodes(self) -> int:
        return len(self.coords)

    @property
    def n_elements(self) -> int:
        return len(self.conn)

    def __repr__(self) -> str:
        return f"Mesh(dim={self.dim}, order={self.order}, nodes={self.n_nodes}, elements={self.n_elements})"

    # record views -----------------------------------------------------------
    @property
    def nodes(self) -> list[Node]:
        bnd = self.on_boundary
        return [
            Node(i, tuple(float(c) for c in self.coords[i]), bool(bnd[i]), self.node_tags[i])
            for i in range(self.n_nodes)
        ]

    @property
    def elements(self) -> list[Element]:
        jp = self.jacobian_prev
        return [
            Element(
                e,
                tuple(int(i) for i in self.conn[e]),
                int(self.split_count[e]),
                None if jp is None else float(jp[e]),
                self.green[e],
            )
            for e in range(self.n_elements)
        ]

    # topology ---------------------------------------------------------------
    def edges(self) -> dict:
        """Edge (sorted node pair) -> list of element ids, in element order."""
        out: dict = {}
        if self.dim == 1:
            return out
        for e, (a, b, c) in enumerate(self.conn):
            for p, q in ((a, b), (b, c), (c, a)):
                key = (p, q) if p < q else (q, p)
                out.setdefault((int(key[0]), int(key[1])), []).append(e)
        return out

    @property
    def on_boundary(self) -> np.ndarray:
        if self._boundary is None:
            flags = np.zeros(self.n_nodes, dtype=bool)
            if self.dim == 1:
                ends = self.conn[:, :2].ravel()
                counts = np.bincount(ends, minlength=self.n_nodes)
                flags[counts == 1] = True
            else:
                for (p, q), els in self.edges().items():
                    if len(els) == 1:
                        flags[p] = flags[q] = True
            flags.setflags(write=False)
            self._boundary = flags
        return self._boundary

    @property
    def neighbor_map(self) -> list[tuple]:
        """Elements sharing an edge (2D) or an end node (1D), ascending ids."""
        nbr: list[set] = [set() for _ in range(self.n_elements)]
        if self.dim == 1:
            by_node: dict = {}
            for e, row in enumerate(self.conn):
                for i in row[:2]:
                    by_node.setdefault(int(i), []).append(e)
            groups = by_node.values()
        else:
            groups = self.edges().values()
        for els in groups:
            for e in els:
                nbr[e].update(x for x in els if x != e)
        return [tuple(sorted(s)) for s in nbr]

    def tags(self) -> list[str]:
        return sorted({t for t in self.node_tags if t is not None})

    def tagged(self, tag: str) -> np.ndarray:
        return np.array([i for i, t in enumerate(self.node_tags) if t == tag], dtype=np.int64)

    # geometry ---------------------------------------------------------------
    def jacobians(self, coords=None) -> np.ndarray:
        """Signed Jacobian of every element (element length in 1D)."""
        return element_jacobians(self.coords if coords is None else coords, self.conn, self.dim)

    def measure(self) -> float:
        """Total length (1D) or area (2D) covered by the elements."""
        j = np.abs(self.jacobians())
        return float(j.sum() if self.dim == 1 else 0.5 * j.sum())

    def centroids(self, coords=None) -> np.ndarray:
        c = self.coords if coords is None else np.asarray(coords)
        return c[self.conn[:, : (2 if self.dim == 1 else 3)]].mean(axis=1)

    # derived meshes ---------------------------------------------------------
    def with_coords(self, coords) -> "Mesh":
        return Mesh(
            coords,
            self.conn,
            order=self.order,
            node_tags=self.node_tags,
            split_count=self.split_count,
            green=self.green,
            jacobian_prev=self.jacobian_prev,
        )

    def with_jacobian_prev(self, jac) -> "Mesh":
        return Mesh(
            self.coords,
            self.conn,
            order=self.order,
            node_tags=self.node_tags,
            split_count=self.split_count,
            green=self.green,
            jacobian_prev=jac,
        )

    def elevate(self) -> "Mesh":
        """Quadratic 1D mesh: one mid-node appended per element."""
        if self.dim != 1 or self.order != 1:
            raise ValueError("only linear 1D meshes can be elevated")
        mids = 0.5 * (self.coords[self.conn[:, 0]] + self.coords[self.conn[:, 1]])
        coords = np.vstack([self.coords, mids])
        mid_ids = self.n_nodes + np.arange(self.n_elements)
        conn = np.column_stack([self.conn, mid_ids])
        tags = self.node_tags + (None,) * self.n_elements
        return Mesh(coords, conn, order=2, node_tags=tags, split_count=self.split_count)

    def same_topology(self, other: "Mesh") -> bool:
        return self.conn.shape == other.conn.shape and bool(np.all(self.conn == other.conn))


def element_jacobians(coords, conn, dim: int) -> np.ndarray:
    coords = np.asarray(coords, dtype=float)
    if dim == 1:
        return coords[conn[:, 1], 0] - coords[conn[:, 0], 0]
    a, b, c = coords[conn[:, 0]], coords[conn[:, 1]], coords[conn[:, 2]]
    return (a[:, 0] - c[:, 0]) * (b[:, 1] - c[:, 1]) - (b[:, 0] - c[:, 0]) * (a[:, 1] - c[:, 1])


def signed_jacobian(mesh: Mesh, e: int) -> float:
    """(xa-xc)(yb-yc) - (xb-xc)(ya-yc): twice the signed triangle area.

    For 1D meshes the element length is returned.
    """
    return float(element_jacobians(mesh.coords, mesh.conn[e : e + 1], mesh.dim)[0])


# generators -----------------------------------------------------------------
def generate_bar_1d(L: float, np_: int) -> Mesh:
    """Uniform mesh of [0, L] with ``np_`` nodes; the ends are tagged
    ``left`` and ``right``."""
    if np_ < 2:
        raise InvalidDiscretization(f"a 1D mesh needs at least 2 nodes, got {np_}")
    if not L > 0:
        raise InvalidGeometry("bar length must be positive")
    x = np.linspace(0.0, L, np_)
    conn = np.column_stack([np.arange(np_ - 1), np.arange(1, np_)])
    tags = ["left"] + [None] * (np_ - 2) + ["right"]
    return Mesh(x, conn, node_tags=tags)


def _ccw(coords: np.ndarray, conn: np.ndarray) -> np.ndarray:
    conn = conn.copy()
    flip = element_jacobians(coords, conn, 2) < 0
    conn[flip, 1], conn[flip, 2] = conn[flip, 2].copy(), conn[flip, 1].copy()
    return conn


def _refine_uniform(coords: np.ndarray, conn: np.ndarray, project=None):
    """Red-split every triangle.  ``project(p, q, mid)`` may move the
    midpoint of a boundary edge (p, q)."""
    coords = [tuple(c) for c in coords]
    count: dict = {}
    for a, b, c in conn:
        for p, q in ((a, b), (b, c), (c, a)):
            key = (min(p, q), max(p, q))
            count[key] = count.get(key, 0) + 1
    mid: dict = {}

    def midpoint(p, q):
        key = (min(p, q), max(p, q))
        if key not in mid:
            m = 0.5 * (np.asarray(coords[p]) + np.asarray(coords[q]))
            if project is not None and count[key] == 1:
                m = project(p, q, m)
            mid[key] = len(coords)
            coords.append(tuple(m))
        return mid[key]

    out = []
    for a, b, c in conn:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        out += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
    return np.array(coords), np.array(out, dtype=np.int64)


def generate_plate_with_hole(
    width: float = 10.0,
    height: float = 5.0,
    hole_center: Sequence[float] = (5.0, 2.5),
    hole_radius: float = 1.0,
    refine_level: int = 0,
) -> Mesh:
    """Triangulated rectangle with a circular hole.

    The level-0 mesh is a Delaunay triangulation of a 16-gon on the hole, a
    blending ring of 8 nodes around it, the rectangle boundary and a sparse
    interior fill.  Each level red-splits every triangle and snaps new
    hole-boundary nodes onto the circle, doubling the hole polygon.  Nodes on
    x = 0 are tagged ``left`` and on x = width ``right``.
    """
    cx, cy = map(float, hole_center)
    r = float(hole_radius)
    if not r > 0:
        raise InvalidGeometry("hole radius must be positive")
    gap = min(cx - r, width - cx - r, cy - r, height - cy - r)
    if not gap > 0:
        raise InvalidGeometry("hole must lie strictly inside the rectangle")
    if refine_level < 0:
        raise InvalidDiscretization("refine_level must be non-negative")

    t16 = 2.0 * np.pi * np.arange(16) / 16
    hole = np.column_stack([cx + r * np.cos(t16), cy + r * np.sin(t16)])
    rho = r + 0.55 * gap
    t8 = 2.0 * np.pi * (np.arange(8) + 0.5) / 8
    ring = np.column_stack([cx + rho * np.cos(t8), cy + rho * np.sin(t8)])

    s = min(width, height) / 3.0
    nx = max(2, int(round(width / s)))
    ny = max(2, int(round(height / s)))
    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    boundary = [(x, 0.0) for x in xs] + [(x, height) for x in xs]
    boundary += [(0.0, y) for y in ys[1:-1]] + [(width, y) for y in ys[1:-1]]
    fill = []
    for x in xs[1:-1]:
        for y in ys[1:-1]:
            if np.hypot(x - cx, y - cy) > rho + 0.5 * s:
                fill.append((x, y))
    pts = np.vstack([hole, ring, np.array(boundary), np.array(fill).reshape(-1, 2)])

    tri = Delaunay(pts).simplices
    cent = pts[tri].mean(axis=1)
    keep = np.hypot(cent[:, 0] - cx, cent[:, 1] - cy) > r
    conn = _ccw(pts, np.asarray(tri[keep], dtype=np.int64))
    # stable, geometry-based element order
    c = pts[conn].mean(axis=1)
    conn = conn[np.lexsort((c[:, 0], c[:, 1]))]

    def snap(p, q, m):
        d = np.hypot(m[0] - cx, m[1] - cy)
        if d < r + 1e-6 * r and np.hypot(pts_all[p][0] - cx, pts_all[p][1] - cy) < r * (1 + 1e-9):
            return np.array([cx + r * (m[0] - cx) / d, cy + r * (m[1] - cy) / d])
        return m

    coords = pts
    for _ in range(refine_level):
        pts_all = coords
        coords, conn = _refine_uniform(coords, conn, snap)

    tags = []
    for x, _y in coords:
        if x == 0.0:
            tags.append("left")
        elif x == width:
            tags.append("right")
        else:
            tags.append(None)
    mesh = Mesh(coords, conn, node_tags=tags)
    if np.min(mesh.jacobians()) <= 0:
        raise InvalidGeometry("generated mesh contains inverted elements")
    return mesh


# conformity -----------------------------------------------------------------
def conformity_audit(mesh: Mesh) -> dict:
    """Edge-hashing audit of a triangle mesh.

    Returns the number of edges shared by more than two elements and the
    number of hanging nodes (nodes lying inside a single-element edge).
    """
    if mesh.dim == 1:
        return {"overshared_edges": 0, "hanging_nodes": 0, "conforming": True}
    edges = mesh.edges()
    over = sum(1 for els in edges.values() if len(els) > 2)
    bedges = np.array([k for k, els in edges.items() if len(els) == 1], dtype=np.int64).reshape(-1, 2)
    hanging = 0
    if len(bedges):
        p, q = mesh.coords[bedges[:, 0]], mesh.coords[bedges[:, 1]]
        d = q - p
        ln2 = np.einsum("ij,ij->i", d, d)
        tree = cKDTree(mesh.coords)
        mids = 0.5 * (p + q)
        for k, cand in enumerate(tree.query_ball_point(mids, 0.5 * np.sqrt(ln2) * (1 + 1e-9))):
            for n in cand:
                if n in bedges[k]:
                    continue
                w = mesh.coords[n] - p[k]
                t = float(w @ d[k]) / ln2[k]
                dist2 = float(w @ w) - t * t * ln2[k]
                if 1e-12 < t < 1 - 1e-12 and dist2 <= 1e-20 * ln2[k]:
                    hanging += 1
    return {"overshared_edges": over, "hanging_nodes": hanging, "conforming": over == 0 and hanging == 0}


# red-green refinement -------------------------------------------------------
def red_green_refine(mesh: Mesh, marked, max_splits: int, return_parents: bool = False):
    """Red-split marked triangles; green-bisect neighbours to stay conforming.

    Marked elements already at ``max_splits`` are ignored.  Children of a
    marked element carry ``split_count + 1``; elements refined only to keep
    the mesh conforming keep their count.  A green pair is merged back into
    its parent before any further refinement touches it, and the restored
    parent is red-split.  Elements that end up with two or more bisected
    edges are red-split as well.  Passes repeat until no hanging node is
    left.

    With ``return_parents`` the endpoints of each new node's parent edge are
    returned as an (n_new, 2) array alongside the mesh.
    """
    if mesh.dim == 1:
        return _bisect_1d(mesh, marked, max_splits, return_parents)

    red = sorted({int(m) for m in marked if 0 <= int(m) < mesh.n_elements and mesh.split_count[int(m)] < max_splits})
    known_mid: dict = {}
    parents: list = []
    current = mesh
    forced: dict = {}
    for _ in range(64):
        current = _refine_pass(current, red, forced, known_mid, parents)
        red = []
        forced = {}
        used = np.zeros(current.n_nodes, dtype=bool)
        used[current.conn.ravel()] = True
        for ek, els in current.edges().items():
            m = known_mid.get(ek)
            if len(els) == 1 and m is not None and used[m]:
                forced[ek] = m
        if not forced:
            break
    else:  # pragma: no cover - closure always terminates on valid input
        raise RuntimeError("red-green closure did not terminate")
    if return_parents:
        return current, np.array(parents, dtype=np.int64).reshape(-1, 2)
    return current


def _key(p, q):
    return (p, q) if p < q else (q, p)


def _edges_of(nodes):
    a, b, c = nodes
    return (_key(a, b), _key(b, c), _key(c, a))


def _refine_pass(mesh: Mesh, red_marked, forced: dict, known_mid: dict, parents: list) -> Mesh:
    """One red-green pass.  ``forced`` maps edges to existing nodes that
    must become their midpoints (hanging nodes left by a previous pass)."""
    coords = [tuple(c) for c in mesh.coords]
    tags = list(mesh.node_tags)
    edge_count = {k: len(v) for k, v in mesh.edges().items()}

    # working records: [nodes, split_count, green, alive, anchor, marked]
    recs = [[tuple(int(i) for i in mesh.conn[e]), int(mesh.split_count[e]), mesh.green[e], True, e, False]
            for e in range(mesh.n_elements)]
    families: dict = {}
    for e, g in enumerate(mesh.green):
        if g is not None:
            families.setdefault((g.parent, g.midpoint), []).append(e)
    restored: dict = {}
    refined: dict = dict(forced)
    red: set = set()

    def restorable(g: GreenMark) -> bool:
        # nodes move during training, so the old midpoint may no longer lie
        # where a red split of the parent needs it
        a, b, c = g.parent
        mids = {}
        for ek in _edges_of(g.parent):
            m = g.midpoint if ek == _key(*g.edge) else refined.get(ek)
            mids[ek] = np.asarray(coords[m]) if m is not None else 0.5 * (np.asarray(coords[ek[0]]) + np.asarray(coords[ek[1]]))
        pa, pb, pc = (np.asarray(coords[i]) for i in (a, b, c))
        ab, bc, ca = mids[_key(a, b)], mids[_key(b, c)], mids[_key(c, a)]
        ref = abs(_signed_area(pa, pb, pc))
        return all(_signed_area(*t) > 1e-12 * ref for t in ((pa, ab, ca), (ab, pb, bc), (ca, bc, pc), (ab, bc, ca)))

    def release(g: GreenMark) -> None:
        for s in families[(g.parent, g.midpoint)]:
            recs[s][2] = None

    def restore(g: GreenMark) -> int | None:
        fam = (g.parent, g.midpoint)
        if fam in restored:
            return restored[fam]
        if not restorable(g):
            release(g)
            return None
        sibs = families[fam]
        for s in sibs:
            recs[s][3] = False
        recs.append([g.parent, g.parent_split_count, None, True, min(sibs), False])
        idx = len(recs) - 1
        restored[fam] = idx
        refined[_key(*g.edge)] = g.midpoint
        known_mid[_key(*g.edge)] = g.midpoint
        red.add(idx)
        return idx

    for e in red_marked:
        g = recs[e][2]
        if g is not None:
            r = restore(g)
            e = e if r is None else r
        red.add(e)
        recs[e][5] = True

    changed = True
    while changed:
        changed = False
        for r in sorted(red):
            for ek in _edges_of(recs[r][0]):
                refined.setdefault(ek, None)
        for i in range(len(recs)):
            rec = recs[i]
            if not rec[3] or i in red:
                continue
            hits = sum(ek in refined for ek in _edges_of(rec[0]))
            if rec[2] is not None:
                if hits:
                    restore(rec[2])
                    changed = True
                continue
            if hits >= 2:
                red.add(i)
                changed = True

    def midpoint(ek):
        m = refined.get(ek)
        if m is None:
            p, q = ek
            m = len(coords)
            coords.append(tuple(0.5 * (np.asarray(coords[p]) + np.asarray(coords[q]))))
            boundary_edge = edge_count.get(ek, 2) == 1
            tags.append(tags[p] if boundary_edge and tags[p] is not None and tags[p] == tags[q] else None)
            parents.append(ek)
            refined[ek] = m
            known_mid[ek] = m
        return m

    # emit in input order; a restored parent takes its first sibling's slot
    order = sorted((rec[4], i >= mesh.n_elements, i) for i, rec in enumerate(recs) if rec[3])
    out_conn, out_sc, out_green = [], [], []
    for _anchor, _new, i in order:
        nodes, sc, g, _alive, _anc, was_marked = recs[i]
        a, b, c = nodes
        if i in red:
            ab, bc, ca = midpoint(_key(a, b)), midpoint(_key(b, c)), midpoint(_key(c, a))
            child_sc = sc + 1 if was_marked else sc
            for ch in ((a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)):
                out_conn.append(ch)
                out_sc.append(child_sc)
                out_green.append(None)
            continue
        hit = [ek for ek in ((a, b), (b, c), (c, a)) if _key(*ek) in refined]
        if not hit:
            out_conn.append(nodes)
            out_sc.append(sc)
            out_green.append(g)
            continue
        p, q = hit[0]
        o = ({a, b, c} - {p, q}).pop()
        m = midpoint(_key(p, q))
        mark = GreenMark(nodes, sc, m, (p, q))
        for ch in ((p, m, o), (m, q, o)):
            out_conn.append(ch)
            out_sc.append(sc)
            out_green.append(mark)

    return Mesh(np.array(coords), np.array(out_conn, dtype=np.int64), node_tags=tags,
                split_count=np.array(out_sc, dtype=np.int64), green=out_green)


def _signed_area(p, q, r) -> float:
    return 0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))


def _bisect_1d(mesh: Mesh, marked, max_splits, return_parents):
    if mesh.order != 1:
        raise ValueError("1D refinement supports linear meshes only")
    coords = list(mesh.coords[:, 0])
    tags = list(mesh.node_tags)
    conn, sc, parents = [], [], []
    marked = {int(m) for m in marked}
    for e, (a, b) in enumerate(mesh.conn):
        if e in marked and mesh.split_count[e] < max_splits:
            m = len(coords)
            coords.append(0.5 * (coords[a] + coords[b]))
            tags.append(None)
            parents.append((a, b))
            conn += [(a, m), (m, b)]
            sc += [mesh.split_count[e] + 1] * 2
        else:
            conn.append((a, b))
            sc.append(mesh.split_count[e])
    new = Mesh(np.array(coords), np.array(conn), node_tags=tags, split_count=np.array(sc))
    if return_parents:
        return new, np.array(parents, dtype=np.int64).reshape(-1, 2)
    return new


# point location -------------------------------------------------------------
def barycentric(coords, conn, pts, elems) -> np.ndarray:
    """Barycentric weights of ``pts[i]`` in triangle ``elems[i]`` (n, 3)."""
    tri = np.asarray(coords)[conn[elems]]
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    det = (a[:, 0] - c[:, 0]) * (b[:, 1] - c[:, 1]) - (b[:, 0] - c[:, 0]) * (a[:, 1] - c[:, 1])
    px, py = pts[:, 0] - c[:, 0], pts[:, 1] - c[:, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        la = ((b[:, 1] - c[:, 1]) * px - (b[:, 0] - c[:, 0]) * py) / det
        lb = (-(a[:, 1] - c[:, 1]) * px + (a[:, 0] - c[:, 0]) * py) / det
    return np.column_stack([la, lb, 1.0 - la - lb])


def locate_points(mesh: Mesh, pts, coords=None):
    """Vectorised point location.

    Returns ``(elem, ref, nearest)``: the lowest-id element containing each
    point (-1 if none), its reference coordinates, and the Euclidean-closest
    node id (meaningful where ``elem == -1``).  ``coords`` overrides the mesh
    node positions (trained geometry).
    """
    coords = mesh.coords if coords is None else np.asarray(coords, dtype=float)
    pts = np.asarray(pts, dtype=float)
    if mesh.dim == 1:
        pts = pts.reshape(-1)
        xa = coords[mesh.conn[:, 0], 0]
        xb = coords[mesh.conn[:, 1], 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            lb = (pts[:, None] - xa[None, :]) / (xb - xa)[None, :]
        ok = (lb >= -BARY_TOL) & (1.0 - lb >= -BARY_TOL)
        has = ok.any(axis=1)
        elem = np.where(has, ok.argmax(axis=1), -1)
        ref = np.zeros(len(pts))
        ref[has] = 2.0 * lb[has, elem[has]] - 1.0
        nearest = np.abs(pts[:, None] - coords[None, :, 0]).argmin(axis=1)
        return elem, ref, nearest

    pts = pts.reshape(-1, 2)
    conn3 = mesh.conn[:, :3]
    cent = coords[conn3].mean(axis=1)
    reach = np.sqrt(((coords[conn3] - cent[:, None, :]) ** 2).sum(axis=2)).max()
    tree = cKDTree(cent)
    cands = tree.query_ball_point(pts, reach * (1 + 1e-9) + 1e-12)
    lens = np.fromiter((len(c) for c in cands), dtype=np.int64, count=len(pts))
    pi = np.repeat(np.arange(len(pts)), lens)
    ei = np.fromiter((e for c in cands for e in c), dtype=np.int64, count=int(lens.sum()))
    elem = np.full(len(pts), -1, dtype=np.int64)
    ref = np.zeros((len(pts), 2))
    if len(ei):
        lam = barycentric(coords, mesh.conn, pts[pi], ei)
        ok = np.all(lam >= -BARY_TOL, axis=1)
        big = np.iinfo(np.int64).max
        best = np.full(len(pts), big, dtype=np.int64)
        np.minimum.at(best, pi[ok], ei[ok])
        found = best != big
        elem[found] = best[found]
        sel = ok & (ei == best[pi])
        ref[pi[sel]] = lam[sel, :2]
    _, nearest = cKDTree(coords).query(pts)
    return elem, ref, np.asarray(nearest, dtype=np.int64)


def locate_point(mesh: Mesh, x, coords=None) -> Located | NearestNode:
    """Lowest-id element containing ``x`` (barycentric >= -1e-9), otherwise
    the closest node."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    elem, ref, nearest = locate_points(mesh, x[None, :] if mesh.dim == 2 else x[:1], coords)
    if elem[0] < 0:
        return NearestNode(int(nearest[0]))
    r = ref[0]
    return Located(int(elem[0]), tuple(float(v) for v in np.atleast_1d(r)))


def locate_points_bruteforce(mesh: Mesh, pts, coords=None) -> np.ndarray:
    """Reference implementation of the element search (used by tests)."""
    coords = mesh.coords if coords is None else np.asarray(coords, dtype=float)
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    out = np.full(len(pts), -1, dtype=np.int64)
    for i, p in enumerate(pts):
        lam = barycentric(coords, mesh.conn, np.repeat(p[None], mesh.n_elements, 0), np.arange(mesh.n_elements))
        ok = np.flatnonzero(np.all(lam >= -BARY_TOL, axis=1))
        if len(ok):
            out[i] = ok[0]
    return out
