"""Gmsh MSH 2.2 (ASCII subset) and legacy VTK reading and writing."""

from __future__ import annotations

import os
import shlex
import warnings
from typing import NamedTuple

import numpy as np

from .errors import DanglingNodeReference, DegenerateElement, MalformedHeader, UnsupportedVersion
from .mesh import Mesh, conformity_audit, element_jacobians

# gmsh element type -> (nodes per element, role)
_GMSH_TYPES = {1: 2, 2: 3, 8: 3, 15: 1}
_VTK_TYPES = {(1, 1): 3, (1, 2): 21, (2, 1): 5}


class GmshRead(NamedTuple):
    mesh: Mesh
    skipped: int


def _sections(lines: list[str]) -> dict:
    out: dict = {}
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        if line.startswith("$") and not line.startswith("$End"):
            name = line[1:]
            try:
                end = lines.index(f"$End{name}", i + 1)
            except ValueError:
                raise MalformedHeader(f"section ${name} has no $End{name}") from None
            out[name] = lines[i + 1 : end]
            i = end + 1
        else:
            i += 1
    return out


def read_gmsh_report(path) -> GmshRead:
    """Parse an MSH 2.2 ASCII file; also return the number of skipped elements."""
    with open(path, encoding="ascii", errors="replace") as fh:
        lines = [ln.rstrip("\r\n").strip() for ln in fh]
    sec = _sections(lines)
    if "MeshFormat" not in sec or not sec["MeshFormat"]:
        raise MalformedHeader("missing $MeshFormat section")
    fmt = sec["MeshFormat"][0].split()
    if len(fmt) < 3:
        raise MalformedHeader("malformed $MeshFormat line")
    if not fmt[0].startswith("2.") or fmt[1] != "0":
        raise UnsupportedVersion(f"only MSH 2.x ASCII is supported, got version {fmt[0]} type {fmt[1]}")
    for name in ("Nodes", "Elements"):
        if name not in sec:
            raise MalformedHeader(f"missing ${name} section")

    names: dict = {}
    if "PhysicalNames" in sec:
        for ln in sec["PhysicalNames"][1:]:
            parts = shlex.split(ln)
            if len(parts) >= 3:
                names[int(parts[1])] = parts[2]

    try:
        nn = int(sec["Nodes"][0])
        rows = [ln.split() for ln in sec["Nodes"][1 : 1 + nn]]
        ids = [int(r[0]) for r in rows]
        xyz = np.array([[float(v) for v in r[1:4]] for r in rows]).reshape(-1, 3)
        ne = int(sec["Elements"][0])
        erows = [[int(v) for v in ln.split()] for ln in sec["Elements"][1 : 1 + ne]]
    except (ValueError, IndexError) as exc:
        raise MalformedHeader(f"cannot parse node/element block: {exc}") from None
    if len(rows) != nn or len(erows) != ne:
        raise MalformedHeader("node or element count does not match the section body")
    index = {nid: k for k, nid in enumerate(ids)}

    domain: dict = {1: [], 2: [], 8: []}
    tagged: list = []
    skipped = 0
    for r in erows:
        etype, ntags = r[1], r[2]
        tags = r[3 : 3 + ntags]
        nodes = r[3 + ntags :]
        if etype not in _GMSH_TYPES:
            skipped += 1
            continue
        if len(nodes) != _GMSH_TYPES[etype]:
            raise MalformedHeader(f"element {r[0]} has {len(nodes)} nodes for type {etype}")
        try:
            local = [index[n] for n in nodes]
        except KeyError as exc:
            raise DanglingNodeReference(f"element {r[0]} references missing node {exc.args[0]}") from None
        phys = tags[0] if tags else 0
        domain.setdefault(etype, []).append(local)
        tagged.append((etype, local, names.get(phys, str(phys) if phys else None)))

    if domain[2]:
        dim, conn, order = 2, np.array(domain[2]), 1
        boundary_type = 1
    elif domain[8]:
        dim, conn, order = 1, np.array(domain[8]), 2
        boundary_type = 15
    elif domain[1]:
        dim, conn, order = 1, np.array(domain[1]), 1
        boundary_type = 15
    else:
        raise MalformedHeader("file contains no supported domain elements")

    used = np.unique(conn.ravel())
    remap = -np.ones(len(ids), dtype=np.int64)
    remap[used] = np.arange(len(used))
    conn = remap[conn]
    coords = xyz[used, :dim]
    node_tags: list = [None] * len(used)
    for etype, local, name in tagged:
        if etype == boundary_type and name is not None:
            for n in local:
                if remap[n] >= 0:
                    node_tags[remap[n]] = name
    if dim == 1:
        x = coords[:, 0]
        flip = x[conn[:, 1]] < x[conn[:, 0]]
        conn[flip, 0], conn[flip, 1] = conn[flip, 1].copy(), conn[flip, 0].copy()
    else:
        j = element_jacobians(coords, conn, 2)
        if np.any(j == 0.0):
            raise DegenerateElement("file contains a zero-area triangle")
        flip = j < 0
        conn[flip, 1], conn[flip, 2] = conn[flip, 2].copy(), conn[flip, 1].copy()
    return GmshRead(Mesh(coords, conn, order=order, node_tags=node_tags), skipped)


def read_gmsh(path) -> Mesh:
    """Read a mesh; unsupported element types are skipped with a warning."""
    res = read_gmsh_report(path)
    if res.skipped:
        warnings.warn(f"skipped {res.skipped} elements of unsupported type", stacklevel=2)
    return res.mesh


def _fmt(v) -> str:
    return repr(float(v))


def write_gmsh(mesh: Mesh, path) -> None:
    """Write the mesh; tagged nodes are exported as physical groups on
    boundary lines (2D) or points (1D)."""
    tag_names = mesh.tags()
    phys = {name: k + 2 for k, name in enumerate(tag_names)}
    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$PhysicalNames", str(len(phys) + 1)]
    out.append(f'{mesh.dim} 1 "domain"')
    bdim = mesh.dim - 1
    out += [f'{bdim} {k} "{name}"' for name, k in phys.items()]
    out += ["$EndPhysicalNames", "$Nodes", str(mesh.n_nodes)]
    for i, c in enumerate(mesh.coords):
        xyz = list(c) + [0.0] * (3 - mesh.dim)
        out.append(f"{i + 1} " + " ".join(_fmt(v) for v in xyz))
    out.append("$EndNodes")
    elems = []
    if mesh.dim == 1:
        for i, t in enumerate(mesh.node_tags):
            if t is not None:
                elems.append((15, phys[t], [i]))
        etype = 8 if mesh.order == 2 else 1
    else:
        for (p, q), els in mesh.edges().items():
            t = mesh.node_tags[p]
            if len(els) == 1 and t is not None and t == mesh.node_tags[q]:
                elems.append((1, phys[t], [p, q]))
        etype = 2
    elems += [(etype, 1, list(row)) for row in mesh.conn]
    out += ["$Elements", str(len(elems))]
    for k, (et, tag, nodes) in enumerate(elems):
        out.append(f"{k + 1} {et} 2 {tag} {tag} " + " ".join(str(n + 1) for n in nodes))
    out.append("$EndElements")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(out) + "\n")


# legacy VTK -----------------------------------------------------------------
def write_vtk(path, mesh: Mesh, point_data: dict | None = None, cell_data: dict | None = None,
              title: str = "fenni") -> None:
    """Legacy ASCII UNSTRUCTURED_GRID.  Arrays of shape (n,) or (n, k<=4)
    are written as SCALARS with k components."""
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {mesh.n_nodes} double"]
    for c in mesh.coords:
        xyz = list(c) + [0.0] * (3 - mesh.dim)
        lines.append(" ".join(_fmt(v) for v in xyz))
    nv = mesh.conn.shape[1]
    lines.append(f"CELLS {mesh.n_elements} {mesh.n_elements * (nv + 1)}")
    lines += [f"{nv} " + " ".join(str(int(n)) for n in row) for row in mesh.conn]
    ctype = _VTK_TYPES[(mesh.dim, mesh.order)]
    lines.append(f"CELL_TYPES {mesh.n_elements}")
    lines += [str(ctype)] * mesh.n_elements
    for header, n, data in (("POINT_DATA", mesh.n_nodes, point_data), ("CELL_DATA", mesh.n_elements, cell_data)):
        if not data:
            continue
        lines.append(f"{header} {n}")
        for name, arr in data.items():
            arr = np.asarray(arr, dtype=float).reshape(n, -1)
            lines.append(f"SCALARS {name} double {arr.shape[1]}")
            lines.append("LOOKUP_TABLE default")
            lines += [" ".join(_fmt(v) for v in row) for row in arr]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_vtk(path):
    """Read files produced by :func:`write_vtk`; returns (mesh, point_data, cell_data)."""
    with open(path, encoding="ascii") as fh:
        tokens = fh.read().split("\n")
    if not tokens or not tokens[0].startswith("# vtk DataFile"):
        raise MalformedHeader("not a legacy VTK file")
    if tokens[2].strip() != "ASCII" or tokens[3].strip() != "DATASET UNSTRUCTURED_GRID":
        raise UnsupportedVersion("only ASCII UNSTRUCTURED_GRID is supported")
    words = " ".join(tokens[4:]).split()
    pos = 0

    def take(k):
        nonlocal pos
        out = words[pos : pos + k]
        pos += k
        return out

    if take(1) != ["POINTS"]:
        raise MalformedHeader("expected POINTS")
    npts = int(take(2)[0])
    pts = np.array(take(3 * npts), dtype=float).reshape(npts, 3)
    if take(1) != ["CELLS"]:
        raise MalformedHeader("expected CELLS")
    ncell, size = (int(v) for v in take(2))
    flat = np.array(take(size), dtype=np.int64)
    nv = int(flat[0])
    conn = flat.reshape(ncell, nv + 1)[:, 1:]
    if take(1) != ["CELL_TYPES"]:
        raise MalformedHeader("expected CELL_TYPES")
    take(1)
    ctypes = set(int(v) for v in take(ncell))
    inv = {v: k for k, v in _VTK_TYPES.items()}
    if len(ctypes) != 1 or next(iter(ctypes)) not in inv:
        raise UnsupportedVersion(f"unsupported cell types {sorted(ctypes)}")
    dim, order = inv[next(iter(ctypes))]
    data: dict = {"POINT_DATA": {}, "CELL_DATA": {}}
    section, count = None, 0
    while pos < len(words):
        w = take(1)[0]
        if w in data:
            section, count = w, int(take(1)[0])
        elif w == "SCALARS":
            name, _dtype, ncomp = take(3)
            ncomp = int(ncomp)
            if take(2) != ["LOOKUP_TABLE", "default"]:
                raise MalformedHeader("expected LOOKUP_TABLE default")
            arr = np.array(take(count * ncomp), dtype=float).reshape(count, ncomp)
            data[section][name] = arr[:, 0] if ncomp == 1 else arr
        else:
            raise MalformedHeader(f"unexpected token {w!r}")
    mesh = Mesh(pts[:, :dim], conn, order=order)
    return mesh, data["POINT_DATA"], data["CELL_DATA"]


def describe(path) -> dict:
    """Summary used by ``fenni mesh --inspect``."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".vtk":
        mesh = read_vtk(path)[0]
        skipped = 0
    else:
        mesh, skipped = read_gmsh_report(path)
    jac = mesh.jacobians()
    audit = conformity_audit(mesh)
    return {
        "dim": mesh.dim,
        "order": mesh.order,
        "nodes": mesh.n_nodes,
        "elements": mesh.n_elements,
        "boundary_nodes": int(mesh.on_boundary.sum()),
        "tags": {t: int(len(mesh.tagged(t))) for t in mesh.tags()},
        "measure": mesh.measure(),
        "min_jacobian": float(jac.min()),
        "conforming": audit["conforming"],
        "skipped_elements": skipped,
    }
