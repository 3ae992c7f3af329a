"""Reading and writing triangle meshes.

Native format (UTF-8)::

    trimesh v1
    vertices N
    x y                                  (N lines)
    cells M
    i j k region_id in_omegaA in_omega   (M lines, flags 0/1)
    boundary B
    i j tag                              (B lines, tag D or N)

Vertex indices are zero based. Blank lines and lines starting with ``#``
are ignored.
"""
from pathlib import Path

import numpy as np

from . import geometry
from .mesh import DIRICHLET, NEUMANN, MeshError, TriMesh


def _tokens(text):
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line and not line.startswith("#"):
            yield lineno, line.split()


def _section(it, name):
    try:
        lineno, tok = next(it)
    except StopIteration:
        raise MeshError(f"unexpected end of file, expected '{name} <count>'") from None
    if len(tok) != 2 or tok[0] != name:
        raise MeshError(f"line {lineno}: expected '{name} <count>', got {' '.join(tok)!r}")
    try:
        n = int(tok[1])
    except ValueError:
        raise MeshError(f"line {lineno}: bad count {tok[1]!r}") from None
    if n < 0:
        raise MeshError(f"line {lineno}: negative count")
    return n


def _rows(it, n, width, what):
    rows = []
    for _ in range(n):
        try:
            lineno, tok = next(it)
        except StopIteration:
            raise MeshError(f"unexpected end of file while reading {what}") from None
        if len(tok) != width:
            raise MeshError(f"line {lineno}: {what} row needs {width} fields, got {len(tok)}")
        rows.append((lineno, tok))
    return rows


def parse_trimesh(text):
    it = _tokens(text)
    try:
        lineno, tok = next(it)
    except StopIteration:
        raise MeshError("empty mesh file") from None
    if tok != ["trimesh", "v1"]:
        raise MeshError("missing 'trimesh v1' header")
    try:
        nv = _section(it, "vertices")
        verts = np.array([[float(t) for t in tok] for _, tok in _rows(it, nv, 2, "vertex")]).reshape(-1, 2)
        nc = _section(it, "cells")
        cell_rows = _rows(it, nc, 6, "cell")
        nb = _section(it, "boundary")
        brows = _rows(it, nb, 3, "boundary")
    except ValueError as exc:
        raise MeshError(f"malformed number: {exc}") from None
    cells = np.empty((nc, 3), np.int64)
    material = np.empty(nc, np.int64)
    flags = np.empty((nc, 2), bool)
    for c, (lineno, tok) in enumerate(cell_rows):
        try:
            cells[c] = [int(t) for t in tok[:3]]
            material[c] = int(tok[3])
        except ValueError:
            raise MeshError(f"line {lineno}: non-integer cell entry") from None
        for j, t in enumerate(tok[4:]):
            if t not in ("0", "1"):
                raise MeshError(f"line {lineno}: region flag must be 0 or 1, got {t!r}")
            flags[c, j] = t == "1"
    bedges = np.empty((nb, 2), np.int64)
    btags = []
    for b, (lineno, tok) in enumerate(brows):
        try:
            bedges[b] = [int(tok[0]), int(tok[1])]
        except ValueError:
            raise MeshError(f"line {lineno}: non-integer boundary vertex") from None
        if tok[2] not in (DIRICHLET, NEUMANN):
            raise MeshError(f"line {lineno}: boundary tag must be D or N, got {tok[2]!r}")
        btags.append(tok[2])
    extra = next(it, None)
    if extra is not None:
        raise MeshError(f"line {extra[0]}: trailing content after boundary section")
    return TriMesh(verts, cells, bedges, np.array(btags, dtype="<U1"),
                   material=material, in_active=flags[:, 0], in_interest=flags[:, 1])


def format_trimesh(mesh):
    out = ["trimesh v1", f"vertices {mesh.n_vertices}"]
    out += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    out.append(f"cells {mesh.n_cells}")
    for (i, j, k), m, a, w in zip(mesh.cells.tolist(), mesh.material.tolist(),
                                  mesh.in_active.tolist(), mesh.in_interest.tolist()):
        out.append(f"{i} {j} {k} {m} {int(a)} {int(w)}")
    out.append(f"boundary {len(mesh.boundary_edges)}")
    out += [f"{i} {j} {t}" for (i, j), t in zip(mesh.boundary_edges.tolist(), mesh.boundary_tags.tolist())]
    return "\n".join(out) + "\n"


def write_trimesh(mesh, path):
    Path(path).write_text(format_trimesh(mesh), encoding="utf-8")


def read_trimesh(path):
    return parse_trimesh(Path(path).read_text(encoding="utf-8"))


# -- Gmsh MSH 2.2 ASCII ----------------------------------------------------

def _material_id(name, tag):
    s = name.lower()
    for prefix in ("material_", "material", "mat_", "mat"):
        if s.startswith(prefix) and s[len(prefix):].isdigit():
            return int(s[len(prefix):])
    if s.lstrip("-").isdigit():
        return int(s)
    return int(tag)


def parse_msh(text):
    """Triangles and boundary lines from an MSH 2.2 ASCII file.

    2D physical groups named ``fiber`` / ``interest`` set the region flags,
    any other 2D group sets the material id (integer name or ``material<N>``,
    else its physical tag). 1D groups must be named ``dirichlet`` or
    ``neumann``. Clockwise triangles are reoriented.
    """
    lines = [l.strip() for l in text.splitlines()]
    blocks = {}
    i = 0
    while i < len(lines):
        if lines[i].startswith("$") and not lines[i].startswith("$End"):
            name = lines[i][1:]
            j = i + 1
            while j < len(lines) and lines[j] != f"$End{name}":
                j += 1
            if j == len(lines):
                raise MeshError(f"unterminated ${name} block")
            blocks[name] = lines[i + 1:j]
            i = j
        i += 1
    fmt = blocks.get("MeshFormat")
    if not fmt or not fmt[0].split()[0].startswith("2"):
        raise MeshError("only MSH 2.x ASCII is supported")
    if fmt[0].split()[1] != "0":
        raise MeshError("binary MSH is not supported")
    names = {}
    for row in blocks.get("PhysicalNames", [])[1:]:
        dim, tag, name = row.split(maxsplit=2)
        names[(int(dim), int(tag))] = name.strip().strip('"')
    if "Nodes" not in blocks or "Elements" not in blocks:
        raise MeshError("missing $Nodes or $Elements")
    try:
        node_rows = [r.split() for r in blocks["Nodes"][1:]]
        ids = np.array([int(r[0]) for r in node_rows])
        xyz = np.array([[float(v) for v in r[1:4]] for r in node_rows]).reshape(-1, 3)
    except (ValueError, IndexError):
        raise MeshError("malformed $Nodes block") from None
    if xyz.size and np.abs(xyz[:, 2]).max() > 1e-12 * max(1.0, np.abs(xyz[:, :2]).max()):
        raise MeshError("mesh is not planar (z != 0)")
    index = {int(k): n for n, k in enumerate(ids)}

    tri_groups = {}
    line_groups = {}
    for row in blocks["Elements"][1:]:
        tok = [int(t) for t in row.split()]
        etype, ntags = tok[1], tok[2]
        phys = tok[3] if ntags > 0 else 0
        conn = tok[3 + ntags:]
        try:
            conn = [index[c] for c in conn]
        except KeyError:
            raise MeshError(f"element {tok[0]} references unknown node") from None
        if etype == 2:
            key = tuple(conn)
            tri_groups.setdefault(key, []).append(phys)
        elif etype == 1:
            line_groups.setdefault(tuple(sorted(conn)), []).append(phys)
    if not tri_groups:
        raise MeshError("no 3-node triangles in file")

    verts = xyz[:, :2]
    cells, material, active, interest = [], [], [], []
    for conn, groups in tri_groups.items():
        a, b, c = conn
        d1, d2 = verts[b] - verts[a], verts[c] - verts[a]
        if d1[0] * d2[1] - d1[1] * d2[0] < 0:
            conn = (a, c, b)
        cells.append(conn)
        mat, fa, fi = 0, False, False
        for g in groups:
            name = names.get((2, g), str(g))
            if name.lower() == "fiber":
                fa = True
            elif name.lower() == "interest":
                fi = True
            elif g:
                mat = _material_id(name, g)
        material.append(mat)
        active.append(fa)
        interest.append(fi)
    bedges, btags = [], []
    for conn, groups in line_groups.items():
        tags = {names.get((1, g), "").lower() for g in groups}
        tag = None
        if "dirichlet" in tags:
            tag = DIRICHLET
        elif "neumann" in tags:
            tag = NEUMANN
        if tag is None:
            raise MeshError(f"boundary line {list(conn)} lacks a dirichlet/neumann physical group")
        bedges.append(conn)
        btags.append(tag)

    # drop nodes not used by any triangle (e.g. geometry points)
    cells = np.array(cells, np.int64)
    used = np.unique(cells)
    remap = np.full(len(verts), -1, np.int64)
    remap[used] = np.arange(len(used))
    bedges = np.array(bedges, np.int64).reshape(-1, 2)
    if bedges.size and np.any(remap[bedges] < 0):
        raise MeshError("boundary line uses a node not in any triangle")
    return TriMesh(verts[used], remap[cells], remap[bedges] if bedges.size else bedges,
                   np.array(btags, dtype="<U1"), material=material,
                   in_active=active, in_interest=interest)


def read_msh(path):
    return parse_msh(Path(path).read_text(encoding="utf-8"))


def load_mesh(source):
    """Mesh from a path (``.msh`` or native), a built-in name, or a descriptor dict.

    Descriptor dicts look like ``{"builtin": "unit_square", "n": 4}``.
    """
    if isinstance(source, TriMesh):
        return source
    if isinstance(source, dict):
        params = dict(source)
        name = params.pop("builtin")
        return geometry.builtin(name, **params)
    path = Path(source)
    if not path.exists():
        if isinstance(source, str) and source in geometry.BUILTINS:
            return geometry.builtin(source)
        raise MeshError(f"mesh source not found: {source}")
    if path.suffix.lower() == ".msh":
        return read_msh(path)
    return read_trimesh(path)
