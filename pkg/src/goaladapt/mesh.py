"""Conforming triangle meshes, edge topology and newest-vertex bisection."""
import dataclasses
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

DIRICHLET = "D"
NEUMANN = "N"

# local edge e is opposite local vertex e, oriented (e+1)%3 -> (e+2)%3
_LOCAL_EDGES = np.array([[1, 2], [2, 0], [0, 1]])


class MeshError(ValueError):
    """Raised for malformed or non-conforming meshes."""


def _readonly(a, dtype=None):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


def initial_refinement_edges(vertices, cells):
    """Longest edge of each cell; ties go to the smallest opposite vertex index."""
    p = vertices[cells]                      # (nc, 3, 2)
    e = p[:, [2, 0, 1]] - p[:, [1, 2, 0]]    # edge opposite vertex i
    L = np.einsum("cij,cij->ci", e, e)
    longest = L.max(axis=1, keepdims=True)
    tied = L >= longest * (1.0 - 1e-12)
    opp = np.where(tied, cells, np.iinfo(np.int64).max)
    return np.argmin(opp, axis=1).astype(np.int8)


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Immutable conforming triangulation with boundary and region tags.

    ``boundary_edges`` holds vertex pairs, ``boundary_tags`` one of
    ``"D"``/``"N"`` per pair. ``parent`` maps each cell to the cell of the
    mesh it was refined from (``None`` for an initial mesh). ``anchor`` is a
    per-cell point for cell-wise constant data such as fiber directions; it
    defaults to the centroid and children inherit it, so refinement does not
    change such data.
    """

    vertices: np.ndarray
    cells: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    material: np.ndarray = None
    in_active: np.ndarray = None
    in_interest: np.ndarray = None
    refinement_edge: np.ndarray = None
    parent: np.ndarray = None
    generation: int = 0
    anchor: np.ndarray = None
    _validated: bool = field(default=False, repr=False)

    def __post_init__(self):
        set_ = lambda name, val: object.__setattr__(self, name, val)
        verts = np.asarray(self.vertices, dtype=float)
        if verts.ndim != 2 or verts.shape[1] != 2:
            raise MeshError("vertices must be an (N, 2) array")
        cells = np.asarray(self.cells, dtype=np.int64).reshape(-1, 3)
        nc = len(cells)
        set_("vertices", _readonly(verts))
        set_("cells", _readonly(cells))
        set_("boundary_edges", _readonly(np.asarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2)))
        set_("boundary_tags", _readonly(np.asarray(self.boundary_tags, dtype="<U1").reshape(-1)))
        set_("material", _readonly(np.zeros(nc, int) if self.material is None else self.material, np.int64))
        for name in ("in_active", "in_interest"):
            val = getattr(self, name)
            set_(name, _readonly(np.zeros(nc, bool) if val is None else val, bool))
        if self.refinement_edge is None:
            set_("refinement_edge", _readonly(initial_refinement_edges(self.vertices, self.cells)))
        else:
            set_("refinement_edge", _readonly(self.refinement_edge, np.int8))
        if self.parent is not None:
            set_("parent", _readonly(self.parent, np.int64))
        if not self._validated:
            self._validate()
        if self.anchor is None:
            set_("anchor", _readonly(self.vertices[self.cells].mean(axis=1)))
        else:
            a = np.asarray(self.anchor, float).reshape(-1, 2)
            if len(a) != nc:
                raise MeshError("anchor must hold one point per cell")
            set_("anchor", _readonly(a))

    # -- basic geometry -------------------------------------------------
    @property
    def n_cells(self):
        return len(self.cells)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @cached_property
    def signed_areas(self):
        p = self.vertices[self.cells]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def areas(self):
        return self.signed_areas

    @cached_property
    def centroids(self):
        return self.vertices[self.cells].mean(axis=1)

    # -- edge structure -------------------------------------------------
    @cached_property
    def _edge_data(self):
        nv = max(self.n_vertices, 1)
        local = self.cells[:, _LOCAL_EDGES]              # (nc, 3, 2)
        lo = local.min(axis=2)
        hi = local.max(axis=2)
        keys = (lo * nv + hi).ravel()
        uniq, inv, counts = np.unique(keys, return_inverse=True, return_counts=True)
        edges = np.column_stack([uniq // nv, uniq % nv])
        cell_edges = inv.reshape(-1, 3)
        return edges, cell_edges, counts

    @property
    def edges(self):
        """(ne, 2) vertex pairs with the smaller index first."""
        return self._edge_data[0]

    @property
    def cell_edges(self):
        """(nc, 3) global edge id of each local edge."""
        return self._edge_data[1]

    @cached_property
    def edge_cells(self):
        """(ne, 2) adjacent cells in increasing order, ``-1`` on the boundary."""
        ne = len(self.edges)
        out = np.full((ne, 2), -1, dtype=np.int64)
        flat = self.cell_edges.ravel()
        cell_ids = np.repeat(np.arange(self.n_cells), 3)
        order = np.argsort(flat, kind="stable")
        fe, fc = flat[order], cell_ids[order]
        first = np.ones(len(fe), bool)
        first[1:] = fe[1:] != fe[:-1]
        out[fe[first], 0] = fc[first]
        out[fe[~first], 1] = fc[~first]
        return out

    @cached_property
    def edge_tags(self):
        """Per global edge: ``""`` for interior edges, else its boundary tag."""
        tags = np.full(len(self.edges), "", dtype="<U1")
        nv = max(self.n_vertices, 1)
        keys = self.edges[:, 0] * nv + self.edges[:, 1]
        be = np.sort(self.boundary_edges, axis=1)
        bkeys = be[:, 0] * nv + be[:, 1]
        pos = np.searchsorted(keys, bkeys)
        tags[pos] = self.boundary_tags
        return tags

    def _validate(self):
        nv, nc = self.n_vertices, self.n_cells
        if nc == 0:
            raise MeshError("mesh has no cells")
        if self.cells.min() < 0 or self.cells.max() >= nv:
            raise MeshError("cell references a vertex out of range")
        for name in ("material", "in_active", "in_interest", "refinement_edge"):
            if len(getattr(self, name)) != nc:
                raise MeshError(f"{name} must have one entry per cell")
        scale = np.ptp(self.vertices, axis=0).max() if nv > 1 else 1.0
        a = self.signed_areas
        if np.any(a <= 1e-14 * scale * scale):
            bad = int(np.argmin(a))
            raise MeshError(f"cell {bad} has zero or negative area ({a[bad]:.3e})")
        edges, _, counts = self._edge_data
        if np.any(counts > 2):
            raise MeshError(f"non-manifold edge {edges[np.argmax(counts)].tolist()} shared by more than 2 cells")
        if len(self.boundary_edges) != len(self.boundary_tags):
            raise MeshError("one tag per boundary edge required")
        if not np.all(np.isin(self.boundary_tags, [DIRICHLET, NEUMANN])):
            raise MeshError("boundary tags must be 'D' or 'N'")
        nvk = max(nv, 1)
        keys = edges[:, 0] * nvk + edges[:, 1]
        be = np.sort(self.boundary_edges, axis=1)
        bkeys = be[:, 0] * nvk + be[:, 1]
        if len(np.unique(bkeys)) != len(bkeys):
            raise MeshError("boundary edge listed twice")
        pos = np.searchsorted(keys, bkeys)
        pos = np.minimum(pos, len(keys) - 1)
        if np.any(keys[pos] != bkeys):
            raise MeshError("boundary edge list contains a pair that is not a mesh edge")
        if np.any(counts[pos] != 1):
            raise MeshError("interior edge tagged as boundary")
        if np.count_nonzero(counts == 1) != len(bkeys):
            missing = edges[counts == 1][~np.isin(keys[counts == 1], bkeys)][0]
            raise MeshError(f"untagged boundary edge {missing.tolist()} (or hanging node)")

    def replace(self, **changes):
        """Copy with modified fields (re-validated)."""
        changes.setdefault("_validated", False)
        return dataclasses.replace(self, **changes)

    def with_boundary_tags(self, predicate):
        """Retag boundary edges: ``predicate(midpoints) -> bool`` marks Dirichlet."""
        mid = self.vertices[self.boundary_edges].mean(axis=1)
        d = np.asarray(predicate(mid), bool)
        tags = np.where(d, DIRICHLET, NEUMANN)
        return self.replace(boundary_tags=tags, _validated=True)


@dataclass(frozen=True, eq=False)
class EdgeTopology:
    """Classified edges with unit normals pointing out of the owning cell.

    For interior edges the stored normal points out of ``int_left``.
    """

    int_edge: np.ndarray
    int_left: np.ndarray
    int_right: np.ndarray
    int_local_left: np.ndarray
    int_local_right: np.ndarray
    int_normal: np.ndarray
    int_length: np.ndarray
    neu_edge: np.ndarray
    neu_cell: np.ndarray
    neu_local: np.ndarray
    neu_normal: np.ndarray
    neu_length: np.ndarray
    dir_edge: np.ndarray
    dir_cell: np.ndarray
    dir_local: np.ndarray
    dir_normal: np.ndarray
    dir_length: np.ndarray
    # per (cell, local edge): outward normal and length
    cell_normal: np.ndarray
    cell_length: np.ndarray


def local_edge_geometry(mesh):
    """Outward unit normals ``(nc, 3, 2)`` and lengths ``(nc, 3)``."""
    p = mesh.vertices[mesh.cells]
    t = p[:, _LOCAL_EDGES[:, 1]] - p[:, _LOCAL_EDGES[:, 0]]
    L = np.hypot(t[..., 0], t[..., 1])
    n = np.stack([t[..., 1], -t[..., 0]], axis=-1) / L[..., None]
    return n, L


def build_edge_topology(mesh):
    """Classify every edge as interior, Neumann or Dirichlet."""
    ec = mesh.edge_cells
    if np.any(np.bincount(mesh.cell_edges.ravel(), minlength=len(mesh.edges)) > 2):
        raise MeshError("non-manifold edge")
    normal, length = local_edge_geometry(mesh)
    ce = mesh.cell_edges
    nc = mesh.n_cells
    # local index of each edge within each of its cells
    loc = np.full(ec.shape, -1, dtype=np.int64)
    for side in (0, 1):
        c = ec[:, side]
        ok = c >= 0
        hits = ce[c[ok]] == np.nonzero(ok)[0][:, None]
        loc[ok, side] = np.argmax(hits, axis=1)
    interior = ec[:, 1] >= 0
    tags = mesh.edge_tags
    out = {}
    ie = np.nonzero(interior)[0]
    out.update(
        int_edge=ie, int_left=ec[ie, 0], int_right=ec[ie, 1],
        int_local_left=loc[ie, 0], int_local_right=loc[ie, 1],
        int_normal=normal[ec[ie, 0], loc[ie, 0]], int_length=length[ec[ie, 0], loc[ie, 0]],
    )
    for prefix, tag in (("neu", NEUMANN), ("dir", DIRICHLET)):
        be = np.nonzero(~interior & (tags == tag))[0]
        c, l = ec[be, 0], loc[be, 0]
        out.update({
            f"{prefix}_edge": be, f"{prefix}_cell": c, f"{prefix}_local": l,
            f"{prefix}_normal": normal[c, l], f"{prefix}_length": length[c, l],
        })
    assert len(ie) + len(out["neu_edge"]) + len(out["dir_edge"]) == len(mesh.edges)
    del nc
    return EdgeTopology(cell_normal=normal, cell_length=length, **out)


# -- refinement ----------------------------------------------------------

def refinement_closure(mesh, marked):
    """Boolean mask of edges to bisect so that the result is conforming."""
    marked = np.asarray(sorted(set(int(c) for c in marked)), dtype=np.int64)
    if marked.size and (marked.min() < 0 or marked.max() >= mesh.n_cells):
        raise IndexError("marked cell id out of range")
    ce = mesh.cell_edges
    ref = ce[np.arange(mesh.n_cells), mesh.refinement_edge]
    mask = np.zeros(len(mesh.edges), bool)
    mask[ref[marked]] = True
    while True:
        need = mask[ce].any(axis=1) & ~mask[ref]
        if not need.any():
            return mask
        mask[ref[need]] = True


def refine(mesh, marked):
    """Newest-vertex bisection of the marked cells plus conforming closure.

    Returns a new mesh whose ``parent`` array maps children to ``mesh`` cells.
    """
    mask = refinement_closure(mesh, marked)
    nv = mesh.n_vertices
    split = np.nonzero(mask)[0]
    mid_id = np.full(len(mesh.edges), -1, dtype=np.int64)
    mid_id[split] = nv + np.arange(len(split))
    e = mesh.edges[split]
    new_vertices = np.vstack([mesh.vertices, 0.5 * (mesh.vertices[e[:, 0]] + mesh.vertices[e[:, 1]])])

    nvk = max(nv, 1)
    edge_keys = mesh.edges[:, 0] * nvk + mesh.edges[:, 1]

    def midpoint(a, b):
        if a >= nv or b >= nv:
            return -1
        lo, hi = (a, b) if a < b else (b, a)
        k = np.searchsorted(edge_keys, lo * nvk + hi)
        if k < len(edge_keys) and edge_keys[k] == lo * nvk + hi:
            return mid_id[k]
        return -1

    cells_out, parent_out, refe_out = [], [], []
    cells, refe, ce = mesh.cells, mesh.refinement_edge, mesh.cell_edges

    def bisect(tri, pid, depth):
        p, a, b = tri
        m = midpoint(a, b) if depth < 3 else -1
        if m < 0:
            cells_out.append(tri)
            parent_out.append(pid)
            refe_out.append(0)
            return
        bisect((m, p, a), pid, depth + 1)
        bisect((m, b, p), pid, depth + 1)

    for c in range(mesh.n_cells):
        r = int(refe[c])
        tri = (int(cells[c, r]), int(cells[c, (r + 1) % 3]), int(cells[c, (r + 2) % 3]))
        if not mask[ce[c]].any():
            # untouched cells keep their vertex order
            cells_out.append(tuple(int(v) for v in cells[c]))
            parent_out.append(c)
            refe_out.append(r)
        else:
            bisect(tri, c, 0)

    cells_new = np.array(cells_out, dtype=np.int64)
    parent = np.array(parent_out, dtype=np.int64)

    bedges, btags = [], []
    for (a, b), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        m = midpoint(int(a), int(b))
        if m < 0:
            bedges.append((a, b))
            btags.append(tag)
        else:
            bedges += [(a, m), (m, b)]
            btags += [tag, tag]

    return TriMesh(
        vertices=new_vertices,
        cells=cells_new,
        boundary_edges=np.array(bedges, dtype=np.int64).reshape(-1, 2),
        boundary_tags=np.array(btags, dtype="<U1"),
        material=mesh.material[parent],
        in_active=mesh.in_active[parent],
        in_interest=mesh.in_interest[parent],
        refinement_edge=np.array(refe_out, np.int8),
        parent=parent,
        generation=mesh.generation + 1,
        anchor=mesh.anchor[parent],
    )


def refine_uniform(mesh, rounds=1):
    """Bisect every cell twice per round (four children per cell).

    ``parent`` of the result points into the mesh of the previous round.
    """
    for _ in range(rounds):
        half = refine(mesh, range(mesh.n_cells))
        full = refine(half, range(half.n_cells))
        mesh = full.replace(parent=half.parent[full.parent], generation=mesh.generation + 1)
    return mesh


def children_of(child_mesh):
    """Dict parent cell id -> array of child ids."""
    if child_mesh.parent is None:
        return {}
    order = np.argsort(child_mesh.parent, kind="stable")
    par = child_mesh.parent[order]
    cuts = np.nonzero(np.diff(par))[0] + 1
    return {int(g[0]): o for g, o in zip(np.split(par, cuts), np.split(order, cuts))}


def hanging_node_count(mesh):
    """Vertices lying strictly inside an edge they do not belong to."""
    from scipy.spatial import cKDTree

    v = mesh.vertices
    tree = cKDTree(v)
    pa, pb = v[mesh.edges[:, 0]], v[mesh.edges[:, 1]]
    d = pb - pa
    L2 = np.einsum("ij,ij->i", d, d)
    hits = tree.query_ball_point(0.5 * (pa + pb), 0.5 * np.sqrt(L2) * (1 + 1e-9))
    count = 0
    for k, cand in enumerate(hits):
        a, b = mesh.edges[k]
        for i in cand:
            if i == a or i == b:
                continue
            w = v[i] - pa[k]
            cross = d[k, 0] * w[1] - d[k, 1] * w[0]
            t = (w @ d[k]) / L2[k]
            if abs(cross) <= 1e-12 * L2[k] and 0.0 < t < 1.0:
                count += 1
    return count


# -- quality --------------------------------------------------------------

def cell_angles(mesh):
    """Interior angles in degrees, shape (nc, 3); column i is at vertex i."""
    p = mesh.vertices[mesh.cells]
    out = np.empty((mesh.n_cells, 3))
    for i in range(3):
        u = p[:, (i + 1) % 3] - p[:, i]
        w = p[:, (i + 2) % 3] - p[:, i]
        cross = np.abs(u[:, 0] * w[:, 1] - u[:, 1] * w[:, 0])
        out[:, i] = np.degrees(np.arctan2(cross, np.einsum("ij,ij->i", u, w)))
    return out


def quality_report(mesh):
    """Min angle (deg), max circumradius/(2*inradius), and counts."""
    p = mesh.vertices[mesh.cells]
    L = np.linalg.norm(p[:, [1, 2, 0]] - p[:, [2, 0, 1]], axis=2)
    area = mesh.signed_areas
    s = 0.5 * L.sum(axis=1)
    inr = area / s
    circ = L.prod(axis=1) / (4.0 * area)
    return {
        "min_angle": float(cell_angles(mesh).min()),
        "max_aspect_ratio": float((circ / (2.0 * inr)).max()),
        "cell_count": mesh.n_cells,
        "vertex_count": mesh.n_vertices,
    }
