"""Vector Lagrange spaces and plane-strain elasticity with active pre-stress."""
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import basis, kernels
from .mesh import DIRICHLET, build_edge_topology
from .quadrature import line_rule, triangle_rule

SOLVER_RTOL = 1e-12


class SolverError(RuntimeError):
    """Singular or inaccurate linear solve."""


# -- spaces and fields -------------------------------------------------------

class FunctionSpace:
    """Continuous vector-valued P_k space on a mesh.

    Scalar nodes are numbered vertices first, then ``k-1`` nodes per global
    edge (ordered from the lower to the higher vertex index), then interior
    nodes cell by cell. DOF ``2*node + comp`` carries component ``comp``.
    """

    def __init__(self, mesh, degree):
        if degree not in (1, 2, 3, 4):
            raise ValueError(f"unsupported degree {degree}; expected 1, 2 or 3 (4 only as an enriched space)")
        self.mesh = mesh
        self.degree = degree
        self.element = basis.element(degree)
        el = self.element
        nv, ne, nc = mesh.n_vertices, len(mesh.edges), mesh.n_cells
        k = degree
        nodes = np.empty((nc, el.nbasis), np.int64)
        nodes[:, :3] = mesh.cells
        a = mesh.cells[:, [1, 2, 0]]
        b = mesh.cells[:, [2, 0, 1]]
        self.edge_reversed = a > b               # local edge runs hi -> lo
        if k > 1:
            slots = np.arange(k - 1)
            for e in range(3):
                base = nv + (k - 1) * mesh.cell_edges[:, e]
                idx = np.where(self.edge_reversed[:, e, None], k - 2 - slots, slots)
                nodes[:, 3 + e * (k - 1):3 + (e + 1) * (k - 1)] = base[:, None] + idx
        n_int = el.n_interior
        if n_int:
            start = nv + (k - 1) * ne
            nodes[:, 3 + 3 * (k - 1):] = start + n_int * np.arange(nc)[:, None] + np.arange(n_int)
        self.cell_nodes = nodes
        self.n_nodes = nv + (k - 1) * ne + n_int * nc
        self.ndofs = 2 * self.n_nodes
        self.cell_dofs = (2 * nodes[:, :, None] + np.arange(2)).reshape(nc, -1)

    # geometry shared by all spaces on a mesh
    @cached_property
    def jacobians(self):
        p = self.mesh.vertices[self.mesh.cells]
        B = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)   # columns
        det = B[:, 0, 0] * B[:, 1, 1] - B[:, 0, 1] * B[:, 1, 0]
        binv = np.empty_like(B)
        binv[:, 0, 0] = B[:, 1, 1] / det
        binv[:, 1, 1] = B[:, 0, 0] / det
        binv[:, 0, 1] = -B[:, 0, 1] / det
        binv[:, 1, 0] = -B[:, 1, 0] / det
        return B, det, binv

    def map_points(self, ref):
        """Physical coordinates ``(nc, npts, 2)`` of reference points."""
        B, _, _ = self.jacobians
        v0 = self.mesh.vertices[self.mesh.cells[:, 0]]
        return v0[:, None, :] + np.einsum("cij,qj->cqi", B, np.atleast_2d(ref))

    @cached_property
    def node_coordinates(self):
        xy = np.empty((self.n_nodes, 2))
        xy[self.cell_nodes.ravel()] = self.map_points(self.element.nodes).reshape(-1, 2)
        return xy

    @cached_property
    def dirichlet_nodes(self):
        mesh = self.mesh
        k = self.degree
        de = np.nonzero(mesh.edge_tags == DIRICHLET)[0]
        parts = [mesh.edges[de].ravel()]
        if k > 1:
            parts.append((mesh.n_vertices + (k - 1) * de[:, None] + np.arange(k - 1)).ravel())
        return np.unique(np.concatenate(parts)) if parts[0].size else np.zeros(0, np.int64)

    @cached_property
    def dirichlet_dofs(self):
        n = self.dirichlet_nodes
        return np.sort(np.concatenate([2 * n, 2 * n + 1]))

    @cached_property
    def free_dofs(self):
        mask = np.ones(self.ndofs, bool)
        mask[self.dirichlet_dofs] = False
        return np.nonzero(mask)[0]

    def local(self, coeffs):
        """Per-cell coefficients ``(nc, nb, 2)``."""
        return np.asarray(coeffs)[self.cell_dofs].reshape(self.mesh.n_cells, -1, 2)

    def __repr__(self):
        return f"FunctionSpace(P{self.degree}, cells={self.mesh.n_cells}, dofs={self.ndofs})"


def build_space(mesh, degree):
    return FunctionSpace(mesh, degree)


@dataclass(eq=False)
class FeField:
    space: FunctionSpace
    coeffs: np.ndarray
    residual: float = 0.0

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.ndofs,):
            raise ValueError(f"expected {self.space.ndofs} coefficients, got {self.coeffs.shape}")

    def gradients_at(self, ref):
        """Displacement gradients ``(nc, npts, comp, deriv)`` at reference points."""
        _, _, binv = self.space.jacobians
        g = np.einsum("crd,qir->cqid", binv, self.space.element.gradients(ref))
        return np.einsum("cia,cqid->cqad", self.space.local(self.coeffs), g)

    def values_at(self, ref):
        """Displacements ``(nc, npts, 2)`` at reference points."""
        return np.einsum("qi,cia->cqa", self.space.element.values(ref), self.space.local(self.coeffs))

    @property
    def nodal_values(self):
        return self.coeffs.reshape(-1, 2)


def interpolate_function(space, func):
    """Nodal interpolant of ``func(xy) -> (n, 2)``."""
    return FeField(space, np.asarray(func(space.node_coordinates), float).reshape(-1))


# -- material, activation and QoI data ---------------------------------------

def lame(E, nu):
    """Plane-strain Lame parameters ``(lambda, mu)``."""
    return E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)), E / (2.0 * (1.0 + nu))


@dataclass(frozen=True)
class MaterialField:
    """Young modulus (MPa) and Poisson ratio per material region id."""

    regions: dict

    def __post_init__(self):
        for rid, (E, nu) in self.regions.items():
            if not E > 0:
                raise ValueError(f"region {rid}: Young modulus must be positive, got {E}")
            if not 0 <= nu < 0.5:
                raise ValueError(f"region {rid}: Poisson ratio must lie in [0, 0.5), got {nu}")

    @classmethod
    def uniform(cls, E, nu):
        return cls({0: (E, nu)})

    def cell_parameters(self, mesh):
        """Per-cell ``(lambda, mu)`` arrays."""
        ids = np.unique(mesh.material)
        missing = [int(i) for i in ids if int(i) not in self.regions]
        if missing:
            if len(self.regions) == 1:
                (E, nu), = self.regions.values()
                lam, mu = lame(E, nu)
                return np.full(mesh.n_cells, lam), np.full(mesh.n_cells, mu)
            raise ValueError(f"no material for region ids {missing}")
        lam = np.empty(mesh.n_cells)
        mu = np.empty(mesh.n_cells)
        for rid in ids:
            l, m = lame(*self.regions[int(rid)])
            sel = mesh.material == rid
            lam[sel], mu[sel] = l, m
        return lam, mu


@dataclass(frozen=True)
class FiberField:
    """Cell-wise constant fiber directions, evaluated at each cell's anchor.

    ``constant``: fixed ``direction``; ``radial_fan``: unit vector from
    ``point`` to the anchor; ``circumferential``: ``e_theta`` about ``point``.
    Anchors are initial-mesh centroids inherited under refinement.
    """

    mode: str = "constant"
    direction: tuple = (1.0, 0.0)
    point: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.mode not in ("constant", "radial_fan", "circumferential"):
            raise ValueError(f"unknown fiber mode {self.mode!r}")

    def directions(self, xy):
        xy = np.atleast_2d(xy)
        if self.mode == "constant":
            d = np.broadcast_to(np.asarray(self.direction, float), xy.shape).copy()
        else:
            r = xy - np.asarray(self.point, float)
            d = r if self.mode == "radial_fan" else np.column_stack([-r[:, 1], r[:, 0]])
        n = np.linalg.norm(d, axis=1)
        if np.any(n == 0):
            raise ValueError("fiber direction undefined at the fan/circumferential centre")
        return d / n[:, None]


@dataclass(frozen=True)
class ActivationSpec:
    """Active fiber pre-stress ``beta * T * e_A (x) e_A`` on cells flagged in omega_A."""

    T: float = 0.0
    beta: float = 0.0
    fibers: FiberField = field(default_factory=FiberField)

    def __post_init__(self):
        if self.T < 0:
            raise ValueError("fiber tension T must be >= 0")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("activation beta must lie in [0, 1]")

    @property
    def strength(self):
        return self.beta * self.T

    def cell_directions(self, mesh):
        d = np.zeros((mesh.n_cells, 2))
        sel = mesh.in_active
        if sel.any():
            d[sel] = self.fibers.directions(mesh.anchor[sel])
        return d

    def active_stress(self, mesh):
        """Per-cell ``(nc, 2, 2)`` active stress (zero outside omega_A)."""
        d = self.cell_directions(mesh)
        return self.strength * np.einsum("ci,cj->cij", d, d)


NO_ACTIVATION = ActivationSpec()


@dataclass(frozen=True)
class QoISpec:
    """``J1 = int_omega (u_x + u_y)`` or ``J2 = int_omega div u`` over flagged cells.

    ``scale`` multiplies the functional.
    """

    variant: str = "J1"
    scale: float = 1.0

    def __post_init__(self):
        if self.variant not in ("J1", "J2"):
            raise ValueError(f"unknown QoI {self.variant!r}; expected J1 or J2")


# -- assembly ----------------------------------------------------------------

def cell_rule(degree):
    """Quadrature used for volume terms on a degree-``degree`` space."""
    return triangle_rule(2 * degree + 2)


def edge_rule(degree):
    return line_rule(2 * degree + 2)


LOAD_DEGREE = 10


def load_cell_rule():
    """Rule for load data, shared by all space degrees.

    Nested spaces then see identical load integrals, so Galerkin
    orthogonality carries over exactly to the enriched space.
    """
    return triangle_rule(LOAD_DEGREE)


def load_edge_rule():
    return line_rule(LOAD_DEGREE)


def _scatter_matrix(space, blocks):
    d = space.cell_dofs
    rows = np.broadcast_to(d[:, :, None], blocks.shape).ravel()
    cols = np.broadcast_to(d[:, None, :], blocks.shape).ravel()
    A = sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=(space.ndofs, space.ndofs)).tocsr()
    A.sum_duplicates()
    return A


def _scatter_vector(space, local):
    return np.bincount(space.cell_dofs.ravel(), weights=local.ravel(), minlength=space.ndofs)


def element_stiffness(space, mat):
    pts, qw = cell_rule(space.degree)
    _, det, binv = space.jacobians
    lam, mu = mat.cell_parameters(space.mesh)
    return kernels.elastic_blocks(space.element.gradients(pts), qw, binv, det, lam, mu)


def assemble_stiffness(space, mat):
    """Sparse symmetric matrix of ``a(v, w) = int sigma(v) : eps(w)``."""
    _, det, _ = space.jacobians
    if np.any(det <= 0):
        raise ValueError("degenerate or inverted cell")
    A = _scatter_matrix(space, element_stiffness(space, mat))
    return ((A + A.T) * 0.5).tocsr()


def assemble_body_force(space, body_force):
    pts, qw = load_cell_rule()
    _, det, _ = space.jacobians
    x = space.map_points(pts)
    f = np.asarray(body_force(x.reshape(-1, 2)), float).reshape(x.shape)
    phi = space.element.values(pts)
    local = np.einsum("q,c,cqa,qi->cia", qw, det, f, phi)
    return _scatter_vector(space, local)


def assemble_traction(space, traction, topo=None):
    topo = topo or build_edge_topology(space.mesh)
    b = np.zeros(space.ndofs)
    if len(topo.neu_cell) == 0:
        return b
    t, tw = load_edge_rule()
    B, _, _ = space.jacobians
    mesh = space.mesh
    for e in range(3):
        sel = topo.neu_local == e
        if not sel.any():
            continue
        cells = topo.neu_cell[sel]
        ref = basis.edge_points(e, t)
        v0 = mesh.vertices[mesh.cells[cells, 0]]
        x = v0[:, None, :] + np.einsum("cij,qj->cqi", B[cells], ref)
        n = np.broadcast_to(topo.neu_normal[sel][:, None, :], x.shape)
        F = np.asarray(traction(x.reshape(-1, 2), n.reshape(-1, 2)), float).reshape(x.shape)
        phi = space.element.values(ref)
        local = np.einsum("q,c,cqa,qi->cia", tw, topo.neu_length[sel], F, phi)
        dofs = space.cell_dofs[cells]
        b += np.bincount(dofs.ravel(), weights=local.ravel(), minlength=space.ndofs)
    return b


def assemble_active(space, act):
    """Vector of ``l_A(w) = -beta T int_{omega_A} (eps(w) e_A) . e_A``."""
    S = act.active_stress(space.mesh)
    pts, qw = cell_rule(space.degree)
    _, det, binv = space.jacobians
    g = np.einsum("crd,qir->cqid", binv, space.element.gradients(pts))
    local = -np.einsum("q,c,cab,cqib->cia", qw, det, S, g)
    return _scatter_vector(space, local)


def assemble_load(space, body_force=None, traction=None, act=None, topo=None):
    """``b = b_E + b_A``; terms with no data are skipped entirely."""
    b = np.zeros(space.ndofs)
    if body_force is not None:
        b += assemble_body_force(space, body_force)
    if traction is not None:
        b += assemble_traction(space, traction, topo)
    if act is not None and act.strength != 0.0 and space.mesh.in_active.any():
        b += assemble_active(space, act)
    return b


# -- solve -------------------------------------------------------------------

class ReducedSystem:
    """Factorisation of the stiffness matrix restricted to free DOFs."""

    def __init__(self, A, space):
        if len(space.dirichlet_dofs) == 0:
            raise SolverError("no Dirichlet constraints: the elasticity system is singular")
        self.space = space
        self.free = space.free_dofs
        self.A = A
        self.Aff = A[self.free][:, self.free].tocsc()
        try:
            # SPD: symmetric ordering, diagonal pivots
            self.lu = spla.splu(self.Aff, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise SolverError(f"singular reduced system: {exc}") from exc

    def solve(self, b):
        """Solve ``A x = b`` on the free DOFs.

        Accuracy is judged by the normwise backward error
        ``|A x - b| / (|A| |x| + |b|)`` (infinity norms), refined iteratively.
        """
        bf = np.asarray(b, float)[self.free]
        x = np.zeros(self.space.ndofs)
        if not np.any(bf):
            return FeField(self.space, x, 0.0)
        xf = self.lu.solve(bf)
        res = self._backward_error(xf, bf)
        for _ in range(3):
            if res <= SOLVER_RTOL:
                break
            xf = xf + self.lu.solve(bf - self.Aff @ xf)
            res = self._backward_error(xf, bf)
        if not np.all(np.isfinite(xf)) or res > SOLVER_RTOL:
            raise SolverError(f"linear solve backward error {res:.2e} exceeds {SOLVER_RTOL:.0e}")
        x[self.free] = xf
        return FeField(self.space, x, float(res))

    @cached_property
    def norm_A(self):
        return float(abs(self.Aff).sum(axis=1).max())

    def _backward_error(self, xf, bf):
        r = np.abs(self.Aff @ xf - bf).max()
        return float(r / (self.norm_A * np.abs(xf).max() + np.abs(bf).max()))


def solve_system(A, b, space):
    """Solve with homogeneous Dirichlet data by symmetric elimination."""
    return ReducedSystem(A, space).solve(b)


# -- post-processing ---------------------------------------------------------

def strain_stress(field, mat, act=None, ref=((1 / 3, 1 / 3),)):
    """Strain and total stress ``(nc, npts, 2, 2)`` at reference points."""
    du = field.gradients_at(np.asarray(ref, float))
    eps = 0.5 * (du + np.swapaxes(du, -1, -2))
    lam, mu = mat.cell_parameters(field.space.mesh)
    tr = eps[..., 0, 0] + eps[..., 1, 1]
    sig = lam[:, None, None, None] * tr[..., None, None] * np.eye(2) + 2 * mu[:, None, None, None] * eps
    if act is not None:
        sig = sig + act.active_stress(field.space.mesh)[:, None]
    return eps, sig


def stress(field, mat, act, cell, point):
    """Total stress ``sigma(u_h) + beta T e_A (x) e_A chi_A`` at a physical point."""
    space = field.space
    B, _, binv = space.jacobians
    v0 = space.mesh.vertices[space.mesh.cells[cell, 0]]
    ref = binv[cell] @ (np.asarray(point, float) - v0)
    if ref.min() < -1e-10 or ref.sum() > 1 + 1e-10:
        raise ValueError(f"point {tuple(point)} is outside cell {cell}")
    el = space.element
    g = el.gradients(ref[None])[0] @ binv[cell]
    u = space.local(field.coeffs)[cell]
    du = u.T @ g
    eps = 0.5 * (du + du.T)
    lam, mu = (p[cell] for p in mat.cell_parameters(space.mesh))
    sig = lam * np.trace(eps) * np.eye(2) + 2 * mu * eps
    if act is not None and space.mesh.in_active[cell]:
        sig = sig + act.active_stress(space.mesh)[cell]
    return sig


def qoi_load_vector(q, space):
    """Vector ``j`` with ``j @ v.coeffs == J(v)`` for every field ``v``."""
    mesh = space.mesh
    j = np.zeros(space.ndofs)
    cells = np.nonzero(mesh.in_interest)[0]
    if cells.size == 0:
        return j
    pts, qw = cell_rule(space.degree)
    _, det, binv = space.jacobians
    if q.variant == "J1":
        phi = space.element.values(pts)
        integ = np.einsum("q,c,qi->ci", qw, det[cells], phi)
        local = np.repeat(integ[:, :, None], 2, axis=2)
    else:
        g = np.einsum("crd,qir->cqid", binv[cells], space.element.gradients(pts))
        local = np.einsum("q,c,cqid->cid", qw, det[cells], g)
    j += np.bincount(space.cell_dofs[cells].ravel(), weights=q.scale * local.ravel(), minlength=space.ndofs)
    return j


def qoi_value(q, field):
    """Direct cell-by-cell integral of the QoI."""
    space = field.space
    cells = np.nonzero(space.mesh.in_interest)[0]
    if cells.size == 0:
        return 0.0
    pts, qw = cell_rule(space.degree)
    _, det, _ = space.jacobians
    if q.variant == "J1":
        vals = field.values_at(pts)[cells]
        integrand = vals[..., 0] + vals[..., 1]
    else:
        du = field.gradients_at(pts)[cells]
        integrand = du[..., 0, 0] + du[..., 1, 1]
    return float(q.scale * np.einsum("q,c,cq->", qw, det[cells], integrand))


def nodal_transfer(field, target):
    """Evaluate ``field`` at the Lagrange nodes of ``target`` (same mesh)."""
    src = field.space
    if target.mesh is not src.mesh and not (
            target.mesh.n_cells == src.mesh.n_cells and np.array_equal(target.mesh.cells, src.mesh.cells)
            and np.array_equal(target.mesh.vertices, src.mesh.vertices)):
        raise ValueError("fields live on different meshes")
    M = src.element.values(target.element.nodes)            # (nb_t, nb_s)
    # exact 0 / 1 entries so nodal values (and Dirichlet zeros) carry over bitwise
    M[np.abs(M) < 1e-12] = 0.0
    M[np.abs(M - 1.0) < 1e-12] = 1.0
    vals = np.einsum("ts,csa->cta", M, src.local(field.coeffs))
    out = np.zeros(target.ndofs)
    out[target.cell_dofs.ravel()] = vals.reshape(-1)
    return FeField(target, out)


def interpolate_down(fine, coarse_space):
    """Lagrange interpolant ``i_h`` of an enriched field onto ``coarse_space``."""
    if coarse_space.degree >= fine.space.degree:
        raise ValueError("target space must have lower degree")
    return nodal_transfer(fine, coarse_space)


def embed(field, fine_space):
    """Exact representation of a P_k field in a P_m space, m >= k."""
    if fine_space.degree < field.space.degree:
        raise ValueError("target space must have higher or equal degree")
    return nodal_transfer(field, fine_space)
