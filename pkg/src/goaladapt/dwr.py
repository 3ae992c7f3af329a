"""Dual weighted residual estimates: enriched dual solve, global and local estimators."""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import basis, fem, kernels
from .mesh import build_edge_topology, local_edge_geometry


@dataclass
class EstimateReport:
    eta_h: float
    eta_K: np.ndarray
    sum_eta_K: float
    qoi_value: float
    dof_count: int
    cell_count: int
    signed_residual: float = 0.0
    reference_qoi: Optional[float] = None
    reference_uncertainty: Optional[float] = None
    true_error: Optional[float] = None
    effectivity_h: Optional[float] = None
    effectivity_sum: Optional[float] = None


@dataclass
class Discretization:
    """Assembled primal (degree k) and enriched (degree k+1) systems on one mesh."""

    case: object
    mesh: object
    degree: int
    space: fem.FunctionSpace = None
    space_hat: fem.FunctionSpace = None
    topo: object = None
    A: object = None
    b: np.ndarray = None
    A_hat: object = None
    b_hat: np.ndarray = None
    _systems: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.topo = build_edge_topology(self.mesh)
        self.space = fem.build_space(self.mesh, self.degree)
        self.space_hat = fem.build_space(self.mesh, self.degree + 1)
        self.A = fem.assemble_stiffness(self.space, self.case.material)
        self.b = case_load(self.case, self.space, self.topo)

    def enriched(self):
        if self.A_hat is None:
            self.A_hat = fem.assemble_stiffness(self.space_hat, self.case.material)
            self.b_hat = case_load(self.case, self.space_hat, self.topo)
        return self.A_hat, self.b_hat

    def system(self, which):
        if which not in self._systems:
            A = self.A if which == "primal" else self.enriched()[0]
            space = self.space if which == "primal" else self.space_hat
            self._systems[which] = fem.ReducedSystem(A, space)
        return self._systems[which]

    def solve_primal(self):
        return self.system("primal").solve(self.b)

    def solve_dual(self, qoi):
        return self.system("dual").solve(fem.qoi_load_vector(qoi, self.space_hat))


def case_load(case, space, topo=None):
    return fem.assemble_load(space, case.body_force, case.traction, case.activation, topo)


def solve_dual(space_hat, mat, q):
    """Enriched dual solution: ``a(v, z) = J(v)`` for all ``v`` in ``space_hat``."""
    A = fem.assemble_stiffness(space_hat, mat)
    return fem.solve_system(A, fem.qoi_load_vector(q, space_hat), space_hat)


def weak_residual(u_h, v, case, A=None, b=None):
    """``r(v) = l(v) - a(u_h, v)`` for ``v`` in a space of degree >= that of ``u_h``."""
    space = v.space
    if A is None:
        A = fem.assemble_stiffness(space, case.material)
    if b is None:
        b = case_load(case, space)
    ue = u_h if u_h.space is space else fem.embed(u_h, space)
    return float(b @ v.coeffs - v.coeffs @ (A @ ue.coeffs))


def signed_estimate(u_h, z_hat, case, A_hat=None, b_hat=None, weight=None):
    """Signed ``r(z_hat)``, evaluated as ``r(z_hat - i_h z_hat)``.

    The two agree by Galerkin orthogonality. Storing ``u_h`` in double
    precision leaves ``r(i_h z_hat)`` at about ``eps |J|``, which can swamp a
    small residual; testing with the weight only avoids that cancellation.
    """
    if z_hat.space.mesh is not u_h.space.mesh:
        raise ValueError("primal and dual fields live on different meshes")
    if z_hat.space.degree <= u_h.space.degree:
        raise ValueError("dual field must live in the enriched space")
    w = dwr_weight(z_hat, u_h.space) if weight is None else weight
    return weak_residual(u_h, w, case, A_hat, b_hat)


def global_estimator(u_h, z_hat, case, A_hat=None, b_hat=None):
    """``eta_h = |r(z_hat)|`` assembled in the enriched space."""
    return abs(signed_estimate(u_h, z_hat, case, A_hat, b_hat))


def dwr_weight(z_hat, primal_space):
    """``z_hat - i_h z_hat`` expressed in the enriched space."""
    iz = fem.embed(fem.interpolate_down(z_hat, primal_space), z_hat.space)
    return fem.FeField(z_hat.space, z_hat.coeffs - iz.coeffs)


# -- explicit residuals, evaluated pointwise ---------------------------------

def _cell_ref(space, cell, points):
    _, _, binv = space.jacobians
    v0 = space.mesh.vertices[space.mesh.cells[cell, 0]]
    return (np.atleast_2d(points) - v0) @ binv[cell].T


def _div_stress(u_h, mat, cell, ref):
    space = u_h.space
    _, _, binv = space.jacobians
    B = binv[cell]
    H = np.einsum("ra,qirs,sd->qiad", B, space.element.hessians(ref), B)
    u = space.local(u_h.coeffs)[cell]                                # (nb, 2)
    Hu = np.einsum("qiad,ib->qbad", H, u)                            # d_a d_d u_b
    lam, mu = (p[cell] for p in mat.cell_parameters(space.mesh))
    graddiv = Hu[:, 0, :, 0] + Hu[:, 1, :, 1]
    lap = Hu[:, :, 0, 0] + Hu[:, :, 1, 1]
    return (lam + mu) * graddiv + mu * lap


def cell_residual(u_h, case, cell, points):
    """``R_K = f + div sigma_A(u_h)`` at physical points of ``cell``.

    Fiber directions are constant per cell, so the active stress has no
    in-cell divergence.
    """
    pts = np.atleast_2d(np.asarray(points, float))
    R = _div_stress(u_h, case.material, cell, _cell_ref(u_h.space, cell, pts))
    if case.body_force is not None:
        R = R + np.asarray(case.body_force(pts), float).reshape(R.shape)
    return R


def _stress_at(u_h, case, cell, points):
    return np.array([fem.stress(u_h, case.material, case.activation, cell, p) for p in np.atleast_2d(points)])


def edge_residual(u_h, case, cell, local_edge, points):
    """``R_{E,K}`` at physical points of edge ``local_edge`` of ``cell``.

    Interior edges: half the stress jump ``(sigma_out - sigma_K) n_K``;
    Neumann edges: ``F - sigma_A n``; Dirichlet edges return zeros.
    """
    mesh = u_h.space.mesh
    pts = np.atleast_2d(np.asarray(points, float))
    tag = mesh.edge_tags[mesh.cell_edges[cell, local_edge]]
    if tag == "D":
        return np.zeros_like(pts)
    normals, _ = local_edge_geometry(mesh)
    n = normals[cell, local_edge]
    s_in = _stress_at(u_h, case, cell, pts) @ n
    if tag == "N":
        F = np.zeros_like(pts) if case.traction is None else np.asarray(
            case.traction(pts, np.broadcast_to(n, pts.shape)), float).reshape(pts.shape)
        return F - s_in
    g = mesh.cell_edges[cell, local_edge]
    other = [c for c in mesh.edge_cells[g] if c != cell][0]
    s_out = _stress_at(u_h, case, other, pts) @ n
    return 0.5 * (s_out - s_in)


# -- local estimators (kernel path) ------------------------------------------

@dataclass
class LocalEstimate:
    eta_K: np.ndarray
    signed: np.ndarray
    cell_part: np.ndarray
    edge_part: np.ndarray


def _edge_tables(element, t):
    g = np.empty((3, 2, len(t), element.nbasis, 2))
    v = np.empty((3, 2, len(t), element.nbasis))
    for e in range(3):
        for o in (0, 1):
            ref = basis.edge_points(e, t, reverse=bool(o))
            g[e, o] = element.gradients(ref)
            v[e, o] = element.values(ref)
    return g, v


def local_estimators(u_h, z_hat, case, weight=None):
    """Cell-wise ``eta_K`` from explicit residuals weighted by ``z_hat - i_h z_hat``."""
    Vh, Vf = u_h.space, z_hat.space
    mesh = Vh.mesh
    if Vf.mesh is not mesh:
        raise ValueError("primal and dual fields live on different meshes")
    nc = mesh.n_cells
    w = dwr_weight(z_hat, Vh) if weight is None else weight
    u_loc = Vh.local(u_h.coeffs)
    w_loc = Vf.local(w.coeffs)
    _, det, binv = Vh.jacobians
    lam, mu = case.material.cell_parameters(mesh)
    S = case.activation.active_stress(mesh) if case.activation is not None else np.zeros((nc, 2, 2))

    pts, qw = fem.load_cell_rule()
    href = Vh.element.hessians(pts)
    phif = Vf.element.values(pts)
    if case.body_force is not None:
        x = Vh.map_points(pts)
        fq = np.asarray(case.body_force(x.reshape(-1, 2)), float).reshape(x.shape)
    else:
        fq = np.zeros((nc, len(qw), 2))

    t, tw = fem.load_edge_rule()
    gref_e, _ = _edge_tables(Vh.element, t)
    _, phif_e = _edge_tables(Vf.element, t)
    orient = Vh.edge_reversed.astype(np.int64)

    tags = mesh.edge_tags[mesh.cell_edges]
    kind = np.where(tags == "N", 1, np.where(tags == "D", 2, 0))
    ec = mesh.edge_cells[mesh.cell_edges]                       # (nc, 3, 2)
    me = np.arange(nc)[:, None]
    nbr = np.where(ec[..., 0] == me, ec[..., 1], ec[..., 0])
    nbr = np.where(kind == 0, nbr, 0)
    nbr_e = np.argmax(mesh.cell_edges[nbr] == mesh.cell_edges[:, :, None], axis=2)
    normal, length = local_edge_geometry(mesh)

    trac = np.zeros((nc, 3, len(t), 2))
    if case.traction is not None and np.any(kind == 1):
        ci, ei = np.nonzero(kind == 1)
        v = mesh.vertices[mesh.cells]
        a = v[ci, (ei + 1) % 3]
        b = v[ci, (ei + 2) % 3]
        rev = orient[ci, ei].astype(bool)
        start = np.where(rev[:, None], b, a)
        end = np.where(rev[:, None], a, b)
        x = start[:, None, :] + t[None, :, None] * (end - start)[:, None, :]
        n = np.broadcast_to(normal[ci, ei][:, None, :], x.shape)
        trac[ci, ei] = np.asarray(case.traction(x.reshape(-1, 2), n.reshape(-1, 2)), float).reshape(x.shape)

    sig_e = kernels.edge_stress(u_loc, gref_e, binv, lam, mu, S, orient)
    cell_part, edge_part = kernels.residual_integrals(
        u_loc, w_loc, href, phif, qw, fq, binv, det, lam, mu,
        sig_e, phif_e, tw, kind, nbr, nbr_e, orient, normal, length, trac)
    signed = cell_part + edge_part
    return LocalEstimate(np.abs(signed), signed, cell_part, edge_part)


def make_report(eta_h, local, qoi_value, dof_count, cell_count, signed_residual=0.0,
                reference=None, uncertainty=0.0):
    """Bundle estimator values; effectivities need a trustworthy reference.

    Effectivities are withheld when the true error is below ten times the
    reference uncertainty.
    """
    eta_K = np.asarray(local.eta_K if isinstance(local, LocalEstimate) else local, float)
    rep = EstimateReport(
        eta_h=float(eta_h), eta_K=eta_K, sum_eta_K=float(eta_K.sum()),
        qoi_value=float(qoi_value), dof_count=int(dof_count), cell_count=int(cell_count),
        signed_residual=float(signed_residual),
    )
    if reference is not None:
        rep.reference_qoi = float(reference)
        rep.reference_uncertainty = float(uncertainty or 0.0)
        err = abs(reference - qoi_value)
        rep.true_error = err
        if err > 0 and err >= 10.0 * rep.reference_uncertainty:
            rep.effectivity_h = rep.eta_h / err
            rep.effectivity_sum = rep.sum_eta_K / err
    return rep


def estimate(case, mesh, qoi, degree=2, reference=None, uncertainty=0.0, disc=None):
    """Primal solve, dual solve, global and local estimators on one mesh.

    Returns ``(report, u_h, z_hat, local, disc)``.
    """
    disc = disc or Discretization(case, mesh, degree)
    u_h = disc.solve_primal()
    z_hat = disc.solve_dual(qoi)
    A_hat, b_hat = disc.enriched()
    w = dwr_weight(z_hat, u_h.space)
    r = signed_estimate(u_h, z_hat, case, A_hat, b_hat, weight=w)
    local = local_estimators(u_h, z_hat, case, weight=w)
    rep = make_report(abs(r), local, fem.qoi_value(qoi, u_h), disc.space.ndofs, mesh.n_cells,
                      signed_residual=r, reference=reference, uncertainty=uncertainty)
    return rep, u_h, z_hat, local, disc
