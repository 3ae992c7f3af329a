"""Dörfler marking, the goal-oriented adaptive loop and uniform reference runs."""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import dwr, fem
from .mesh import refine, refine_uniform

log = logging.getLogger(__name__)

FIELDS = ("iteration", "cells", "dofs", "qoi", "eta_h", "sum_eta_K", "true_error",
          "effectivity_h", "effectivity_sum", "marked")


class ResourceLimitError(RuntimeError):
    """A requested computation would exceed the configured DOF budget."""


@dataclass(frozen=True)
class AdaptConfig:
    alpha: float = 0.8
    tol: float = 1e-6
    max_iterations: int = 10
    mode: str = "adaptive"

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise ValueError(f"max_iterations must be a positive integer, got {self.max_iterations}")
        if self.mode not in ("adaptive", "uniform"):
            raise ValueError(f"mode must be adaptive or uniform, got {self.mode!r}")


@dataclass
class ConvergenceRecord:
    """One row per solved mesh plus the terminal status."""

    case: str
    qoi: str
    mode: str
    rows: list = field(default_factory=list)
    status: str = "running"
    reports: list = field(default_factory=list, repr=False)

    def append(self, iteration, rep, marked=0):
        self.reports.append(rep)
        self.rows.append({
            "iteration": iteration, "cells": rep.cell_count, "dofs": rep.dof_count,
            "qoi": rep.qoi_value, "eta_h": rep.eta_h, "sum_eta_K": rep.sum_eta_K,
            "true_error": rep.true_error, "effectivity_h": rep.effectivity_h,
            "effectivity_sum": rep.effectivity_sum, "marked": marked,
        })

    def column(self, name):
        return np.array([np.nan if r[name] is None else r[name] for r in self.rows], float)

    def __len__(self):
        return len(self.rows)


def dorfler_mark(eta, alpha):
    """Minimal set of largest-``eta`` cells carrying a fraction ``alpha`` of the total.

    Ties are broken by ascending cell id. Returns cell ids in marking order.
    """
    eta = np.asarray(eta, float)
    if eta.ndim != 1:
        raise ValueError("eta must be one-dimensional")
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if eta.size and (np.any(eta < 0) or not np.all(np.isfinite(eta))):
        raise ValueError("eta must be finite and nonnegative")
    if eta.size == 0:
        return np.zeros(0, np.int64)
    order = np.lexsort((np.arange(eta.size), -eta))
    cs = np.cumsum(eta[order])
    total = cs[-1]
    if total == 0.0:
        return np.zeros(0, np.int64)
    m = int(np.searchsorted(cs, alpha * total, side="left")) + 1
    return order[:m].astype(np.int64)


def _trace(trace, step):
    if trace is not None:
        trace.append(step)


def _solve(case, mesh, qoi, degree, trace):
    disc = dwr.Discretization(case, mesh, degree)
    u_h = disc.solve_primal()
    _trace(trace, "primal")
    z_hat = disc.solve_dual(qoi)
    _trace(trace, "dual")
    A_hat, b_hat = disc.enriched()
    w = dwr.dwr_weight(z_hat, disc.space)
    r = dwr.signed_estimate(u_h, z_hat, case, A_hat, b_hat, weight=w)
    _trace(trace, "eta_h")
    return disc, u_h, z_hat, r, w


def adaptive_loop(case, qoi, cfg, degree=2, reference=None, uncertainty=0.0, trace=None, callback=None):
    """Goal-oriented refinement until ``eta_h <= cfg.tol`` or ``cfg.max_iterations`` refinements.

    ``callback(iteration, mesh, u_h, z_hat, report, local, marked)`` is called
    after every solved mesh; ``trace`` (a list) receives the step names.
    """
    if isinstance(qoi, str):
        qoi = fem.QoISpec(qoi)
    rec = ConvergenceRecord(case.name, qoi.variant, "adaptive")
    mesh = case.mesh
    it = 0
    while True:
        try:
            disc, u_h, z_hat, r, w = _solve(case, mesh, qoi, degree, trace)
        except fem.SolverError:
            rec.status = "error"
            raise
        eta_h = abs(r)
        stop = eta_h <= cfg.tol
        _trace(trace, "stop_check")
        local = dwr.local_estimators(u_h, z_hat, case, weight=w)
        _trace(trace, "eta_K")
        rep = dwr.make_report(eta_h, local, fem.qoi_value(qoi, u_h), disc.space.ndofs, mesh.n_cells,
                              signed_residual=r, reference=reference, uncertainty=uncertainty)
        log.info("iteration %d: %d cells, J=%.10g, eta_h=%.3e", it, mesh.n_cells, rep.qoi_value, eta_h)
        if stop or it >= cfg.max_iterations:
            rec.append(it, rep, 0)
            if callback is not None:
                callback(it, mesh, u_h, z_hat, rep, local, np.zeros(0, np.int64))
            rec.status = "tol_reached" if stop else "max_iter"
            return rec
        order = np.lexsort((np.arange(mesh.n_cells), -local.eta_K))
        _trace(trace, "sort")
        marked = dorfler_mark(local.eta_K, cfg.alpha)
        _trace(trace, "mark")
        if order.size and marked.size:
            assert marked[0] == order[0]
        rec.append(it, rep, len(marked))
        if callback is not None:
            callback(it, mesh, u_h, z_hat, rep, local, marked)
        if marked.size == 0:
            rec.status = "error"
            raise RuntimeError("nothing to refine although eta_h exceeds the tolerance")
        mesh = refine(mesh, marked)
        _trace(trace, "refine")
        case = case.with_mesh(mesh)
        _trace(trace, "rebuild")
        it += 1


def uniform_loop(case, qoi, rounds, degree=2, reference=None, uncertainty=0.0, callback=None):
    """Solve and estimate on ``rounds + 1`` uniformly refined meshes."""
    if isinstance(qoi, str):
        qoi = fem.QoISpec(qoi)
    rec = ConvergenceRecord(case.name, qoi.variant, "uniform")
    mesh = case.mesh
    for it in range(rounds + 1):
        if it:
            mesh = refine_uniform(mesh, 1)
        c = case.with_mesh(mesh)
        try:
            rep, u_h, z_hat, local, _ = dwr.estimate(c, mesh, qoi, degree, reference, uncertainty)
        except fem.SolverError:
            rec.status = "error"
            raise
        rec.append(it, rep, mesh.n_cells if it < rounds else 0)
        if callback is not None:
            callback(it, mesh, u_h, z_hat, rep, local, np.arange(mesh.n_cells))
    rec.status = "max_iter"
    return rec


@dataclass(frozen=True)
class ReferenceValue:
    value: float
    uncertainty: float
    rounds: int
    dofs: int
    history: tuple = ()


def dof_count(mesh, degree):
    k = degree
    return 2 * (mesh.n_vertices + (k - 1) * len(mesh.edges) + (k - 1) * (k - 2) // 2 * mesh.n_cells)


def reference_qoi(case, qoi, extra_rounds=2, base_rounds=0, degree=2, max_dofs=1_500_000):
    """QoI on a fine uniform mesh with a Richardson-style uncertainty.

    The finest mesh is ``base_rounds + extra_rounds`` uniform rounds beyond
    ``case.mesh``; the uncertainty is the change from the previous round.
    """
    if extra_rounds < 2:
        raise ValueError("extra_rounds must be at least 2")
    if isinstance(qoi, str):
        qoi = fem.QoISpec(qoi)
    total = base_rounds + extra_rounds
    mesh = case.mesh
    # a uniform round at least triples the DOF count; refuse hopeless requests before refining
    if dof_count(mesh, degree) * 3 ** total > max_dofs:
        raise ResourceLimitError(f"{total} uniform rounds would exceed {max_dofs} DOFs")
    history = []
    for r in range(total + 1):
        if r:
            mesh = refine_uniform(mesh, 1)
        if r < total - 1:
            continue
        if dof_count(mesh, degree) > max_dofs:
            raise ResourceLimitError(f"reference mesh after {r} rounds exceeds {max_dofs} DOFs")
        space = fem.build_space(mesh, degree)
        c = case.with_mesh(mesh)
        A = fem.assemble_stiffness(space, c.material)
        b = dwr.case_load(c, space)
        u = fem.solve_system(A, b, space)
        history.append((r, space.ndofs, fem.qoi_value(qoi, u)))
        log.info("reference round %d: %d dofs, J=%.12g", r, space.ndofs, history[-1][2])
    (_, _, j_prev), (_, dofs, j_fine) = history[-2], history[-1]
    return ReferenceValue(j_fine, abs(j_fine - j_prev), total, dofs, tuple(history))
