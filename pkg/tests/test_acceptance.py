"""End-to-end acceptance checks; each test prints one PASS/FAIL line."""
import json
import time

import numpy as np
import pytest

from goaladapt import adapt, cases, cli, dwr, fem
from goaladapt.adapt import AdaptConfig, adaptive_loop, dorfler_mark, reference_qoi, uniform_loop
from goaladapt.mesh import cell_angles, hanging_node_count

from conftest import record_criterion
from test_adapt import prefix_oracle

ITERATIONS = {"manufactured": 6, "tongue": 8, "artery": 10}


def _audit_callback(case0, store, rng):
    """Per-iteration Galerkin orthogonality and local/global consistency audits."""

    def cb(it, mesh, u_h, z_hat, rep, local, marked):
        c = case0.with_mesh(mesh)
        sp = u_h.space
        A = fem.assemble_stiffness(sp, c.material)
        b = dwr.case_load(c, sp)
        picks = rng.choice(sp.free_dofs, size=min(50, len(sp.free_dofs)), replace=False)
        r = b[picks] - A[picks] @ u_h.coeffs
        scale = abs(A).sum(axis=1).max() * np.abs(u_h.coeffs).max() + np.abs(b).max()
        store.append({
            "mesh": mesh,
            "galerkin": float(np.abs(r).max() / scale) if scale > 0 else 0.0,
            "signed_gap": abs(local.signed.sum() - rep.signed_residual),
            "signed_ref": abs(rep.signed_residual),
            "eta_h": rep.eta_h,
            "sum_eta_K": rep.sum_eta_K,
        })

    return cb


@pytest.fixture(scope="session")
def audited_runs():
    runs = {}
    rng = np.random.default_rng(20240611)
    for name in cases.SHIPPED_CASES + ("patch",):
        case = cases.builtin_case(name)
        for variant in ("J1", "J2"):
            store = []
            n_it = ITERATIONS.get(name, 1) if variant == "J1" else 3
            adaptive_loop(case, variant, AdaptConfig(tol=1e-14, max_iterations=n_it),
                          callback=_audit_callback(case, store, rng))
            runs[name, variant] = store
    return runs


def test_criterion_01_manufactured_convergence():
    t0 = time.perf_counter()
    case = cases.case_manufactured_square()
    J = case.qoi_exact(fem.QoISpec("J1"))
    rec = uniform_loop(case, "J1", 4, reference=J)
    elapsed = time.perf_counter() - t0
    err = rec.column("true_error")
    h = 1.0 / np.sqrt(rec.column("cells"))
    slope = np.polyfit(np.log(h), np.log(err), 1)[0]
    ok = slope >= 3.5 and elapsed < 60
    record_criterion(1, ok, f"fitted slope {slope:.2f} (>= 3.5), {elapsed:.1f} s (< 60 s)")
    assert ok


def test_criterion_02_manufactured_effectivity():
    case = cases.case_manufactured_square()
    J = case.qoi_exact(fem.QoISpec("J1"))
    rec = uniform_loop(case, "J1", 4, reference=J)
    err = rec.column("true_error")[-3:]
    eh = rec.column("eta_h")[-3:] / err
    es = rec.column("sum_eta_K")[-3:] / err
    ok = np.all((eh >= 0.5) & (eh <= 2.0)) and np.all((es >= 0.5) & (es <= 3.0))
    record_criterion(2, ok, f"eta_h/err {np.round(eh, 3).tolist()}, sum eta_K/err {np.round(es, 3).tolist()}")
    assert ok


def test_criterion_03_galerkin_orthogonality(audited_runs):
    worst = max(row["galerkin"] for rows in audited_runs.values() for row in rows)
    n = sum(len(rows) for rows in audited_runs.values())
    ok = worst <= 1e-9
    record_criterion(3, ok, f"max relative |r(v_h)| {worst:.1e} over {n} meshes (<= 1e-9)")
    assert ok


def test_criterion_04_local_global_consistency(audited_runs):
    gap = bound = 0.0
    floored = 0
    for (name, _), rows in audited_runs.items():
        if name == "patch":
            continue
        for row in rows:
            # r(z) below 1e-10 of the summed magnitudes is pure cancellation round-off
            # (J2 on the symmetric manufactured case); measure against the summands then
            cancelled = row["signed_ref"] <= 1e-10 * row["sum_eta_K"]
            scale = row["sum_eta_K"] if cancelled else row["signed_ref"]
            floored += cancelled
            gap = max(gap, row["signed_gap"] / scale)
            bound = max(bound, (row["eta_h"] - row["sum_eta_K"]) / row["sum_eta_K"])
    ok = gap <= 1e-9 and bound <= 1e-12
    record_criterion(4, ok, f"max |sum signed - r(z)| relative {gap:.1e} (<= 1e-9, {floored} fully cancelled "
                            f"meshes scaled by sum eta_K), max (eta_h - sum)/sum {bound:.1e} (<= 1e-12)")
    assert ok


def test_criterion_05_dorfler_oracle():
    rng = np.random.default_rng(5)
    mismatches = 0
    for trial in range(1000):
        n = int(rng.integers(1, 201))
        kind = trial % 3
        if kind == 0:
            eta = rng.random(n)
        elif kind == 1:
            eta = rng.integers(0, 4, n).astype(float)      # many ties and zeros
        else:
            eta = rng.exponential(size=n) ** 3
        alpha = (0.3, 0.5, 0.8, 1.0)[trial % 4]
        if dorfler_mark(eta, alpha).tolist() != prefix_oracle(eta.tolist(), alpha):
            mismatches += 1
    ok = mismatches == 0
    record_criterion(5, ok, f"{mismatches} mismatches in 1000 random vectors")
    assert ok


def test_criterion_06_mesh_properties(audited_runs):
    meshes = [row["mesh"] for row in audited_runs["artery", "J1"]]
    assert len(meshes) == 11
    a0 = cell_angles(meshes[0]).min()
    hanging = sum(hanging_node_count(m) for m in meshes)
    area_err = 0.0
    for coarse, fine in zip(meshes, meshes[1:]):
        sums = np.bincount(fine.parent, weights=fine.areas, minlength=coarse.n_cells)
        area_err = max(area_err, float(np.max(np.abs(sums - coarse.areas) / coarse.areas)))
    amin = min(cell_angles(m).min() for m in meshes)
    ok = hanging == 0 and area_err <= 1e-12 and amin >= a0 / 2
    record_criterion(6, ok, f"{hanging} hanging nodes, child-area rel. error {area_err:.1e}, "
                            f"min angle {amin:.2f} deg vs initial {a0:.2f} deg / 2 "
                            f"({meshes[0].n_cells} -> {meshes[-1].n_cells} cells)")
    assert ok


def _dominance(name):
    case = cases.builtin_case(name)
    ref = reference_qoi(case, "J1", extra_rounds=2, base_rounds=2)
    uni = uniform_loop(case, "J1", 2, reference=ref.value, uncertainty=ref.uncertainty)
    target = uni.rows[-1]["true_error"]
    n_uni = uni.rows[-1]["cells"]
    ad = adaptive_loop(case, "J1", AdaptConfig(tol=1e-14, max_iterations=14),
                       reference=ref.value, uncertainty=ref.uncertainty)
    hit = next((r for r in ad.rows if r["true_error"] <= target), None)
    n_ad = hit["cells"] if hit else None
    return ref, target, n_uni, n_ad


@pytest.fixture(scope="session")
def dominance():
    return {name: _dominance(name) for name in ("tongue", "artery")}


def test_criterion_07_adaptive_dominance(dominance):
    parts, ok = [], True
    for name, (ref, target, n_uni, n_ad) in dominance.items():
        good = n_ad is not None and n_ad <= 0.6 * n_uni
        ok &= good
        parts.append(f"{name}: error {target:.2e} at {n_uni} uniform cells vs "
                     f"{n_ad} adaptive ({'%.0f%%' % (100 * n_ad / n_uni) if n_ad else 'not reached'})")
    record_criterion(7, ok, "; ".join(parts))
    assert ok


def test_criterion_08_activation_sanity():
    zero_norms = []
    for name in cases.BUILTIN_CASES:
        case = cases.builtin_case(name)
        act = fem.ActivationSpec(T=case.activation.T, beta=0.0, fibers=case.activation.fibers)
        c = cases._replace(case, activation=act, body_force=None, traction=None)
        u = dwr.Discretization(c, c.mesh, 2).solve_primal()
        zero_norms.append(float(np.abs(u.coeffs).max()))
    tongue = cases.case_tongue_like()
    u = dwr.Discretization(tongue, tongue.mesh, 2).solve_primal()
    rel = cases.small_strain_metrics(tongue, u)["max_relative_displacement"]
    ok = max(zero_norms) == 0.0 and 0.0 < rel < 0.10
    record_criterion(8, ok, f"beta=0 max |u_h| {max(zero_norms):.1e}; tongue beta=1 max relative "
                            f"displacement {rel:.2e} (> 0, < 10%)")
    assert ok


def test_criterion_09_patch():
    case = cases.case_patch()
    worst = 0.0
    eta_max = 0.0
    for k in (1, 2):
        rep, u, z, loc, d = dwr.estimate(case, case.mesh, fem.QoISpec("J1"), degree=k)
        exact = case.exact_solution(d.space.node_coordinates)
        worst = max(worst, float(np.abs(u.nodal_values - exact).max()))
        eta_max = max(eta_max, float(rep.eta_K.max()))
    ok = worst <= 1e-10 and eta_max <= 1e-10
    record_criterion(9, ok, f"P1/P2 nodal error {worst:.1e}, max eta_K {eta_max:.1e} (<= 1e-10)")
    assert ok


def test_criterion_10_determinism(tmp_path):
    first = tmp_path / "first"
    assert cli.main(["run", "--case", "tongue", "--qoi", "J1", "--tol", "1e-12", "--max-iters", "5",
                     "--reference-rounds", "2", "--out", str(first)]) == 0
    manifest = first / "manifest.json"
    assert json.loads(manifest.read_text())["max_iterations"] == 5
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        assert cli.main(["run", "--manifest", str(manifest), "--out", str(out)]) == 0
        outs.append((out / "convergence.csv").read_bytes())
    ok = outs[0] == outs[1] == (first / "convergence.csv").read_bytes()
    record_criterion(10, ok, f"manifest reruns byte-identical: {ok} ({len(outs[0])} bytes)")
    assert ok
