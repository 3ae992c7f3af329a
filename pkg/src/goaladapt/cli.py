"""Command-line driver: ``goaladapt run`` and ``goaladapt compare``."""
import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__, adapt, cases, export, fem
from ._accel import configure_threads, use_numba
from .mesh_io import write_trimesh

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4

MANIFEST_KEYS = ("case", "config", "qoi", "degree", "alpha", "tol", "max_iterations", "mode",
                 "output_dir", "reference_rounds", "seed")

log = logging.getLogger("goaladapt")


class UsageError(Exception):
    pass


def _load_case(manifest):
    if manifest.get("config"):
        return cases.load_case_config(manifest["config"])
    if manifest.get("case"):
        return cases.builtin_case(manifest["case"])
    raise UsageError("either --case or --config is required")


def build_manifest(args):
    if args.manifest:
        try:
            data = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        except OSError as exc:
            raise OSError(f"cannot read manifest {args.manifest}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"malformed manifest {args.manifest}: {exc}") from None
        missing = [k for k in MANIFEST_KEYS if k not in data]
        if missing:
            raise UsageError(f"manifest lacks keys {missing}")
        m = {k: data[k] for k in MANIFEST_KEYS}
        if args.out:
            m["output_dir"] = args.out
        return m
    if args.out is None:
        raise UsageError("--out is required")
    return {
        "case": args.case, "config": str(Path(args.config).resolve()) if args.config else None,
        "qoi": args.qoi, "degree": args.degree, "alpha": args.alpha, "tol": args.tol,
        "max_iterations": args.max_iters, "mode": args.mode, "output_dir": args.out,
        "reference_rounds": args.reference_rounds, "seed": args.seed,
    }


def _summary(manifest, case, rec, ref, metrics):
    last = rec.rows[-1]
    lines = [
        f"case: {case.name}",
        f"qoi: {manifest['qoi']}  degree: {manifest['degree']}  mode: {manifest['mode']}",
        f"alpha: {manifest['alpha']!r}  tol: {manifest['tol']!r}  max_iterations: {manifest['max_iterations']}",
        f"status: {rec.status}",
        f"iterations: {len(rec.rows)}",
        f"final cells: {last['cells']}  dofs: {last['dofs']}",
        f"final J(u_h): {last['qoi']!r}",
        f"final eta_h: {last['eta_h']!r}  sum eta_K: {last['sum_eta_K']!r}",
    ]
    if ref is not None:
        lines.append(f"reference J: {ref.value!r} +- {ref.uncertainty!r} ({ref.rounds} uniform rounds, {ref.dofs} dofs)")
        if last["true_error"] is not None:
            lines.append(f"final |J - J(u_h)|: {last['true_error']!r}")
    for k, v in metrics.items():
        lines.append(f"{k.replace('_', ' ')}: {v!r}")
    return "\n".join(lines) + "\n"


def run(manifest):
    """Execute one run; returns the convergence record."""
    out = Path(manifest["output_dir"])
    case = _load_case(manifest)
    variant = manifest["qoi"]
    if variant not in ("J1", "J2"):
        raise UsageError(f"unknown qoi {variant!r}")
    qoi = fem.QoISpec(variant)
    tol = manifest["tol"] if manifest["tol"] is not None else case.tolerance(variant)
    if tol is None:
        raise UsageError(f"case {case.name!r} has no preset tolerance for {variant}; pass --tol")
    manifest = dict(manifest, tol=tol)
    if manifest["degree"] not in (1, 2):
        raise UsageError("degree must be 1 or 2")
    cfg = adapt.AdaptConfig(alpha=manifest["alpha"], tol=tol, max_iterations=manifest["max_iterations"],
                            mode=manifest["mode"])
    out.mkdir(parents=True, exist_ok=True)
    timings = {}

    ref = None
    if manifest["reference_rounds"]:
        t0 = time.perf_counter()
        ref = adapt.reference_qoi(case, qoi, extra_rounds=manifest["reference_rounds"], degree=manifest["degree"])
        timings["reference"] = time.perf_counter() - t0

    iter_times = []
    state = {"t": time.perf_counter(), "last": None}

    def dump(it, mesh, u_h, z_hat, rep, local, marked):
        d = out / f"iter_{it:03d}"
        d.mkdir(exist_ok=True)
        c = case.with_mesh(mesh)
        write_trimesh(mesh, d / "mesh.trimesh")
        export.write_vtk(d / "fields.vtk", mesh, u_h, c, rep.eta_K)
        (d / "estimators.csv").write_text(export.estimator_csv(mesh, rep.eta_K), encoding="utf-8")
        now = time.perf_counter()
        iter_times.append(now - state["t"])
        state["t"] = now
        state["last"] = (c, u_h)

    kw = dict(degree=manifest["degree"], reference=None if ref is None else ref.value,
              uncertainty=0.0 if ref is None else ref.uncertainty, callback=dump)
    state["t"] = time.perf_counter()
    if cfg.mode == "adaptive":
        rec = adapt.adaptive_loop(case, qoi, cfg, **kw)
    else:
        rec = adapt.uniform_loop(case, qoi, cfg.max_iterations, **kw)
    timings["iterations"] = iter_times
    metrics = cases.small_strain_metrics(*state["last"])

    (out / "convergence.csv").write_text(export.convergence_csv(rec), encoding="utf-8")
    (out / "summary.txt").write_text(_summary(manifest, case, rec, ref, metrics), encoding="utf-8")
    (out / "convergence.svg").write_text(export.svg_loglog(
        [("eta_h", rec.column("cells"), rec.column("eta_h")),
         ("sum eta_K", rec.column("cells"), rec.column("sum_eta_K"))]
        + ([("|J - J(u_h)|", rec.column("cells"), rec.column("true_error"))] if ref is not None else []),
        "cells N", "QoI error", f"{case.name} {variant} ({cfg.mode})"), encoding="utf-8")
    full = dict(manifest)
    full.update({
        "version": __version__, "status": rec.status, "numba": bool(use_numba()),
        "reference": None if ref is None else {"value": ref.value, "uncertainty": ref.uncertainty,
                                                "rounds": ref.rounds, "dofs": ref.dofs},
        "timings": timings,
    })
    (out / "manifest.json").write_text(json.dumps(full, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return rec


def _read_run(path):
    p = Path(path)
    d = p.parent if p.is_file() else p
    if not (d / "manifest.json").exists() or not (d / "convergence.csv").exists():
        raise UsageError(f"{path} is not a completed run directory")
    man = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
    rows = export.read_convergence_csv((d / "convergence.csv").read_text(encoding="utf-8"))
    return man, rows


def compare(path_a, path_b, out):
    """Overlay two completed runs of the same case and QoI."""
    (ma, ra), (mb, rb) = _read_run(path_a), _read_run(path_b)
    ident_a = (ma.get("case") or ma.get("config"), ma["qoi"])
    ident_b = (mb.get("case") or mb.get("config"), mb["qoi"])
    if ident_a != ident_b:
        raise UsageError(f"runs differ in case or QoI: {ident_a} vs {ident_b}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    def err_series(man, rows):
        ref = man.get("reference")
        if ref:
            scale = abs(ref["value"]) or 1.0
            return [r["true_error"] / scale if r["true_error"] is not None else None for r in rows], True
        return [r["eta_h"] / (abs(r["qoi"]) or 1.0) for r in rows], False

    ea, ta = err_series(ma, ra)
    eb, tb = err_series(mb, rb)
    label = "relative error" if ta and tb else "relative estimated error"
    la, lb = f"{ma['mode']} (a)", f"{mb['mode']} (b)"
    cells = lambda rows: [r["cells"] for r in rows]
    (out / "error.svg").write_text(export.svg_loglog(
        [(la, cells(ra), ea), (lb, cells(rb), eb)], "cells N", label, f"{ident_a[0]} {ident_a[1]}"), encoding="utf-8")
    eff = lambda rows, k: [r[k] for r in rows]
    (out / "effectivity.svg").write_text(export.svg_loglog(
        [(f"eta_h {la}", cells(ra), eff(ra, "effectivity_h")), (f"sum eta_K {la}", cells(ra), eff(ra, "effectivity_sum")),
         (f"eta_h {lb}", cells(rb), eff(rb, "effectivity_h")), (f"sum eta_K {lb}", cells(rb), eff(rb, "effectivity_sum"))],
        "cells N", "effectivity index", "effectivity", logy=False), encoding="utf-8")
    rows = []
    for tag, man, rs, es in (("a", ma, ra, ea), ("b", mb, rb, eb)):
        for r, e in zip(rs, es):
            rows.append((tag, man["mode"], int(r["cells"]), int(r["dofs"]), r["qoi"], r["eta_h"], e,
                         r["effectivity_h"], r["effectivity_sum"]))
    (out / "comparison.csv").write_text(export._csv(rows, ["run", "mode", "cells", "dofs", "qoi", "eta_h",
                                                           label.replace(" ", "_"), "effectivity_h",
                                                           "effectivity_sum"]), encoding="utf-8")
    return rows


def _parser():
    p = argparse.ArgumentParser(prog="goaladapt", description="Goal-oriented adaptive FEM for active elasticity.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the adaptive or uniform loop on one case")
    src = r.add_mutually_exclusive_group()
    src.add_argument("--case", help=f"built-in case ({', '.join(sorted(cases.BUILTIN_CASES))})")
    src.add_argument("--config", help="case configuration file")
    src.add_argument("--manifest", help="re-run a saved manifest.json")
    r.add_argument("--qoi", choices=("J1", "J2"), default="J1")
    r.add_argument("--degree", type=int, choices=(1, 2), default=2)
    r.add_argument("--alpha", type=float, default=0.8)
    r.add_argument("--tol", type=float, default=None, help="stopping tolerance for eta_h (default: case preset)")
    r.add_argument("--max-iters", type=int, default=10)
    r.add_argument("--mode", choices=("adaptive", "uniform"), default="adaptive")
    r.add_argument("--out", help="output directory")
    r.add_argument("--reference-rounds", type=int, default=0,
                   help="uniform rounds of the initial mesh for the reference QoI (>= 2; 0 skips it)")
    r.add_argument("--seed", type=int, default=0, help="recorded only; the computation is deterministic")
    c = sub.add_parser("compare", help="overlay two completed runs")
    c.add_argument("run_a")
    c.add_argument("run_b")
    c.add_argument("--out", required=True)
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    configure_threads()
    try:
        if args.command == "run":
            if args.reference_rounds and args.reference_rounds < 2:
                raise UsageError("--reference-rounds must be 0 or at least 2")
            rec = run(build_manifest(args))
            print(f"{rec.status}: {len(rec.rows)} iterations, final eta_h = {rec.rows[-1]['eta_h']:.3e}")
        else:
            compare(args.run_a, args.run_b, args.out)
            print(f"comparison written to {args.out}")
    except (UsageError, cases.CaseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (fem.SolverError, adapt.ResourceLimitError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
