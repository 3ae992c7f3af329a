"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py --rounds 2 --repeat 3

Both paths run in one process; the switch is the ``GOALADAPT_NUMBA``
variable, which the dispatchers read on every call.
"""
import argparse
import os
import time

import numpy as np

from goaladapt import cases, dwr, fem
from goaladapt.mesh import refine_uniform


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench(case, rounds, repeat):
    mesh = refine_uniform(case.mesh, rounds)
    c = case.with_mesh(mesh)
    disc = dwr.Discretization(c, mesh, 2)
    u_h = disc.solve_primal()
    z_hat = disc.solve_dual(fem.QoISpec("J1"))
    jobs = {
        "P3 element matrices": lambda: fem.element_stiffness(disc.space_hat, c.material),
        "local estimators": lambda: dwr.local_estimators(u_h, z_hat, c).signed,
    }
    rows = []
    for name, fn in jobs.items():
        res = {}
        for flag in ("1", "0"):
            os.environ["GOALADAPT_NUMBA"] = flag
            fn()  # warm-up / JIT compile
            res[flag] = _best(fn, repeat)
        diff = np.max(np.abs(res["1"][1] - res["0"][1])) / max(np.max(np.abs(res["0"][1])), 1e-300)
        rows.append((name, mesh.n_cells, res["1"][0], res["0"][0], diff))
    os.environ.pop("GOALADAPT_NUMBA", None)
    return rows


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--case", default="tongue", choices=sorted(cases.BUILTIN_CASES))
    p.add_argument("--rounds", type=int, default=2)
    p.add_argument("--repeat", type=int, default=3)
    a = p.parse_args(argv)
    print(f"{'kernel':24s} {'cells':>7s} {'numba [s]':>10s} {'numpy [s]':>10s} {'speedup':>8s} {'rel diff':>9s}")
    for name, nc, tn, tp, d in bench(cases.builtin_case(a.case), a.rounds, a.repeat):
        print(f"{name:24s} {nc:7d} {tn:10.4f} {tp:10.4f} {tp / tn:8.1f} {d:9.1e}")


if __name__ == "__main__":
    main()
