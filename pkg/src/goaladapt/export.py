"""Text exports: VTK legacy fields, CSV tables and small SVG plots."""
import csv
import io
import math
from pathlib import Path

import numpy as np

from . import fem


def _num(v):
    """Deterministic text for a number; empty for missing values."""
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return ""
    return repr(v)


# -- VTK ---------------------------------------------------------------------

def vtk_text(mesh, u_h=None, case=None, eta_K=None, title="goaladapt field"):
    """Legacy ASCII unstructured grid with displacement, stress and estimators.

    Points are the mesh vertices; displacement is the vertex value of ``u_h``.
    Cell stress is the total stress at the centroid.
    """
    out = io.StringIO()
    w = out.write
    nv, nc = mesh.n_vertices, mesh.n_cells
    w("# vtk DataFile Version 3.0\n")
    w(f"{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
    w(f"POINTS {nv} double\n")
    for x, y in mesh.vertices:
        w(f"{x!r} {y!r} 0.0\n")
    w(f"CELLS {nc} {4 * nc}\n")
    for a, b, c in mesh.cells:
        w(f"3 {a} {b} {c}\n")
    w(f"CELL_TYPES {nc}\n")
    w("5\n" * nc)
    if u_h is not None:
        disp = u_h.nodal_values[:nv]
        w(f"POINT_DATA {nv}\nVECTORS displacement double\n")
        for ux, uy in disp:
            w(f"{ux!r} {uy!r} 0.0\n")
    w(f"CELL_DATA {nc}\n")
    w("SCALARS region int 1\nLOOKUP_TABLE default\n")
    w("".join(f"{int(m)}\n" for m in mesh.material))
    if case is not None:
        S = case.activation.active_stress(mesh) if case.activation is not None else np.zeros((nc, 2, 2))
        w("SCALARS active_stress_magnitude double 1\nLOOKUP_TABLE default\n")
        w("".join(f"{v!r}\n" for v in np.linalg.norm(S, axis=(1, 2)).tolist()))
        if u_h is not None:
            _, sig = fem.strain_stress(u_h, case.material, case.activation)
            w("TENSORS stress double\n")
            for s in sig[:, 0]:
                w(f"{s[0, 0]!r} {s[0, 1]!r} 0.0\n{s[1, 0]!r} {s[1, 1]!r} 0.0\n0.0 0.0 0.0\n\n")
    if eta_K is not None:
        w("SCALARS eta_K double 1\nLOOKUP_TABLE default\n")
        w("".join(f"{v!r}\n" for v in np.asarray(eta_K, float).tolist()))
    return out.getvalue()


def write_vtk(path, mesh, u_h=None, case=None, eta_K=None):
    Path(path).write_text(vtk_text(mesh, u_h, case, eta_K), encoding="utf-8")


def parse_vtk_cell_scalars(text, name):
    """Read back one cell scalar array from :func:`vtk_text` output."""
    lines = text.splitlines()
    n = None
    for i, line in enumerate(lines):
        if line.startswith("CELL_DATA"):
            n = int(line.split()[1])
        if line.startswith(f"SCALARS {name} "):
            return np.array([float(v) for v in lines[i + 2:i + 2 + n]])
    raise KeyError(name)


# -- CSV ---------------------------------------------------------------------

def _csv(rows, header):
    out = io.StringIO()
    wr = csv.writer(out, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([_num(v) if not isinstance(v, str) else v for v in r])
    return out.getvalue()


def dof_csv(field):
    """Coefficient table: dof, node, component, x, y, value."""
    sp = field.space
    xy = sp.node_coordinates
    rows = [(d, d // 2, d % 2, xy[d // 2, 0], xy[d // 2, 1], field.coeffs[d]) for d in range(sp.ndofs)]
    return _csv(rows, ["dof", "node", "component", "x", "y", "value"])


def estimator_csv(mesh, eta_K):
    """Per-cell estimator table: cell_id, eta_K, area, region."""
    rows = [(c, float(e), float(a), int(m))
            for c, (e, a, m) in enumerate(zip(np.asarray(eta_K, float), mesh.areas, mesh.material))]
    return _csv(rows, ["cell_id", "eta_K", "area", "region"])


def convergence_csv(record, fields=None):
    from .adapt import FIELDS

    fields = fields or FIELDS
    return _csv([[row[f] for f in fields] for row in record.rows], list(fields))


def read_convergence_csv(text):
    """Parse a convergence CSV back into a list of dicts of floats (``None`` if empty)."""
    rd = csv.DictReader(io.StringIO(text))
    rows = []
    for r in rd:
        rows.append({k: (float(v) if v != "" else None) for k, v in r.items()})
    return rows


# -- SVG ---------------------------------------------------------------------

_COLORS = ("#1f4e9c", "#c0392b", "#2e8b57", "#8e44ad")


def _log_ticks(lo, hi):
    return [10.0 ** e for e in range(int(math.floor(lo)), int(math.ceil(hi)) + 1)]


def svg_loglog(series, xlabel, ylabel, title="", width=520, height=380, logy=True):
    """Line chart with logarithmic x (and optionally y) axes.

    ``series`` is a list of ``(label, xs, ys)``; non-positive or missing
    points are skipped.
    """
    ml, mr, mt, mb = 70, 20, 30, 50
    pts = []
    for label, xs, ys in series:
        keep = [(float(x), float(y)) for x, y in zip(xs, ys)
                if x is not None and y is not None and x > 0 and np.isfinite(y) and (y > 0 or not logy)]
        pts.append((label, keep))
    allx = [x for _, p in pts for x, _ in p] or [1.0, 10.0]
    ally = [y for _, p in pts for _, y in p] or [1.0, 10.0]
    fy = (lambda v: math.log10(v)) if logy else (lambda v: v)
    x0, x1 = math.log10(min(allx)), math.log10(max(allx))
    y0, y1 = fy(min(ally)), fy(max(ally))
    if x1 - x0 < 1e-12:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 - y0 < 1e-12:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = width - ml - mr, height - mt - mb

    def X(v):
        return ml + (math.log10(v) - x0) / (x1 - x0) * pw

    def Y(v):
        return mt + (1 - (fy(v) - y0) / (y1 - y0)) * ph

    o = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
         f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
         f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>']
    if title:
        o.append(f'<text x="{width / 2:.1f}" y="18" text-anchor="middle">{title}</text>')
    for t in _log_ticks(x0, x1):
        if x0 - 1e-9 <= math.log10(t) <= x1 + 1e-9:
            o.append(f'<line x1="{X(t):.2f}" y1="{mt + ph}" x2="{X(t):.2f}" y2="{mt + ph + 5}" stroke="#333"/>')
            o.append(f'<text x="{X(t):.2f}" y="{mt + ph + 18}" text-anchor="middle">{t:g}</text>')
    yt = _log_ticks(y0, y1) if logy else list(np.linspace(10 ** 0 * y0, y1, 5))
    for t in yt:
        if y0 - 1e-9 <= fy(t) <= y1 + 1e-9:
            o.append(f'<line x1="{ml - 5}" y1="{Y(t):.2f}" x2="{ml}" y2="{Y(t):.2f}" stroke="#333"/>')
            o.append(f'<text x="{ml - 8}" y="{Y(t) + 4:.2f}" text-anchor="end">{t:.3g}</text>')
    o.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 12}" text-anchor="middle">{xlabel}</text>')
    o.append(f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" '
             f'transform="rotate(-90 16 {mt + ph / 2:.1f})">{ylabel}</text>')
    for i, (label, p) in enumerate(pts):
        col = _COLORS[i % len(_COLORS)]
        if p:
            path = " ".join(f"{X(x):.2f},{Y(y):.2f}" for x, y in p)
            o.append(f'<polyline fill="none" stroke="{col}" stroke-width="2" points="{path}"/>')
            for x, y in p:
                o.append(f'<circle cx="{X(x):.2f}" cy="{Y(y):.2f}" r="3" fill="{col}"/>')
        o.append(f'<text x="{ml + 10}" y="{mt + 16 + 16 * i}" fill="{col}">{label}</text>')
    o.append("</svg>")
    return "\n".join(o) + "\n"
