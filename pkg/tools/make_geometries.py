"""Regenerate the shipped tongue-like and artery-like initial meshes.

Needs the ``triangle`` package (development only; the package itself just
reads the committed ``.trimesh`` files)::

    python tools/make_geometries.py src/goaladapt/data
"""
import sys
from pathlib import Path

import numpy as np
import triangle
from scipy.interpolate import splev, splprep

from goaladapt.mesh import TriMesh
from goaladapt.mesh_io import write_trimesh

# sagittal tongue silhouette, posterior on the left, tip on the right (mm)
TONGUE_CONTROL = [
    (10, 2), (22, 0), (36, 1), (48, 3), (56, 7), (61, 12), (66, 15), (72, 21), (74, 28),
    (71, 34), (63, 40), (52, 46), (40, 52), (27, 54), (15, 51), (6, 44), (1, 34), (0, 22), (3, 11),
]
TONGUE_SIZE = (73.8, 53.7)
TONGUE_APEX = (50.0, 6.0)           # mandible insertion of the fan
TONGUE_FAN = (32.0, 112.0, 172.0)  # radius, start and end angle in degrees
TONGUE_OMEGA = ((42.0, 43.0), (8.0, 4.0))


def _outline(control, n):
    pts = np.array(control + control[:1], float)
    tck, _ = splprep([pts[:, 0], pts[:, 1]], s=0, per=1)
    u = np.linspace(0, 1, n, endpoint=False)
    x, y = splev(u, tck)
    xy = np.column_stack([x, y])
    lo, hi = xy.min(0), xy.max(0)
    return (xy - lo) / (hi - lo) * np.array(TONGUE_SIZE)


def _loop(start, n):
    idx = start + np.arange(n)
    return np.column_stack([idx, np.roll(idx, -1)])


def _to_trimesh(tri, region_map, dirichlet_marker=1):
    verts = tri["vertices"]
    cells = tri["triangles"].astype(np.int64)
    attr = tri["triangle_attributes"][:, 0].astype(int)
    p = verts[cells]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    area = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    cells[area < 0] = cells[area < 0][:, [0, 2, 1]]
    material = np.array([region_map[a][0] for a in attr])
    active = np.array([region_map[a][1] for a in attr])
    interest = np.array([region_map[a][2] for a in attr])

    seg = tri["segments"].astype(np.int64)
    marker = tri["segment_markers"].ravel()
    local = cells[:, [[1, 2], [2, 0], [0, 1]]].reshape(-1, 2)
    key = np.sort(local, axis=1)
    _, inv, cnt = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    boundary = local[cnt[inv.ravel()] == 1]
    seg_tag = {tuple(sorted(s)): m for s, m in zip(seg.tolist(), marker.tolist())}
    tags = np.array(["D" if seg_tag[tuple(sorted(e))] == dirichlet_marker else "N" for e in boundary.tolist()])
    used = np.unique(cells)
    remap = np.full(len(verts), -1)
    remap[used] = np.arange(len(used))
    return TriMesh(verts[used], remap[cells], remap[boundary], tags,
                   material=material, in_active=active, in_interest=interest)


def tongue_mesh(max_area=40.0, n_outline=40):
    outline = _outline(TONGUE_CONTROL, n_outline)
    on_floor = (outline[:, 1] < 9.0) & (outline[:, 0] > 6.0) & (outline[:, 0] < 56.0)
    apex = np.array(TONGUE_APEX)
    R, a0, a1 = TONGUE_FAN
    ang = np.radians(np.linspace(a0, a1, 5))
    fan = np.vstack([apex, apex + R * np.column_stack([np.cos(ang), np.sin(ang)])])
    (cx, cy), (rx, ry) = TONGUE_OMEGA
    th = np.linspace(0, 2 * np.pi, 10, endpoint=False)
    omega = np.column_stack([cx + rx * np.cos(th), cy + ry * np.sin(th)])

    verts = np.vstack([outline, fan, omega])
    n0, n1 = len(outline), len(fan)
    seg_out = _loop(0, n0)
    # a segment is Dirichlet when both ends lie on the floor arc
    mark_out = np.where(on_floor[seg_out[:, 0]] & on_floor[seg_out[:, 1]], 1, 2)
    segs = np.vstack([seg_out, _loop(n0, n1), _loop(n0 + n1, len(omega))])
    marks = np.concatenate([mark_out, np.full(n1 + len(omega), 0)])
    seeds = [
        [5.0, 25.0, 1, 0],                                      # passive tissue
        [*(apex + 0.6 * R * np.array([np.cos(np.radians(140)), np.sin(np.radians(140))])), 2, 0],
        [cx, cy, 3, 0],
    ]
    tri = triangle.triangulate(
        {"vertices": verts, "segments": segs, "segment_markers": marks[:, None], "regions": seeds},
        f"pq30Aa{max_area}")
    return _to_trimesh(tri, {1: (0, False, False), 2: (0, True, False), 3: (0, False, True)})


# artery cross-section (mm): outer diameter 5, eccentric lumen, necrotic core
ARTERY_R = 2.5
LUMEN = ((0.0, 0.45), 0.85)
CORE = ((0.0, -1.05), (0.95, 0.40))
MEDIA = (1.85, 2.15)
CAP_HALF_WIDTH = 0.35
DIRICHLET_ARC = (-150.0, -30.0)


def artery_mesh(max_area=0.2, n_outer=28, n_lumen=20, n_core=16):
    (lx, ly), lr = LUMEN
    (kx, ky), (ka, kb) = CORE
    w = CAP_HALF_WIDTH
    # lumen circle with vertices where the cap's sides meet it
    phi_c = np.arcsin(w / lr)
    th_cap = (-np.pi / 2 - phi_c, -np.pi / 2 + phi_c)
    th = np.linspace(-np.pi / 2 + phi_c, 3 * np.pi / 2 - phi_c, n_lumen)
    cap_arc = np.linspace(th_cap[0], th_cap[1], 4)[1:-1]
    lum_th = np.concatenate([th, cap_arc])
    lumen = np.column_stack([lx + lr * np.cos(lum_th), ly + lr * np.sin(lum_th)])
    # core ellipse, vertices at x = +-w on its upper arc
    psi_c = np.arccos(w / ka)
    pth = np.concatenate([np.linspace(psi_c, np.pi - psi_c, 5), np.linspace(np.pi - psi_c, 2 * np.pi + psi_c, n_core)[1:-1]])
    core = np.column_stack([kx + ka * np.cos(pth), ky + kb * np.sin(pth)])

    ang = np.radians(np.linspace(-180, 180, n_outer, endpoint=False))
    outer = ARTERY_R * np.column_stack([np.cos(ang), np.sin(ang)])
    d0, d1 = np.radians(DIRICHLET_ARC)
    on_d = (ang >= d0 - 1e-12) & (ang <= d1 + 1e-12)
    m_in = MEDIA[0] * np.column_stack([np.cos(ang), np.sin(ang)])
    m_out = MEDIA[1] * np.column_stack([np.cos(ang), np.sin(ang)])

    blocks = [outer, m_out, m_in, lumen, core]
    verts = np.vstack(blocks)
    offs = np.cumsum([0] + [len(b) for b in blocks])
    segs, marks = [], []
    for i, b in enumerate(blocks):
        s = _loop(offs[i], len(b))
        segs.append(s)
        if i == 0:
            marks.append(np.where(on_d[s[:, 0] - offs[0]] & on_d[s[:, 1] - offs[0]], 1, 2))
        elif i == 3:
            marks.append(np.full(len(s), 2))
        else:
            marks.append(np.zeros(len(s), int))
    # cap sides: core vertex at x = +-w up to the lumen vertex at x = +-w
    lum_right = offs[3]                      # th[0] = -pi/2 + phi_c  -> x = +w
    lum_left = offs[3] + len(th) - 1         # th[-1] = 3pi/2 - phi_c -> x = -w
    core_right = offs[4]
    core_left = offs[4] + 4
    segs.append(np.array([[core_right, lum_right], [core_left, lum_left]]))
    marks.append(np.zeros(2, int))
    segs = np.vstack(segs)
    marks = np.concatenate(marks)
    seeds = [
        [0.0, 2.35, 1, 0], [0.0, MEDIA[0] + 0.15, 3, 0], [1.3, 0.0, 1, 0],
        [kx, ky, 2, 0], [0.0, 0.5 * (ly - lr + ky + kb), 4, 0],
    ]
    tri = triangle.triangulate(
        {"vertices": verts, "segments": segs, "segment_markers": marks[:, None],
         "regions": seeds, "holes": [[lx, ly]]},
        f"pq30Aa{max_area}")
    return _to_trimesh(tri, {1: (0, False, False), 2: (1, False, False), 3: (0, True, False), 4: (0, False, True)})


def main(out):
    out = Path(out)
    for name, m in (("tongue", tongue_mesh()), ("artery", artery_mesh())):
        write_trimesh(m, out / f"{name}.trimesh")
        print(name, m.n_cells, "cells", int(m.in_active.sum()), "active", int(m.in_interest.sum()), "interest",
              int((m.boundary_tags == "D").sum()), "dirichlet edges")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "src/goaladapt/data")
