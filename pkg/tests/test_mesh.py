import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from goaladapt import geometry
from goaladapt.mesh import (MeshError, TriMesh, build_edge_topology, cell_angles, children_of,
                            hanging_node_count, quality_report, refine, refine_uniform)

from conftest import random_mesh


def brute_force_edges(cells):
    """Independent edge count: dict edge -> number of incident cells."""
    count = {}
    for c in cells.tolist():
        for a, b in itertools.combinations(c, 2):
            k = (min(a, b), max(a, b))
            count[k] = count.get(k, 0) + 1
    return count


def edge_counts(mesh):
    topo = build_edge_topology(mesh)
    return len(topo.int_edge), len(topo.neu_edge) + len(topo.dir_edge)


def test_reference_triangle_counts():
    m = geometry.reference_triangle()
    assert m.n_cells == 1
    assert edge_counts(m) == (0, 3)


def test_two_triangle_square_counts(square2):
    assert edge_counts(square2) == (1, 4)


def test_criss_cross_counts(criss_cross):
    assert criss_cross.n_vertices == 5
    assert edge_counts(criss_cross) == (4, 4)
    bf = brute_force_edges(criss_cross.cells)
    assert sum(v == 2 for v in bf.values()) == 4
    assert sum(v == 1 for v in bf.values()) == 4


def test_square_interior_normal_is_diagonal(square2):
    topo = build_edge_topology(square2)
    n = topo.int_normal[0]
    assert np.linalg.norm(n) == pytest.approx(1.0, abs=1e-15)
    assert abs(abs(n[0]) - abs(n[1])) < 1e-15 and n[0] * n[1] < 0


def test_all_neumann_has_no_dirichlet_edges(square2):
    m = square2.with_boundary_tags(lambda mid: np.zeros(len(mid), bool))
    assert len(build_edge_topology(m).dir_edge) == 0


def test_normals_against_brute_force(criss_cross):
    m = criss_cross
    topo = build_edge_topology(m)
    for g, left, n in zip(topo.int_edge, topo.int_left, topo.int_normal):
        a, b = m.vertices[m.edges[g]]
        t = b - a
        ref = np.array([t[1], -t[0]]) / np.hypot(*t)
        # orient away from the left cell's centroid
        if ref @ (0.5 * (a + b) - m.centroids[left]) < 0:
            ref = -ref
        np.testing.assert_allclose(n, ref, atol=1e-14)
        assert abs(n @ t) < 1e-14


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_topology_invariants(seed):
    m = random_mesh(seed)
    topo = build_edge_topology(m)
    np.testing.assert_allclose(np.linalg.norm(topo.cell_normal, axis=2), 1.0, atol=1e-14)
    # the right cell sees the negated normal
    n_right = topo.cell_normal[topo.int_right, topo.int_local_right]
    np.testing.assert_allclose(n_right, -topo.int_normal, atol=1e-14)
    p = m.vertices[m.cells]
    perim = np.linalg.norm(p - p[:, [1, 2, 0]], axis=2).sum(1)
    np.testing.assert_allclose(topo.cell_length.sum(1), perim, rtol=1e-14)


def test_rejects_clockwise_cell():
    with pytest.raises(MeshError, match="negative area"):
        TriMesh([[0, 0], [1, 0], [0, 1]], [[0, 2, 1]], [[0, 1], [1, 2], [2, 0]], ["D"] * 3)


def test_rejects_untagged_boundary_edge():
    with pytest.raises(MeshError, match="untagged"):
        TriMesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]], [[0, 1], [1, 2]], ["D"] * 2)


def test_rejects_hanging_node():
    # vertex 4 sits on the diagonal of the right triangle but only the left side uses it
    verts = [[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5]]
    cells = [[0, 1, 2], [0, 4, 3], [4, 2, 3]]
    b = [[0, 1], [1, 2], [2, 3], [3, 0]]
    with pytest.raises(MeshError):
        TriMesh(verts, cells, b, ["D"] * 4)


def test_rejects_non_manifold_edge():
    verts = [[0, 0], [1, 0], [0.5, 1], [0.5, -1], [0.5, 0.5]]
    cells = [[0, 1, 2], [1, 0, 3], [0, 1, 4]]
    with pytest.raises(MeshError, match="non-manifold"):
        TriMesh(verts, cells, np.zeros((0, 2)), [])


def test_refine_empty_marking_is_identity(square2):
    m = refine(square2, [])
    np.testing.assert_array_equal(m.cells, square2.cells)
    np.testing.assert_array_equal(m.vertices, square2.vertices)


def test_refine_one_cell_propagates(square2):
    m = refine(square2, [0])
    assert m.n_cells == 4                  # the shared diagonal is split in both cells
    assert set(m.parent.tolist()) == {0, 1}
    assert hanging_node_count(m) == 0


def _check_conforming(m):
    bf = brute_force_edges(m.cells)
    assert max(bf.values()) <= 2
    n_boundary = sum(v == 1 for v in bf.values())
    assert n_boundary == len(m.boundary_edges)
    assert hanging_node_count(m) == 0


def _check_children(fine, coarse):
    sums = np.bincount(fine.parent, weights=fine.areas, minlength=coarse.n_cells)
    np.testing.assert_allclose(sums, coarse.areas, rtol=1e-12)
    np.testing.assert_array_equal(fine.in_active, coarse.in_active[fine.parent])
    np.testing.assert_array_equal(fine.in_interest, coarse.in_interest[fine.parent])
    np.testing.assert_array_equal(fine.material, coarse.material[fine.parent])


@given(seed=st.integers(0, 10_000), frac=st.floats(0.05, 1.0))
def test_refine_properties(seed, frac):
    rng = np.random.default_rng(seed)
    m = random_mesh(seed % 7).replace(in_active=rng.random(random_mesh(seed % 7).n_cells) < 0.5)
    for _ in range(3):
        marked = np.nonzero(rng.random(m.n_cells) < frac)[0]
        fine = refine(m, marked)
        _check_conforming(fine)
        _check_children(fine, m)
        refined_parents = {int(p) for p, n in zip(*np.unique(fine.parent, return_counts=True)) if n > 1}
        assert set(marked.tolist()) <= refined_parents
        m = fine


def test_boundary_tags_inherited():
    m = geometry.unit_square(2).with_boundary_tags(lambda mid: mid[:, 0] < 1e-12)
    fine = refine_uniform(m, 2)
    mid = fine.vertices[fine.boundary_edges].mean(1)
    np.testing.assert_array_equal(fine.boundary_tags == "D", mid[:, 0] < 1e-12)


def test_uniform_round_quadruples_structured_mesh():
    m = geometry.unit_square(4)
    counts = [m.n_cells]
    for _ in range(3):
        m = refine_uniform(m, 1)
        counts.append(m.n_cells)
    assert counts == [32, 128, 512, 2048]
    assert set(children_of(m).keys()) == set(range(512))
    assert all(len(v) == 4 for v in children_of(m).values())


def test_angles_bounded_under_repeated_refinement(square2):
    m0 = square2
    m = m0
    for _ in range(5):
        m = refine(m, range(m.n_cells))
    a0 = cell_angles(m0).min()
    assert cell_angles(m).min() >= a0 / 2 - 1e-9


def test_finitely_many_angle_classes():
    m = geometry.criss_cross_square()
    seen = []
    for _ in range(10):
        m = refine(m, range(m.n_cells))
        seen.append(len(np.unique(np.round(np.sort(cell_angles(m), axis=1), 9), axis=0)))
    assert max(seen) <= 4
    assert seen[-1] == seen[-2]


def test_quality_equilateral():
    m = TriMesh([[0, 0], [1, 0], [0.5, np.sqrt(3) / 2]], [[0, 1, 2]], [[0, 1], [1, 2], [2, 0]], ["D"] * 3)
    q = quality_report(m)
    assert q["min_angle"] == pytest.approx(60.0, abs=1e-12)
    assert q["max_aspect_ratio"] == pytest.approx(1.0, abs=1e-12)


def test_quality_right_isosceles():
    q = quality_report(geometry.reference_triangle())
    assert q["min_angle"] == pytest.approx(45.0, abs=1e-12)
    assert (q["cell_count"], q["vertex_count"]) == (1, 3)


def test_quality_matches_law_of_cosines():
    m = random_mesh(3, n_pts=10)
    assert m.n_cells >= 20
    p = m.vertices[m.cells]
    worst = 180.0
    for tri in p:
        a, b, c = (np.linalg.norm(tri[(i + 1) % 3] - tri[(i + 2) % 3]) for i in range(3))
        angs = [np.degrees(np.arccos((b * b + c * c - a * a) / (2 * b * c))),
                np.degrees(np.arccos((a * a + c * c - b * b) / (2 * a * c)))]
        angs.append(180.0 - sum(angs))
        worst = min(worst, *angs)
    q = quality_report(m)
    assert q["min_angle"] == pytest.approx(worst, abs=1e-9)
    assert 0 < q["min_angle"] <= 60


def test_anchor_inherited(criss_cross):
    f1 = refine(criss_cross, range(criss_cross.n_cells))
    f2 = refine(f1, [0, 3])
    np.testing.assert_array_equal(f2.anchor, criss_cross.centroids[f1.parent[f2.parent]])


def test_shipped_meshes_valid():
    for m in (geometry.tongue(), geometry.artery()):
        assert hanging_node_count(m) == 0
        assert np.all(m.areas > 0)
        assert m.in_active.any() and m.in_interest.any()
        assert np.any(m.boundary_tags == "D") and np.any(m.boundary_tags == "N")


def test_tongue_bounding_box():
    v = geometry.tongue().vertices
    np.testing.assert_allclose(np.ptp(v, axis=0), [73.8, 53.7], rtol=1e-9)
