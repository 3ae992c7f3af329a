import numpy as np
import pytest
from hypothesis import settings

from goaladapt import geometry
from goaladapt.mesh import TriMesh

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def random_mesh(seed, n_pts=14):
    """Delaunay triangulation of random points in the unit square plus its corners."""
    from scipy.spatial import Delaunay

    rng = np.random.default_rng(seed)
    pts = np.vstack([[[0, 0], [1, 0], [1, 1], [0, 1]], rng.uniform(0.05, 0.95, (n_pts, 2))])
    tri = Delaunay(pts)
    cells = tri.simplices.copy()
    p = pts[cells]
    area = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
    keep = np.abs(area) > 1e-10
    cells = cells[keep]
    cells[area[keep] < 0] = cells[area[keep] < 0][:, [0, 2, 1]]
    b = geometry._boundary_of(cells)
    return TriMesh(pts, cells, b, np.full(len(b), "D"))


@pytest.fixture
def square2():
    return geometry.two_triangle_square()


@pytest.fixture
def criss_cross():
    return geometry.criss_cross_square()


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


def record_criterion(number, ok, detail):
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
