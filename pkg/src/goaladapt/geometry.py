"""Built-in structured meshes and the shipped lookalike geometries."""
from importlib import resources

import numpy as np

from .mesh import DIRICHLET, TriMesh


def _boundary_of(cells):
    local = cells[:, [[1, 2], [2, 0], [0, 1]]].reshape(-1, 2)
    key = np.sort(local, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    return local[counts[inv.ravel()] == 1]


def _mesh(verts, cells, tag=DIRICHLET):
    cells = np.asarray(cells, np.int64)
    b = _boundary_of(cells)
    return TriMesh(np.asarray(verts, float), cells, b, np.full(len(b), tag))


def reference_triangle():
    return _mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])


def two_triangle_square():
    return _mesh([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 1, 2], [0, 2, 3]])


def criss_cross_square():
    return _mesh([[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5]],
                 [[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]])


def rectangle(nx, ny=None, x0=0.0, x1=1.0, y0=0.0, y1=1.0):
    """Structured ``nx`` x ``ny`` grid, each square split along its diagonal."""
    ny = nx if ny is None else ny
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    cells = []
    for j in range(ny):
        for i in range(nx):
            a = j * (nx + 1) + i
            b, c, d = a + 1, a + nx + 2, a + nx + 1
            cells += [(a, b, c), (a, c, d)]
    return _mesh(verts, cells)


def unit_square(n=4):
    return rectangle(n)


def _data_mesh(name):
    from .mesh_io import parse_trimesh

    text = resources.files("goaladapt.data").joinpath(f"{name}.trimesh").read_text(encoding="utf-8")
    return parse_trimesh(text)


def tongue():
    return _data_mesh("tongue")


def artery():
    return _data_mesh("artery")


BUILTINS = {
    "reference_triangle": reference_triangle,
    "two_triangle_square": two_triangle_square,
    "criss_cross_square": criss_cross_square,
    "unit_square": unit_square,
    "rectangle": rectangle,
    "tongue": tongue,
    "artery": artery,
}


def builtin(name, **params):
    try:
        return BUILTINS[name](**params)
    except KeyError:
        raise ValueError(f"unknown built-in geometry {name!r}") from None
