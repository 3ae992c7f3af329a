"""Scalar Lagrange elements of degree 1..4 on the reference triangle.

Node order: the three vertices, then ``k - 1`` nodes on each local edge
(edge ``e`` is opposite vertex ``e`` and runs from vertex ``(e+1)%3`` to
``(e+2)%3``), then the interior nodes.
"""
from functools import lru_cache

import numpy as np

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
# (start, end) local vertices of each local edge
EDGE_VERTICES = ((1, 2), (2, 0), (0, 1))


def _monomials(k):
    return [(p, d - p) for d in range(k + 1) for p in range(d, -1, -1)]


def _node_points(k):
    pts = [REF_VERTICES[i] for i in range(3)]
    for a, b in EDGE_VERTICES:
        pa, pb = REF_VERTICES[a], REF_VERTICES[b]
        for j in range(1, k):
            pts.append(pa + (j / k) * (pb - pa))
    for i in range(1, k):
        for j in range(1, k - i):
            pts.append(np.array([j / k, i / k]))
    return np.array(pts)


class LagrangeElement:
    """Reference P_k element with values, gradients and Hessians."""

    def __init__(self, degree):
        if degree not in (1, 2, 3, 4):
            raise ValueError(f"unsupported Lagrange degree {degree}")
        self.degree = degree
        self.nodes = _node_points(degree)
        self.nbasis = len(self.nodes)
        self.n_edge_nodes = degree - 1
        self.n_interior = self.nbasis - 3 - 3 * (degree - 1)
        self._mono = _monomials(degree)
        V = self._eval_monomials(self.nodes)
        # columns of coef are the nodal basis functions in the monomial basis
        self.coef = np.linalg.solve(V, np.eye(self.nbasis))

    def _eval_monomials(self, pts, dx=0, dy=0):
        x, y = pts[:, 0], pts[:, 1]
        out = np.zeros((len(pts), len(self._mono)))
        for m, (p, q) in enumerate(self._mono):
            if p < dx or q < dy:
                continue
            c = 1.0
            for s in range(dx):
                c *= p - s
            for s in range(dy):
                c *= q - s
            out[:, m] = c * x ** (p - dx) * y ** (q - dy)
        return out

    def values(self, pts):
        """(npts, nbasis)"""
        return self._eval_monomials(np.atleast_2d(pts)) @ self.coef

    def gradients(self, pts):
        """(npts, nbasis, 2) reference gradients."""
        pts = np.atleast_2d(pts)
        gx = self._eval_monomials(pts, 1, 0) @ self.coef
        gy = self._eval_monomials(pts, 0, 1) @ self.coef
        return np.stack([gx, gy], axis=-1)

    def hessians(self, pts):
        """(npts, nbasis, 2, 2) reference second derivatives."""
        pts = np.atleast_2d(pts)
        hxx = self._eval_monomials(pts, 2, 0) @ self.coef
        hxy = self._eval_monomials(pts, 1, 1) @ self.coef
        hyy = self._eval_monomials(pts, 0, 2) @ self.coef
        return np.stack([np.stack([hxx, hxy], -1), np.stack([hxy, hyy], -1)], -2)

    def edge_node_range(self, e):
        start = 3 + e * self.n_edge_nodes
        return range(start, start + self.n_edge_nodes)


@lru_cache(maxsize=None)
def element(degree):
    return LagrangeElement(degree)


def edge_points(e, t, reverse=False):
    """Reference points on local edge ``e`` at parameters ``t`` in [0, 1]."""
    a, b = EDGE_VERTICES[e]
    if reverse:
        a, b = b, a
    pa, pb = REF_VERTICES[a], REF_VERTICES[b]
    t = np.asarray(t)[:, None]
    return pa + t * (pb - pa)
