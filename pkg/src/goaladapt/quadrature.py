"""Quadrature rules on the reference triangle and the unit interval."""
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@lru_cache(maxsize=None)
def triangle_rule(degree):
    """Collapsed Gauss rule on the triangle (0,0), (1,0), (0,1).

    Exact for polynomials of total degree ``degree``. Returns points
    ``(nq, 2)`` and weights ``(nq,)`` summing to 1/2.
    """
    n = max(1, (degree + 2) // 2)
    # Gauss-Jacobi(1, 0) absorbs the (1 - s) Jacobian of the Duffy map.
    s, ws = roots_jacobi(n, 1.0, 0.0)
    t, wt = np.polynomial.legendre.leggauss(n)
    s = 0.5 * (s + 1.0)
    ws = ws / 4.0
    t = 0.5 * (t + 1.0)
    wt = wt / 2.0
    S, T = np.meshgrid(s, t, indexing="ij")
    x = S.ravel()
    y = ((1.0 - S) * T).ravel()
    w = np.outer(ws, wt).ravel()
    pts = np.column_stack([x, y])
    pts.flags.writeable = False
    w.flags.writeable = False
    return pts, w


@lru_cache(maxsize=None)
def line_rule(degree):
    """Gauss-Legendre rule on [0, 1], exact to ``degree``; weights sum to 1."""
    n = max(1, (degree + 2) // 2)
    t, w = np.polynomial.legendre.leggauss(n)
    t = 0.5 * (t + 1.0)
    w = 0.5 * w
    t.flags.writeable = False
    w.flags.writeable = False
    return t, w
