"""Hot per-cell loops: elastic element matrices and estimator residual integrals.

Every kernel exists twice: a numba loop version (``*_nb``) and a vectorised
numpy version (``*_np``). The public name dispatches on
:func:`goaladapt._accel.use_numba`.
"""
import numpy as np

from ._accel import njit, use_numba

# -- elastic element matrices ------------------------------------------------


@njit
def elastic_blocks_nb(gref, qw, binv, det, lam, mu):
    nc = binv.shape[0]
    nq, nb = gref.shape[0], gref.shape[1]
    out = np.zeros((nc, 2 * nb, 2 * nb))
    g = np.empty((nb, 2))
    for c in range(nc):
        B = binv[c]
        la, m = lam[c], mu[c]
        for q in range(nq):
            wq = qw[q] * det[c]
            for i in range(nb):
                g[i, 0] = B[0, 0] * gref[q, i, 0] + B[1, 0] * gref[q, i, 1]
                g[i, 1] = B[0, 1] * gref[q, i, 0] + B[1, 1] * gref[q, i, 1]
            for i in range(nb):
                for j in range(nb):
                    dot = g[i, 0] * g[j, 0] + g[i, 1] * g[j, 1]
                    for a in range(2):
                        for b in range(2):
                            v = la * g[i, a] * g[j, b] + m * g[i, b] * g[j, a]
                            if a == b:
                                v += m * dot
                            out[c, 2 * i + a, 2 * j + b] += wq * v
    return out


def elastic_blocks_np(gref, qw, binv, det, lam, mu, chunk=4096):
    nc = binv.shape[0]
    nb = gref.shape[1]
    out = np.empty((nc, 2 * nb, 2 * nb))
    for s in range(0, nc, chunk):
        sl = slice(s, s + chunk)
        # physical gradients (c, q, i, d) = sum_r binv[c, r, d] gref[q, i, r]
        g = np.einsum("crd,qir->cqid", binv[sl], gref)
        w = qw[None, :] * det[sl, None]
        dot = np.einsum("cq,cqid,cqjd->cij", w, g, g)
        gg = np.einsum("cq,cqia,cqjb->ciajb", w, g, g)
        K = lam[sl, None, None, None, None] * gg + mu[sl, None, None, None, None] * gg.transpose(0, 1, 4, 3, 2)
        K[:, :, 0, :, 0] += mu[sl, None, None] * dot
        K[:, :, 1, :, 1] += mu[sl, None, None] * dot
        out[sl] = K.reshape(-1, 2 * nb, 2 * nb)
    return out


def elastic_blocks(gref, qw, binv, det, lam, mu):
    """Element stiffness matrices ``(nc, 2nb, 2nb)``, DOF order ``2*node + comp``."""
    args = (np.ascontiguousarray(gref, dtype=float), np.ascontiguousarray(qw, dtype=float),
            np.ascontiguousarray(binv), np.ascontiguousarray(det),
            np.ascontiguousarray(lam, dtype=float), np.ascontiguousarray(mu, dtype=float))
    return elastic_blocks_nb(*args) if use_numba() else elastic_blocks_np(*args)


# -- stresses on edges -------------------------------------------------------


@njit
def edge_stress_nb(u, gref_e, binv, lam, mu, S, orient):
    nc, nb = u.shape[0], u.shape[1]
    nqe = gref_e.shape[2]
    out = np.zeros((nc, 3, nqe, 2, 2))
    for c in range(nc):
        B = binv[c]
        for e in range(3):
            o = orient[c, e]
            for q in range(nqe):
                du00 = 0.0
                du01 = 0.0
                du10 = 0.0
                du11 = 0.0
                for i in range(nb):
                    r0 = gref_e[e, o, q, i, 0]
                    r1 = gref_e[e, o, q, i, 1]
                    g0 = B[0, 0] * r0 + B[1, 0] * r1
                    g1 = B[0, 1] * r0 + B[1, 1] * r1
                    du00 += u[c, i, 0] * g0
                    du01 += u[c, i, 0] * g1
                    du10 += u[c, i, 1] * g0
                    du11 += u[c, i, 1] * g1
                tr = du00 + du11
                sh = mu[c] * (du01 + du10)
                out[c, e, q, 0, 0] = lam[c] * tr + 2.0 * mu[c] * du00 + S[c, 0, 0]
                out[c, e, q, 1, 1] = lam[c] * tr + 2.0 * mu[c] * du11 + S[c, 1, 1]
                out[c, e, q, 0, 1] = sh + S[c, 0, 1]
                out[c, e, q, 1, 0] = sh + S[c, 1, 0]
    return out


def _stress_from_grad(du, lam, mu, S):
    eps = 0.5 * (du + np.swapaxes(du, -1, -2))
    tr = eps[..., 0, 0] + eps[..., 1, 1]
    eye = np.eye(2)
    return lam * tr[..., None, None] * eye + 2.0 * mu * eps + S


def edge_stress_np(u, gref_e, binv, lam, mu, S, orient):
    nc = u.shape[0]
    out = np.empty((nc, 3, gref_e.shape[2], 2, 2))
    for e in range(3):
        gr = gref_e[e][orient[:, e]]                          # (nc, nqe, nb, 2)
        g = np.einsum("crd,cqir->cqid", binv, gr)
        du = np.einsum("cia,cqid->cqad", u, g)
        out[:, e] = _stress_from_grad(du, lam[:, None, None, None], mu[:, None, None, None], S[:, None])
    return out


def edge_stress(u, gref_e, binv, lam, mu, S, orient):
    """Total stress ``sigma(u) + S`` at edge points, shape ``(nc, 3, nqe, 2, 2)``.

    ``gref_e[e, o]`` holds reference gradients at the edge points for local
    edge ``e`` traversed forward (``o=0``) or backward (``o=1``).
    """
    args = (np.ascontiguousarray(u), np.ascontiguousarray(gref_e), np.ascontiguousarray(binv),
            np.ascontiguousarray(lam, dtype=float), np.ascontiguousarray(mu, dtype=float),
            np.ascontiguousarray(S), np.ascontiguousarray(orient, dtype=np.int64))
    return edge_stress_nb(*args) if use_numba() else edge_stress_np(*args)


# -- estimator contributions -------------------------------------------------


@njit
def residual_integrals_nb(u, w, href, phif, qw, fq, binv, det, lam, mu,
                          sig_e, phif_e, tw, kind, nbr, nbr_e, orient, normal, length, trac):
    nc, nb = u.shape[0], u.shape[1]
    nbf = w.shape[1]
    nq = qw.shape[0]
    nqe = tw.shape[0]
    cell_part = np.zeros(nc)
    edge_part = np.zeros(nc)
    for c in range(nc):
        B = binv[c]
        lm = lam[c] + mu[c]
        acc = 0.0
        for q in range(nq):
            # Hessian of each displacement component, pushed to physical coords
            d0 = 0.0
            d1 = 0.0
            for a in range(2):
                h00 = 0.0
                h01 = 0.0
                h11 = 0.0
                for i in range(nb):
                    r00 = href[q, i, 0, 0]
                    r01 = href[q, i, 0, 1]
                    r11 = href[q, i, 1, 1]
                    ua = u[c, i, a]
                    h00 += ua * (B[0, 0] * B[0, 0] * r00 + 2.0 * B[0, 0] * B[1, 0] * r01 + B[1, 0] * B[1, 0] * r11)
                    h01 += ua * (B[0, 0] * B[0, 1] * r00 + (B[0, 0] * B[1, 1] + B[1, 0] * B[0, 1]) * r01
                                 + B[1, 0] * B[1, 1] * r11)
                    h11 += ua * (B[0, 1] * B[0, 1] * r00 + 2.0 * B[0, 1] * B[1, 1] * r01 + B[1, 1] * B[1, 1] * r11)
                lap = h00 + h11
                if a == 0:
                    # d/dx div u gets h00 of u_x and h01 of u_y
                    d0 += lm * h00 + mu[c] * lap
                    d1 += lm * h01
                else:
                    d0 += lm * h01
                    d1 += lm * h11 + mu[c] * lap
            wx = 0.0
            wy = 0.0
            for j in range(nbf):
                wx += phif[q, j] * w[c, j, 0]
                wy += phif[q, j] * w[c, j, 1]
            acc += qw[q] * det[c] * ((fq[c, q, 0] + d0) * wx + (fq[c, q, 1] + d1) * wy)
        cell_part[c] = acc
        acc = 0.0
        for e in range(3):
            k = kind[c, e]
            if k == 2:
                continue
            n0 = normal[c, e, 0]
            n1 = normal[c, e, 1]
            o = orient[c, e]
            for q in range(nqe):
                s = sig_e[c, e, q]
                sn0 = s[0, 0] * n0 + s[0, 1] * n1
                sn1 = s[1, 0] * n0 + s[1, 1] * n1
                if k == 1:
                    r0 = trac[c, e, q, 0] - sn0
                    r1 = trac[c, e, q, 1] - sn1
                else:
                    t = sig_e[nbr[c, e], nbr_e[c, e], q]
                    r0 = 0.5 * ((t[0, 0] * n0 + t[0, 1] * n1) - sn0)
                    r1 = 0.5 * ((t[1, 0] * n0 + t[1, 1] * n1) - sn1)
                wx = 0.0
                wy = 0.0
                for j in range(nbf):
                    wx += phif_e[e, o, q, j] * w[c, j, 0]
                    wy += phif_e[e, o, q, j] * w[c, j, 1]
                acc += tw[q] * length[c, e] * (r0 * wx + r1 * wy)
        edge_part[c] = acc
    return cell_part, edge_part


def residual_integrals_np(u, w, href, phif, qw, fq, binv, det, lam, mu,
                          sig_e, phif_e, tw, kind, nbr, nbr_e, orient, normal, length, trac):
    hu = np.einsum("qirs,cia->cqars", href, u)
    H = np.einsum("cra,cqbrs,csd->cqbad", binv, hu, binv)    # (c, q, comp, a, d)
    graddiv = H[:, :, 0, :, 0] + H[:, :, 1, :, 1]           # d_a (div u)
    lap = H[:, :, :, 0, 0] + H[:, :, :, 1, 1]                # lap u_comp
    divsig = (lam + mu)[:, None, None] * graddiv + mu[:, None, None] * lap
    wq = np.einsum("qj,cja->cqa", phif, w)
    cell_part = np.einsum("q,c,cqa,cqa->c", qw, det, fq + divsig, wq)

    sn = np.einsum("ceqab,ceb->ceqa", sig_e, normal)
    nbr_safe = np.where(kind == 0, nbr, 0)
    nbe_safe = np.where(kind == 0, nbr_e, 0)
    sig_o = sig_e[nbr_safe, nbe_safe]                        # (c, e, q, 2, 2)
    tn = np.einsum("ceqab,ceb->ceqa", sig_o, normal)
    R = np.where((kind == 1)[:, :, None, None], trac - sn, 0.5 * (tn - sn))
    R = np.where((kind == 2)[:, :, None, None], 0.0, R)
    edge_part = np.zeros(len(u))
    for e in range(3):
        we = np.einsum("cqj,cja->cqa", phif_e[e][orient[:, e]], w)
        edge_part += np.einsum("q,c,cqa,cqa->c", tw, length[:, e], R[:, e], we)
    return cell_part, edge_part


def residual_integrals(u, w, href, phif, qw, fq, binv, det, lam, mu,
                       sig_e, phif_e, tw, kind, nbr, nbr_e, orient, normal, length, trac):
    """Signed cell and edge residual integrals against the weight ``w``.

    ``u`` (nc, nb, 2) primal coefficients per cell, ``w`` (nc, nbf, 2) weight
    coefficients in the enriched space. Returns ``(cell_part, edge_part)``.
    """
    c = np.ascontiguousarray
    args = (c(u), c(w), c(href), c(phif), c(qw), c(fq), c(binv), c(det),
            c(lam, dtype=float), c(mu, dtype=float), c(sig_e), c(phif_e), c(tw),
            c(kind, dtype=np.int64), c(nbr, dtype=np.int64), c(nbr_e, dtype=np.int64),
            c(orient, dtype=np.int64), c(normal), c(length), c(trac))
    return residual_integrals_nb(*args) if use_numba() else residual_integrals_np(*args)
