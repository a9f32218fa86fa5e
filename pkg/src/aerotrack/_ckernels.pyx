# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels; see ``_pykernels`` for the reference."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh

cnp.import_array()

BACKEND = "cython"


def dbscan_labels(points, double eps, Py_ssize_t min_points):
    cdef double[:, ::1] pts = np.ascontiguousarray(points, dtype=np.float64)
    cdef Py_ssize_t n = pts.shape[0]
    labels_arr = np.full(n, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] labels = labels_arr
    if n == 0:
        return labels_arr
    cdef double eps2 = eps * eps
    cdef Py_ssize_t i, j, k, p, q, top, cluster = 0
    cdef double dx, dy, dz
    # CSR adjacency, neighbours in ascending index order
    counts_arr = np.zeros(n + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] offs = counts_arr
    for i in range(n):
        k = 0
        for j in range(n):
            dx = pts[i, 0] - pts[j, 0]
            dy = pts[i, 1] - pts[j, 1]
            dz = pts[i, 2] - pts[j, 2]
            if dx * dx + dy * dy + dz * dz <= eps2:
                k += 1
        offs[i + 1] = offs[i] + k
    adj_arr = np.empty(offs[n], dtype=np.int64)
    cdef cnp.int64_t[::1] adj = adj_arr
    for i in range(n):
        k = offs[i]
        for j in range(n):
            dx = pts[i, 0] - pts[j, 0]
            dy = pts[i, 1] - pts[j, 1]
            dz = pts[i, 2] - pts[j, 2]
            if dx * dx + dy * dy + dz * dz <= eps2:
                adj[k] = j
                k += 1
    visited_arr = np.zeros(n, dtype=np.uint8)
    cdef cnp.uint8_t[::1] visited = visited_arr
    stack_arr = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] stack = stack_arr
    for i in range(n):
        if visited[i] or offs[i + 1] - offs[i] < min_points:
            continue
        visited[i] = 1
        labels[i] = cluster
        top = 0
        stack[top] = i
        top += 1
        while top > 0:
            top -= 1
            p = stack[top]
            for k in range(offs[p], offs[p + 1]):
                q = adj[k]
                if labels[q] == -1:
                    labels[q] = cluster
                if not visited[q] and offs[q + 1] - offs[q] >= min_points:
                    visited[q] = 1
                    stack[top] = q
                    top += 1
        cluster += 1
    return labels_arr


cdef inline double _sig(double z) nogil:
    return 1.0 / (1.0 + exp(-z))


def lstm_forward(Wx_in, Uh_in, b_in, a_in, double ab, X_in, M_in):
    cdef double[:, ::1] Wx = np.ascontiguousarray(Wx_in, dtype=np.float64)
    cdef double[:, ::1] Uh = np.ascontiguousarray(Uh_in, dtype=np.float64)
    cdef double[::1] b = np.ascontiguousarray(b_in, dtype=np.float64)
    cdef double[::1] a = np.ascontiguousarray(a_in, dtype=np.float64)
    cdef double[:, :, ::1] X = np.ascontiguousarray(X_in, dtype=np.float64)
    Mnp = np.ascontiguousarray(M_in, dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] M = Mnp
    cdef Py_ssize_t B = X.shape[0], T = X.shape[1], D = X.shape[2]
    cdef Py_ssize_t H = Uh.shape[1], H4 = 4 * Uh.shape[1]
    if B and not np.all(Mnp.any(axis=1)):
        raise ValueError("empty sequence")
    Hs_arr = np.zeros((B, T, H))
    Cs_arr = np.zeros((B, T, H))
    G_arr = np.zeros((B, T, H4))
    attn_arr = np.zeros((B, T))
    ctx_arr = np.zeros((B, H))
    cdef double[:, :, ::1] Hs = Hs_arr
    cdef double[:, :, ::1] Cs = Cs_arr
    cdef double[:, :, ::1] G = G_arr
    cdef double[:, ::1] attn = attn_arr
    cdef double[:, ::1] ctx = ctx_arr
    z_arr = np.zeros(H4)
    hp_arr = np.zeros(H)
    cp_arr = np.zeros(H)
    cdef double[::1] z = z_arr
    cdef double[::1] hp = hp_arr
    cdef double[::1] cp = cp_arr
    cdef Py_ssize_t s, t, r, k
    cdef double acc, ig, fg, gg, og, cn, emax, e, tot
    for s in range(B):
        for k in range(H):
            hp[k] = 0.0
            cp[k] = 0.0
        for t in range(T):
            if M[s, t]:
                for r in range(H4):
                    acc = b[r]
                    for k in range(D):
                        acc = acc + Wx[r, k] * X[s, t, k]
                    for k in range(H):
                        acc = acc + Uh[r, k] * hp[k]
                    z[r] = acc
                for k in range(H):
                    ig = _sig(z[k])
                    fg = _sig(z[H + k])
                    gg = tanh(z[2 * H + k])
                    og = _sig(z[3 * H + k])
                    G[s, t, k] = ig
                    G[s, t, H + k] = fg
                    G[s, t, 2 * H + k] = gg
                    G[s, t, 3 * H + k] = og
                    cn = fg * cp[k] + ig * gg
                    cp[k] = cn
                    hp[k] = og * tanh(cn)
            for k in range(H):
                Hs[s, t, k] = hp[k]
                Cs[s, t, k] = cp[k]
        emax = -1e308
        for t in range(T):
            if M[s, t]:
                e = ab
                for k in range(H):
                    e = e + a[k] * Hs[s, t, k]
                attn[s, t] = e
                if e > emax:
                    emax = e
        tot = 0.0
        for t in range(T):
            if M[s, t]:
                attn[s, t] = exp(attn[s, t] - emax)
                tot = tot + attn[s, t]
        for t in range(T):
            if M[s, t]:
                attn[s, t] = attn[s, t] / tot
                for k in range(H):
                    ctx[s, k] = ctx[s, k] + attn[s, t] * Hs[s, t, k]
    return Hs_arr, Cs_arr, G_arr, attn_arr, ctx_arr


def lstm_backward(Wx_in, Uh_in, a_in, X_in, M_in, Hs_in, Cs_in, G_in, attn_in, dctx_in):
    cdef double[:, ::1] Uh = np.ascontiguousarray(Uh_in, dtype=np.float64)
    cdef double[::1] a = np.ascontiguousarray(a_in, dtype=np.float64)
    cdef double[:, :, ::1] X = np.ascontiguousarray(X_in, dtype=np.float64)
    cdef cnp.uint8_t[:, ::1] M = np.ascontiguousarray(M_in, dtype=np.uint8)
    cdef double[:, :, ::1] Hs = np.ascontiguousarray(Hs_in, dtype=np.float64)
    cdef double[:, :, ::1] Cs = np.ascontiguousarray(Cs_in, dtype=np.float64)
    cdef double[:, :, ::1] G = np.ascontiguousarray(G_in, dtype=np.float64)
    cdef double[:, ::1] attn = np.ascontiguousarray(attn_in, dtype=np.float64)
    cdef double[:, ::1] dctx = np.ascontiguousarray(dctx_in, dtype=np.float64)
    cdef Py_ssize_t B = X.shape[0], T = X.shape[1], D = X.shape[2]
    cdef Py_ssize_t H = Uh.shape[1], H4 = 4 * Uh.shape[1]
    dWx_arr = np.zeros((H4, D))
    dUh_arr = np.zeros((H4, H))
    db_arr = np.zeros(H4)
    da_arr = np.zeros(H)
    cdef double[:, ::1] dWx = dWx_arr
    cdef double[:, ::1] dUh = dUh_arr
    cdef double[::1] db = db_arr
    cdef double[::1] da = da_arr
    cdef double dab = 0.0
    dHs_arr = np.zeros((T, H))
    dattn_arr = np.zeros(T)
    dh_arr = np.zeros(H)
    dcn_arr = np.zeros(H)
    dhn_arr = np.zeros(H)
    dz_arr = np.zeros(H4)
    cdef double[:, ::1] dHs = dHs_arr
    cdef double[::1] dattn = dattn_arr
    cdef double[::1] dh = dh_arr
    cdef double[::1] dc_next = dcn_arr
    cdef double[::1] dh_next = dhn_arr
    cdef double[::1] dz = dz_arr
    cdef Py_ssize_t s, t, r, k
    cdef double acc, ssum, de, ig, fg, gg, og, tc, dc, do_, cprev, hprev
    for s in range(B):
        ssum = 0.0
        for t in range(T):
            acc = 0.0
            for k in range(H):
                acc = acc + Hs[s, t, k] * dctx[s, k]
            dattn[t] = acc
            ssum = ssum + attn[s, t] * acc
        for t in range(T):
            de = attn[s, t] * (dattn[t] - ssum)
            dab = dab + de
            for k in range(H):
                da[k] = da[k] + de * Hs[s, t, k]
                dHs[t, k] = attn[s, t] * dctx[s, k] + de * a[k]
        for k in range(H):
            dh_next[k] = 0.0
            dc_next[k] = 0.0
        for t in range(T - 1, -1, -1):
            for k in range(H):
                dh[k] = dHs[t, k] + dh_next[k]
            if not M[s, t]:
                for k in range(H):
                    dh_next[k] = dh[k]
                continue
            for k in range(H):
                ig = G[s, t, k]
                fg = G[s, t, H + k]
                gg = G[s, t, 2 * H + k]
                og = G[s, t, 3 * H + k]
                tc = tanh(Cs[s, t, k])
                do_ = dh[k] * tc
                dc = dc_next[k] + dh[k] * og * (1.0 - tc * tc)
                cprev = Cs[s, t - 1, k] if t > 0 else 0.0
                dz[k] = dc * gg * ig * (1.0 - ig)
                dz[H + k] = dc * cprev * fg * (1.0 - fg)
                dz[2 * H + k] = dc * ig * (1.0 - gg * gg)
                dz[3 * H + k] = do_ * og * (1.0 - og)
                dc_next[k] = dc * fg
            for r in range(H4):
                db[r] = db[r] + dz[r]
                for k in range(D):
                    dWx[r, k] = dWx[r, k] + dz[r] * X[s, t, k]
                if t > 0:
                    for k in range(H):
                        dUh[r, k] = dUh[r, k] + dz[r] * Hs[s, t - 1, k]
            for k in range(H):
                acc = 0.0
                for r in range(H4):
                    acc = acc + Uh[r, k] * dz[r]
                dh_next[k] = acc
    return dWx_arr, dUh_arr, db_arr, da_arr, dab
