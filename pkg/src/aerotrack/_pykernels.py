"""Pure numpy implementations of the hot kernels.

These are the reference versions; ``_ckernels.pyx`` mirrors them loop for
loop. Both must keep identical signatures and return layouts.
"""
import numpy as np
from scipy.spatial import cKDTree

BACKEND = "python"


def dbscan_labels(points, eps, min_points):
    """DBSCAN labels in input order: -1 for noise, clusters numbered by discovery.

    A point is core when at least ``min_points`` points (itself included)
    lie within distance ``eps``.
    """
    pts = np.ascontiguousarray(points, dtype=np.float64)
    n = pts.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return labels
    neighbors = cKDTree(pts).query_ball_point(pts, r=eps * (1.0 + 1e-9), p=2.0)
    # re-check with the exact squared metric so both backends agree on boundaries
    neighbors = [
        [j for j in nb if _dist2(pts, i, j) <= eps * eps] for i, nb in enumerate(neighbors)
    ]
    core = np.array([len(nb) >= min_points for nb in neighbors], dtype=bool)
    visited = np.zeros(n, dtype=bool)
    cluster = 0
    for i in range(n):
        if visited[i] or not core[i]:
            continue
        visited[i] = True
        labels[i] = cluster
        stack = [i]
        while stack:
            p = stack.pop()
            for q in sorted(neighbors[p]):
                if labels[q] == -1:
                    labels[q] = cluster
                if core[q] and not visited[q]:
                    visited[q] = True
                    stack.append(q)
        cluster += 1
    return labels


def _dist2(pts, i, j):
    d = pts[i] - pts[j]
    return d[0] * d[0] + d[1] * d[1] + d[2] * d[2]


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def lstm_forward(Wx, Uh, b, a, ab, X, M):
    """Batched masked LSTM with additive attention pooling.

    Parameters
    ----------
    Wx, Uh, b : gate parameters stacked in (input, forget, cell, output) order,
        shapes (4H, D), (4H, H), (4H,).
    a, ab : attention vector (H,) and scalar bias.
    X : (B, T, D) inputs; M : (B, T) presence mask.

    Returns
    -------
    Hs, Cs : (B, T, H) hidden and cell states (carried through masked steps)
    G : (B, T, 4H) activated gates, zero on masked steps
    attn : (B, T) attention weights, zero on masked steps
    ctx : (B, H) attention-weighted context
    """
    X = np.asarray(X, dtype=np.float64)
    M = np.asarray(M, dtype=bool)
    B, T, _ = X.shape
    H = Uh.shape[1]
    if B and not np.all(M.any(axis=1)):
        raise ValueError("empty sequence")
    Hs = np.zeros((B, T, H))
    Cs = np.zeros((B, T, H))
    G = np.zeros((B, T, 4 * H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(T):
        z = X[:, t] @ Wx.T + h @ Uh.T + b
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid(z[:, 3 * H:])
        c_new = f * c + i * g
        h_new = o * np.tanh(c_new)
        m = M[:, t][:, None]
        h = np.where(m, h_new, h)
        c = np.where(m, c_new, c)
        Hs[:, t] = h
        Cs[:, t] = c
        G[:, t] = np.where(m, np.concatenate([i, f, g, o], axis=1), 0.0)
    e = Hs @ a + ab
    e = np.where(M, e, -np.inf)
    e_max = e.max(axis=1, keepdims=True)
    w = np.where(M, np.exp(e - e_max), 0.0)
    attn = w / w.sum(axis=1, keepdims=True)
    ctx = np.einsum("bt,bth->bh", attn, Hs)
    return Hs, Cs, G, attn, ctx


def lstm_backward(Wx, Uh, a, X, M, Hs, Cs, G, attn, dctx):
    """Gradients of ``sum(dctx * ctx)`` w.r.t. (Wx, Uh, b, a, ab), summed over the batch."""
    X = np.asarray(X, dtype=np.float64)
    M = np.asarray(M, dtype=bool)
    B, T, _ = X.shape
    H = Uh.shape[1]
    dattn = np.einsum("bth,bh->bt", Hs, dctx)
    dHs = attn[:, :, None] * dctx[:, None, :]
    s = np.sum(attn * dattn, axis=1, keepdims=True)
    de = attn * (dattn - s)
    da = np.einsum("bt,bth->h", de, Hs)
    dab = float(de.sum())
    dHs = dHs + de[:, :, None] * a[None, None, :]

    dWx = np.zeros_like(Wx)
    dUh = np.zeros_like(Uh)
    db = np.zeros(4 * H)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    zeros = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        m = M[:, t][:, None]
        dh = dHs[:, t] + dh_next
        h_prev = Hs[:, t - 1] if t > 0 else zeros
        c_prev = Cs[:, t - 1] if t > 0 else zeros
        gt = G[:, t]
        i, f, g, o = gt[:, :H], gt[:, H:2 * H], gt[:, 2 * H:3 * H], gt[:, 3 * H:]
        tc = np.tanh(Cs[:, t])
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = np.concatenate([
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dc * i * (1.0 - g * g),
            do * o * (1.0 - o),
        ], axis=1)
        dz = np.where(m, dz, 0.0)
        dWx += dz.T @ X[:, t]
        dUh += dz.T @ h_prev
        db += dz.sum(axis=0)
        dh_next = np.where(m, dz @ Uh, dh)
        dc_next = np.where(m, dc * f, dc_next)
    return dWx, dUh, db, da, dab
