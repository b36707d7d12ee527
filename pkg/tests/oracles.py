"""Independent reference implementations used as test oracles.

These deliberately avoid the package's own code paths: plain loops,
textbook formulas and a proximal-gradient solver.
"""
from __future__ import annotations

import math
import struct
import zlib

import numpy as np


def png_bytes_gray(rows) -> bytes:
    """Hand-assembled 8-bit greyscale PNG (no imaging library involved)."""
    h, w = len(rows), len(rows[0])

    def chunk(tag, data):
        return (struct.pack(">I", len(data)) + tag + data
                + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF))

    raw = b"".join(b"\x00" + bytes(r) for r in rows)
    return (b"\x89PNG\r\n\x1a\n"
            + chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 8, 0, 0, 0, 0))
            + chunk(b"IDAT", zlib.compress(raw))
            + chunk(b"IEND", b""))


def gaussian_weights(sigma):
    r = math.ceil(3 * sigma)
    w = [math.exp(-i * i / (2 * sigma * sigma)) for i in range(-r, r + 1)]
    s = sum(w)
    return [v / s for v in w]


def blur_loops(img, sigma):
    """Separable blur with edge replication, written with explicit loops."""
    w = gaussian_weights(sigma)
    r = len(w) // 2
    img = np.asarray(img, dtype=np.float64)
    h, wd = img.shape[:2]
    tmp = np.zeros_like(img)
    for y in range(h):
        for x in range(wd):
            tmp[y, x] = sum(w[k + r] * img[y, min(max(x + k, 0), wd - 1)] for k in range(-r, r + 1))
    out = np.zeros_like(img)
    for y in range(h):
        for x in range(wd):
            out[y, x] = sum(w[k + r] * tmp[min(max(y + k, 0), h - 1), x] for k in range(-r, r + 1))
    return out


def jsc_objective_loops(x, D, A, lam1, lam2):
    f = 0.0
    for s in range(len(x)):
        Ds = np.asarray(D[s])
        for i in range(Ds.shape[0]):
            r = x[s][i] - sum(Ds[i, j] * A[j, s] for j in range(Ds.shape[1]))
            f += 0.5 * r * r
    for j in range(A.shape[0]):
        f += lam1 * math.sqrt(sum(A[j, s] ** 2 for s in range(A.shape[1])))
        f += 0.5 * lam2 * sum(A[j, s] ** 2 for s in range(A.shape[1]))
    return f


def fista_group_lasso(x, D, lam1, lam2, iters=100000, tol=1e-14):
    """Accelerated proximal gradient on the row-group lasso with ridge.

    Momentum is reset whenever it points uphill, which keeps convergence
    linear on these strongly convex problems.
    """
    M = len(D)
    d = D[0].shape[1]
    G = np.stack([Ds.T @ Ds for Ds in D])
    c = np.stack([Ds.T @ np.ravel(xs) for Ds, xs in zip(D, x)], axis=1)
    L = max(np.linalg.eigvalsh(Gs)[-1] for Gs in G) + lam2
    A = np.zeros((d, M))
    Y = A.copy()
    t = 1.0
    for _ in range(iters):
        grad = np.einsum("sjk,ks->js", G, Y) - c + lam2 * Y
        Z = Y - grad / L
        nrm = np.linalg.norm(Z, axis=1, keepdims=True)
        A_new = Z * np.maximum(0.0, 1.0 - (lam1 / L) / np.maximum(nrm, 1e-300))
        step = A_new - A
        if np.abs(step).max() < tol:
            return A_new
        if np.sum((Y - A_new) * step) > 0:
            t = 1.0
        t_new = (1 + math.sqrt(1 + 4 * t * t)) / 2
        Y = A_new + (t - 1) / t_new * step
        A, t = A_new, t_new
    return A


def dhat_loops(dicts, Lambda):
    n_s = [Ds.shape[0] for Ds in dicts]
    M = len(dicts)
    out = np.zeros((sum(n_s), M * len(Lambda)))
    for col_block, j in enumerate(Lambda):
        row = 0
        for s in range(M):
            for i in range(n_s[s]):
                out[row + i, col_block * M + s] = dicts[s][i, j]
            row += n_s[s]
    return out


def supervised_loss_loops(y, weights, bias, A):
    total = 0.0
    for s, Ws in enumerate(weights):
        for i in range(len(y)):
            pred = bias[i] + sum(Ws[i, j] * A[j, s] for j in range(A.shape[0]))
            total += 0.5 * (y[i] - pred) ** 2
    return total


def confusion_loops(gmap, gt, thr):
    tp = fp = tn = fn = 0
    for v, g in zip(np.ravel(gmap), np.ravel(gt)):
        pos = v >= thr
        if pos and g:
            tp += 1
        elif pos:
            fp += 1
        elif g:
            fn += 1
        else:
            tn += 1
    return tp, fp, tn, fn


def tree_predict_recursive(tree, x, node=0):
    if tree.feature[node] < 0:
        return tree.value[node]
    nxt = node + 1 if x[tree.feature[node]] <= tree.threshold[node] else tree.right[node]
    return tree_predict_recursive(tree, x, nxt)


def adjacency_scan(labels):
    h, w = labels.shape
    adj = {}
    for y in range(h):
        for x in range(w):
            a = labels[y, x]
            adj.setdefault(a, set())
            for dy, dx in ((0, 1), (1, 0)):
                yy, xx = y + dy, x + dx
                if yy < h and xx < w and labels[yy, xx] != a:
                    b = labels[yy, xx]
                    adj[a].add(b)
                    adj.setdefault(b, set()).add(a)
    return adj


def chi2_loops(h1, h2):
    total = 0.0
    for a, b in zip(h1, h2):
        if a + b > 0:
            total += 2 * (a - b) ** 2 / (a + b)
    return total


def random_dicts(rng, M, n, d):
    """Gaussian dictionaries with unit-norm columns."""
    D = [rng.standard_normal((n, d)) for _ in range(M)]
    return [Ds / np.linalg.norm(Ds, axis=0) for Ds in D]
