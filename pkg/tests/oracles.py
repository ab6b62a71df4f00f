"""Independent reference implementations used only by the tests."""

import numpy as np


def correlate_loop(x, w, stride):
    """Zero-padded strided correlation by explicit loops over every tap."""
    h, wd, c = x.shape
    f, kh, kw, _ = w.shape
    ph, pw = (kh - stride) // 2, (kw - stride) // 2
    out = np.zeros((h // stride, wd // stride, f))
    for i in range(h // stride):
        for j in range(wd // stride):
            for q in range(f):
                acc = 0.0
                for di in range(kh):
                    for dj in range(kw):
                        y, z = i * stride + di - ph, j * stride + dj - pw
                        if 0 <= y < h and 0 <= z < wd:
                            for ch in range(c):
                                acc += float(x[y, z, ch]) * float(w[q, di, dj, ch])
                out[i, j, q] = acc
    return out


def transpose_loop(a, w, stride):
    """Scatter every activation times its kernel into the (cropped) image plane."""
    ho, wo, f = a.shape
    _, kh, kw, c = w.shape
    ph, pw = (kh - stride) // 2, (kw - stride) // 2
    out = np.zeros((ho * stride, wo * stride, c))
    for i in range(ho):
        for j in range(wo):
            for q in range(f):
                for di in range(kh):
                    for dj in range(kw):
                        y, z = i * stride + di - ph, j * stride + dj - pw
                        if 0 <= y < out.shape[0] and 0 <= z < out.shape[1]:
                            out[y, z] += a[i, j, q] * w[q, di, dj]
    return out


def nonneg_ista(x, D, lam, iters=20000, tol=1e-12):
    """Projected proximal gradient on 0.5||x - D a||^2 + lam ||a||_1 with a >= 0."""
    L = np.linalg.norm(D, 2) ** 2
    a = np.zeros(D.shape[1])
    for _ in range(iters):
        nxt = np.maximum(a - (D.T @ (D @ a - x) + lam) / L, 0.0)
        if np.max(np.abs(nxt - a)) < tol:
            return nxt
        a = nxt
    return a


def grid_threshold(face, nonface, lo, hi, step=0.01):
    """Threshold on a grid that minimizes empirical misclassification."""
    grid = np.arange(lo, hi + step / 2, step)
    errs = [np.sum(face < t) + np.sum(nonface >= t) for t in grid]
    return grid, np.asarray(errs)
