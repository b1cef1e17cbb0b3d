"""Independent reference implementations used to cross-check the fast paths.

Everything here is written the dumbest correct way: python loops, dense
matrices, brute-force projections. None of it imports from histofilter's
numeric internals beyond public kernel helpers, so a bug in the package
cannot hide inside its own oracle.
"""

from __future__ import annotations

import numpy as np


# --- thresholding -------------------------------------------------------------

def otsu_exhaustive(hist):
    """Argmax of between-class variance by direct slicing, first max wins."""
    hist = np.asarray(hist, dtype=np.int64)
    total = int(hist.sum())
    levels = np.arange(hist.size, dtype=np.int64)
    best = -1.0
    best_t = None
    for t in range(hist.size - 1):
        w0 = int(hist[: t + 1].sum())
        w1 = total - w0
        if w0 == 0 or w1 == 0:
            continue
        mu0 = float((levels[: t + 1] * hist[: t + 1]).sum()) / w0
        mu1 = float((levels[t + 1 :] * hist[t + 1 :]).sum()) / w1
        v = float(w0) * float(w1) * (mu0 - mu1) ** 2
        if v > best:
            best = v
            best_t = t
    if best_t is None:
        # degenerate: all mass in one bin; threshold at that value
        return int(np.flatnonzero(hist)[0])
    return best_t


# --- adjacency statistics -----------------------------------------------------

def tas_reference(mask):
    """9-bin neighbour-count histogram by an explicit double loop."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    counts = np.zeros(9, dtype=np.int64)
    n_fg = 0
    for i in range(h):
        for j in range(w):
            if not mask[i, j]:
                continue
            n_fg += 1
            k = 0
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    if di == 0 and dj == 0:
                        continue
                    ii, jj = i + di, j + dj
                    if 0 <= ii < h and 0 <= jj < w and mask[ii, jj]:
                        k += 1
            counts[k] += 1
    if n_fg == 0:
        return np.zeros(9, dtype=np.float64)
    return counts / float(n_fg)


# --- principal components -----------------------------------------------------

def pca_reference(x, k):
    """Top-k directions and variances via SVD of the centered data."""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=0)
    xc = x - mean
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    eigenvalues = (s**2) / x.shape[0]
    return mean, vt[:k], eigenvalues[:k]


def principal_angle(a, b):
    """Largest principal angle (radians) between the row spans of a and b."""
    qa, _ = np.linalg.qr(np.asarray(a, dtype=np.float64).T)
    qb, _ = np.linalg.qr(np.asarray(b, dtype=np.float64).T)
    s = np.linalg.svd(qa.T @ qb, compute_uv=False)
    return float(np.arccos(np.clip(s.min(), -1.0, 1.0)))


# --- SVM dual -----------------------------------------------------------------

def project_box_hyperplane(v, y, c):
    """Euclidean projection onto {0 <= a <= c, y.a = 0} with y in {-1,+1}.

    The projection is clip(v - lam*y, 0, c) for the lam that zeroes the
    constraint. g(lam) = y.clip(v - lam*y, 0, c) is piecewise linear and
    nonincreasing with kinks only where a coordinate enters or leaves its box,
    so the root is solved exactly from the sorted breakpoints.
    """
    v = np.asarray(v, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    c_arr = np.broadcast_to(np.asarray(c, dtype=np.float64), v.shape)

    pos, neg = y > 0, y < 0
    bps = np.concatenate(
        [(v - c_arr)[pos], v[pos], (-v)[neg], (c_arr - v)[neg]]
    )
    lams = np.unique(np.concatenate([bps, [bps.min() - 1.0, bps.max() + 1.0]]))
    z = np.clip(v[None, :] - lams[:, None] * y[None, :], 0.0, c_arr[None, :])
    g = z @ y
    nonneg = np.flatnonzero(g >= 0.0)
    if nonneg.size == 0:
        lam = float(lams[0])
    else:
        k = int(nonneg[-1])
        if g[k] == 0.0 or k + 1 == lams.size:
            lam = float(lams[k])
        else:
            # linear segment between adjacent breakpoints crosses zero
            lam = float(lams[k] + g[k] * (lams[k + 1] - lams[k]) / (g[k] - g[k + 1]))
    return np.clip(v - lam * y, 0.0, c_arr)


def qp_dual_oracle(kernel, y, c, n_steps=200_000, tol=1e-12):
    """Projected-gradient descent on min 1/2 a'Qa - 1'a over the SVM dual set."""
    y = np.asarray(y, dtype=np.float64)
    q = np.asarray(kernel, dtype=np.float64) * np.outer(y, y)
    lip = float(np.linalg.eigvalsh(q)[-1])
    step = 1.0 / max(lip, 1e-12)
    a = np.zeros(y.size)
    for _ in range(n_steps):
        g = q @ a - 1.0
        a_new = project_box_hyperplane(a - step * g, y, c)
        if float(np.max(np.abs(a_new - a))) < tol:
            a = a_new
            break
        a = a_new
    return a


def dual_objective(alpha, kernel, y):
    alpha = np.asarray(alpha, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    q = np.asarray(kernel, dtype=np.float64) * np.outer(y, y)
    return float(0.5 * alpha @ q @ alpha - alpha.sum())


def full_alpha(model, x):
    """Training-aligned dual vector recovered from a trained machine.

    Rows of a random training matrix are unique with probability 1, so a byte
    index over rows maps each stored support vector back to its position.
    """
    index = {x[i].tobytes(): i for i in range(x.shape[0])}
    alpha = np.zeros(x.shape[0])
    for sv, coef in zip(model.support_vectors, model.dual_coef):
        alpha[index[sv.tobytes()]] = abs(coef)
    return alpha


def oracle_bias(alpha, kernel, y, c, atol=1e-8):
    """Bias from the oracle's free vectors; midpoint of the KKT box otherwise."""
    alpha = np.asarray(alpha, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    c_arr = np.broadcast_to(np.asarray(c, dtype=np.float64), alpha.shape)
    margins = np.asarray(kernel, dtype=np.float64) @ (alpha * y)
    free = (alpha > atol) & (alpha < c_arr - atol)
    if free.any():
        return float(np.mean(y[free] - margins[free]))
    lo, hi = -np.inf, np.inf
    for i in range(alpha.size):
        bound = y[i] - margins[i]
        at_zero = alpha[i] <= atol
        # a=0 wants y*f >= 1, a=C wants y*f <= 1; each caps b on one side
        if at_zero == (y[i] > 0):
            lo = max(lo, bound)
        else:
            hi = min(hi, bound)
    if np.isinf(lo) or np.isinf(hi):
        return float(np.mean(y - margins))
    return float(0.5 * (lo + hi))


def kkt_residuals(alpha, kernel, y, c, bias, atol=1e-9):
    """Per-sample violation of the box-complementarity conditions."""
    alpha = np.asarray(alpha, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    c_arr = np.broadcast_to(np.asarray(c, dtype=np.float64), alpha.shape)
    f = np.asarray(kernel, dtype=np.float64) @ (alpha * y) + bias
    yf = y * f
    res = np.empty_like(alpha)
    for i in range(alpha.size):
        if alpha[i] <= atol:
            res[i] = max(0.0, 1.0 - yf[i])
        elif alpha[i] >= c_arr[i] - atol:
            res[i] = max(0.0, yf[i] - 1.0)
        else:
            res[i] = abs(1.0 - yf[i])
    return res
