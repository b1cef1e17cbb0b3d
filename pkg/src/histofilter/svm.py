"""Binary RBF support vector machine trained by sequential minimal optimization.

Solves min 1/2 a'Qa - e'a with 0 <= a_i <= C_i and y'a = 0, Q_ij = y_i y_j
K(x_i, x_j). Each step updates the first-order maximal violating pair and the
gradient incrementally; kernel rows are memoized in a byte-bounded LRU cache.
Probability outputs come from a sigmoid fit on out-of-fold decision values.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .errors import Degenerate, DimMismatch, NonFinite, SingleClass
from .util import derive_rng

DEFAULT_TOL = 1e-3
DEFAULT_MAX_ITER = 10_000_000
DEFAULT_CACHE_BYTES = 64 * 1024 * 1024
_TAU = 1e-12


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    """exp(-gamma * ||a_i - b_j||^2) for all row pairs; shape (len(a), len(b))."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise DimMismatch(f"kernel operands have dims {a.shape[1]} and {b.shape[1]}")
    sq = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :] - 2.0 * (a @ b.T)
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


@dataclass(frozen=True)
class SvmModel:
    gamma: float
    c: float
    support_vectors: np.ndarray  # (m, d)
    dual_coef: np.ndarray  # (m,), alpha_i * y_i
    bias: float
    platt_a: float | None = None
    platt_b: float | None = None
    n_iter: int = 0
    converged: bool = True

    @property
    def input_dim(self) -> int:
        return self.support_vectors.shape[1]

    @property
    def is_calibrated(self) -> bool:
        return self.platt_a is not None and self.platt_b is not None


class _QCache:
    """LRU over rows of Q keyed by sample index, bounded in bytes."""

    def __init__(self, x, y, gamma, budget_bytes):
        self._x = x
        self._y = y
        self._gamma = gamma
        self._rows: OrderedDict[int, np.ndarray] = OrderedDict()
        row_bytes = 8 * x.shape[0]
        self._capacity = max(2, budget_bytes // row_bytes)

    def row(self, i: int) -> np.ndarray:
        cached = self._rows.get(i)
        if cached is not None:
            self._rows.move_to_end(i)
            return cached
        k = rbf_kernel(self._x[i : i + 1], self._x, self._gamma)[0]
        q = self._y[i] * self._y * k
        self._rows[i] = q
        while len(self._rows) > self._capacity:
            self._rows.popitem(last=False)
        return q


def _solve_smo(x, y, c_per_sample, gamma, tol, max_iter, cache_bytes):
    n = x.shape[0]
    alpha = np.zeros(n)
    grad = -np.ones(n)
    cache = _QCache(x, y, gamma, cache_bytes)
    pos = y > 0
    neg = ~pos

    it = 0
    converged = False
    while it < max_iter:
        at_upper = alpha >= c_per_sample
        at_zero = alpha <= 0.0
        in_up = (pos & ~at_upper) | (neg & ~at_zero)
        in_low = (neg & ~at_upper) | (pos & ~at_zero)
        neg_yg = -y * grad

        up_idx = np.flatnonzero(in_up)
        low_idx = np.flatnonzero(in_low)
        if up_idx.size == 0 or low_idx.size == 0:
            converged = True
            break
        i = up_idx[int(np.argmax(neg_yg[up_idx]))]
        j = low_idx[int(np.argmin(neg_yg[low_idx]))]
        if neg_yg[i] - neg_yg[j] < tol:
            converged = True
            break

        qi = cache.row(i)
        qj = cache.row(j)
        ci = c_per_sample[i]
        cj = c_per_sample[j]
        old_i = alpha[i]
        old_j = alpha[j]

        if y[i] != y[j]:
            quad = 2.0 + 2.0 * qi[j]  # QD=1 for RBF; Q_ij = -K_ij here
            if quad <= 0.0:
                quad = _TAU
            delta = (-grad[i] - grad[j]) / quad
            diff = old_i - old_j
            ai = old_i + delta
            aj = old_j + delta
            if diff > 0.0:
                if aj < 0.0:
                    aj = 0.0
                    ai = diff
            else:
                if ai < 0.0:
                    ai = 0.0
                    aj = -diff
            if diff > ci - cj:
                if ai > ci:
                    ai = ci
                    aj = ci - diff
            else:
                if aj > cj:
                    aj = cj
                    ai = cj + diff
        else:
            quad = 2.0 - 2.0 * qi[j]
            if quad <= 0.0:
                quad = _TAU
            delta = (grad[i] - grad[j]) / quad
            total = old_i + old_j
            ai = old_i - delta
            aj = old_j + delta
            if total > ci:
                if ai > ci:
                    ai = ci
                    aj = total - ci
            else:
                if aj < 0.0:
                    aj = 0.0
                    ai = total
            if total > cj:
                if aj > cj:
                    aj = cj
                    ai = total - cj
            else:
                if ai < 0.0:
                    ai = 0.0
                    aj = total

        alpha[i] = ai
        alpha[j] = aj
        grad += qi * (ai - old_i) + qj * (aj - old_j)
        it += 1

    bias = _compute_bias(alpha, grad, y, c_per_sample)
    return alpha, bias, it, converged


def _compute_bias(alpha, grad, y, c_per_sample):
    free = (alpha > 0.0) & (alpha < c_per_sample)
    neg_yg = -y * grad
    if free.any():
        return float(neg_yg[free].mean())
    pos = y > 0
    in_up = (pos & (alpha < c_per_sample)) | (~pos & (alpha > 0.0))
    in_low = (~pos & (alpha < c_per_sample)) | (pos & (alpha > 0.0))
    hi = neg_yg[in_up].max() if in_up.any() else 0.0
    lo = neg_yg[in_low].min() if in_low.any() else 0.0
    return float((hi + lo) / 2.0)


def _check_training_inputs(x, y, c, gamma):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ValueError("expected x (n, d) and y (n,)")
    if not np.isfinite(x).all():
        raise NonFinite("training matrix contains NaN or infinity")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be -1 or +1")
    if c <= 0.0 or gamma <= 0.0:
        raise ValueError("C and gamma must be positive")
    if x.shape[0] < 2:
        raise Degenerate("need at least two training samples")
    if np.all(y == y[0]):
        raise SingleClass("training labels contain a single class")
    return x, y


def svm_train(
    x: np.ndarray,
    y: np.ndarray,
    c: float,
    gamma: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    cache_bytes: int = DEFAULT_CACHE_BYTES,
    balanced: bool = False,
    probability: bool = False,
    n_calibration_folds: int = 3,
    seed: int = 0,
) -> SvmModel:
    """Fit the dual problem; optionally attach sigmoid probability parameters.

    balanced=True scales each sample's box bound by n / (2 * class count).
    Calibration refits the machine on stratified folds so the sigmoid sees only
    out-of-fold decision values; with fewer than two samples in a class it
    falls back to in-sample values.
    """
    x, y = _check_training_inputs(x, y, c, gamma)
    c_per_sample = _per_sample_c(y, c, balanced)
    alpha, bias, n_iter, converged = _solve_smo(
        x, y, c_per_sample, gamma, tol, max_iter, cache_bytes
    )
    support = alpha > 0.0
    model = SvmModel(
        gamma=gamma,
        c=c,
        support_vectors=x[support].copy(),
        dual_coef=(alpha * y)[support].copy(),
        bias=bias,
        n_iter=n_iter,
        converged=converged,
    )
    if probability:
        dec, targets = _out_of_fold_decisions(
            x, y, c, gamma, tol, max_iter, cache_bytes, balanced, n_calibration_folds, seed
        )
        a, b = platt_fit(dec, targets)
        model = SvmModel(
            gamma=model.gamma,
            c=model.c,
            support_vectors=model.support_vectors,
            dual_coef=model.dual_coef,
            bias=model.bias,
            platt_a=a,
            platt_b=b,
            n_iter=model.n_iter,
            converged=model.converged,
        )
    return model


def _per_sample_c(y, c, balanced):
    n = y.shape[0]
    if not balanced:
        return np.full(n, c)
    n_pos = int((y > 0).sum())
    n_neg = n - n_pos
    out = np.empty(n)
    out[y > 0] = c * n / (2.0 * n_pos)
    out[y < 0] = c * n / (2.0 * n_neg)
    return out


def stratified_folds(y: np.ndarray, n_folds: int, seed: int) -> list[np.ndarray]:
    """Index arrays per fold; each class is shuffled once and dealt round-robin."""
    y = np.asarray(y)
    if n_folds < 2:
        raise ValueError("need at least two folds")
    folds: list[list[int]] = [[] for _ in range(n_folds)]
    for class_index, value in enumerate(np.unique(y)):
        members = np.flatnonzero(y == value)
        rng = derive_rng(seed, class_index)
        members = members[rng.permutation(members.size)]
        for pos, idx in enumerate(members):
            folds[pos % n_folds].append(int(idx))
    return [np.array(sorted(f), dtype=np.intp) for f in folds]


def _out_of_fold_decisions(x, y, c, gamma, tol, max_iter, cache_bytes, balanced, n_folds, seed):
    n = x.shape[0]
    min_class = min(int((y > 0).sum()), int((y < 0).sum()))
    k = min(n_folds, min_class)
    if k < 2:
        model = svm_train(x, y, c, gamma, tol, max_iter, cache_bytes, balanced)
        return svm_decision(model, x), y
    dec = np.empty(n)
    for fold in stratified_folds(y, k, seed):
        mask = np.ones(n, dtype=bool)
        mask[fold] = False
        if np.all(y[mask] == y[mask][0]):
            model = svm_train(x, y, c, gamma, tol, max_iter, cache_bytes, balanced)
            return svm_decision(model, x), y
        sub = svm_train(x[mask], y[mask], c, gamma, tol, max_iter, cache_bytes, balanced)
        dec[fold] = svm_decision(sub, x[fold])
    return dec, y


def svm_decision(model: SvmModel, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != model.input_dim:
        raise DimMismatch(f"expected dim {model.input_dim}, got {x.shape[1]}")
    k = rbf_kernel(x, model.support_vectors, model.gamma)
    return k @ model.dual_coef + model.bias


def svm_predict(model: SvmModel, x: np.ndarray) -> np.ndarray:
    """Labels in {-1, +1}; a decision value of exactly 0 goes to +1."""
    return np.where(svm_decision(model, x) >= 0.0, 1, -1).astype(np.int64)


def svm_predict_proba(model: SvmModel, x: np.ndarray) -> np.ndarray:
    """P(y=+1) via the fitted sigmoid; requires probability training."""
    if not model.is_calibrated:
        raise Degenerate("model has no probability calibration")
    return _sigmoid(model.platt_a, model.platt_b, svm_decision(model, x))


def _sigmoid(a, b, f):
    z = a * f + b
    out = np.empty_like(z)
    nonneg = z >= 0
    e = np.exp(-z[nonneg])
    out[nonneg] = e / (1.0 + e)
    out[~nonneg] = 1.0 / (1.0 + np.exp(z[~nonneg]))
    return out


def platt_fit(decision_values: np.ndarray, y: np.ndarray, max_iter: int = 100) -> tuple[float, float]:
    """Damped Newton fit of P(y=+1|f) = 1 / (1 + exp(A f + B)).

    Targets are smoothed: (n_pos + 1)/(n_pos + 2) for positives, 1/(n_neg + 2)
    for negatives, which keeps the likelihood well defined on separable data.
    """
    f = np.asarray(decision_values, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if f.shape != y.shape or f.ndim != 1:
        raise ValueError("decision values and labels must be 1-d and aligned")
    n_pos = int((y > 0).sum())
    n_neg = y.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("calibration needs both classes")

    hi = (n_pos + 1.0) / (n_pos + 2.0)
    lo = 1.0 / (n_neg + 2.0)
    t = np.where(y > 0, hi, lo)

    min_step = 1e-10
    sigma = 1e-12
    a = 0.0
    b = math.log((n_neg + 1.0) / (n_pos + 1.0))
    fval = _platt_objective(a, b, f, t)

    for _ in range(max_iter):
        z = a * f + b
        p = _sigmoid(1.0, 0.0, z)  # P(y=+1) under the current sigmoid
        q = 1.0 - p
        d1 = p * q
        h11 = float((f * f * d1).sum()) + sigma
        h22 = float(d1.sum()) + sigma
        h21 = float((f * d1).sum())
        g1 = float((f * (t - p)).sum())
        g2 = float((t - p).sum())
        if abs(g1) < 1e-5 and abs(g2) < 1e-5:
            break
        det = h11 * h22 - h21 * h21
        da = -(h22 * g1 - h21 * g2) / det
        db = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * da + g2 * db

        step = 1.0
        while step >= min_step:
            new_a = a + step * da
            new_b = b + step * db
            new_f = _platt_objective(new_a, new_b, f, t)
            if new_f < fval + 1e-4 * step * gd:
                a, b, fval = new_a, new_b, new_f
                break
            step /= 2.0
        else:
            break
    return float(a), float(b)


def _platt_objective(a, b, f, t):
    # cross entropy against smoothed targets, split at z=0 for stability
    z = a * f + b
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = t[pos] * z[pos] + np.log1p(np.exp(-z[pos]))
    out[~pos] = (t[~pos] - 1.0) * z[~pos] + np.log1p(np.exp(z[~pos]))
    return float(out.sum())


@dataclass(frozen=True)
class GridSearchResult:
    c: float
    gamma: float
    score: float
    c_grid: tuple[float, ...]
    gamma_grid: tuple[float, ...]
    scores: np.ndarray  # (len(c_grid), len(gamma_grid)) mean fold accuracy


def grid_search(
    x: np.ndarray,
    y: np.ndarray,
    c_grid,
    gamma_grid,
    n_folds: int = 3,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
    balanced: bool = False,
) -> GridSearchResult:
    """Mean stratified-CV accuracy per (C, gamma); ties keep the earliest pair.

    The same fold assignment is reused for every grid cell so scores are
    comparable.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    c_grid = tuple(float(v) for v in c_grid)
    gamma_grid = tuple(float(v) for v in gamma_grid)
    if not c_grid or not gamma_grid:
        raise ValueError("grids must be non-empty")
    min_class = min(int((y > 0).sum()), int((y < 0).sum()))
    if min_class < 2:
        raise SingleClass("grid search needs at least two samples per class")
    k = min(n_folds, min_class)
    folds = stratified_folds(y, k, seed)

    scores = np.zeros((len(c_grid), len(gamma_grid)))
    n = x.shape[0]
    for ci, c in enumerate(c_grid):
        for gi, gamma in enumerate(gamma_grid):
            accs = []
            for fold in folds:
                mask = np.ones(n, dtype=bool)
                mask[fold] = False
                model = svm_train(x[mask], y[mask], c, gamma, tol=tol, balanced=balanced)
                pred = svm_predict(model, x[fold])
                accs.append(float((pred == y[fold]).mean()))
            scores[ci, gi] = float(np.mean(accs))

    best_ci, best_gi = 0, 0
    best = scores[0, 0]
    for ci in range(len(c_grid)):
        for gi in range(len(gamma_grid)):
            if scores[ci, gi] > best:
                best = scores[ci, gi]
                best_ci, best_gi = ci, gi
    return GridSearchResult(
        c=c_grid[best_ci],
        gamma=gamma_grid[best_gi],
        score=float(best),
        c_grid=c_grid,
        gamma_grid=gamma_grid,
        scores=scores,
    )
