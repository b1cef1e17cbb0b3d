"""Principal component analysis by exact eigendecomposition.

Covariance uses the population normalizer (divide by n). When the feature
dimension exceeds the sample count the n x n Gram matrix is decomposed instead
and eigenvectors are mapped back, which keeps high-dimensional fits cheap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, KTooLarge, NonFinite, ZeroVariance


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray  # (d,)
    components: np.ndarray  # (k, d), rows orthonormal, ordered by eigenvalue desc
    eigenvalues: np.ndarray  # (k,), non-negative
    total_variance: float  # trace of the population covariance at fit time

    @property
    def input_dim(self) -> int:
        return self.mean.shape[0]

    @property
    def n_components(self) -> int:
        return self.components.shape[0]


def _fix_signs(components: np.ndarray) -> np.ndarray:
    # deterministic orientation: largest-|coordinate| entry made positive
    out = components.copy()
    for i in range(out.shape[0]):
        j = int(np.argmax(np.abs(out[i])))
        if out[i, j] < 0:
            out[i] = -out[i]
    return out


def pca_fit(x: np.ndarray, k: int) -> PcaModel:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("expected a 2-d sample matrix")
    if not np.isfinite(x).all():
        raise NonFinite("feature matrix contains NaN or infinity")
    n, d = x.shape
    if n < 1:
        raise ValueError("need at least one sample")
    if k < 1 or k > min(n, d):
        raise KTooLarge(f"k={k} outside [1, min(n={n}, d={d})]")

    mean = x.mean(axis=0)
    centered = x - mean
    total_variance = float((centered * centered).sum() / n)
    if total_variance == 0.0:
        raise ZeroVariance("all samples are identical; no principal directions")

    if d <= n:
        cov = centered.T @ centered / n
        eigvals, eigvecs = np.linalg.eigh(cov)
        order = np.argsort(eigvals)[::-1][:k]
        values = eigvals[order]
        components = eigvecs[:, order].T
    else:
        gram = centered @ centered.T / n
        eigvals, eigvecs = np.linalg.eigh(gram)
        order = np.argsort(eigvals)[::-1][:k]
        values = eigvals[order]
        components = np.empty((k, d), dtype=np.float64)
        # mapped vectors scale like sqrt(n * lam); anything far below the top
        # eigenvalue's scale is a numerical null (centering costs one rank)
        null_scale = 1e-9 * np.sqrt(n * max(float(eigvals.max()), 0.0))
        for i, idx in enumerate(order):
            v = centered.T @ eigvecs[:, idx]
            norm = float(np.linalg.norm(v))
            if norm <= null_scale or not np.isfinite(norm):
                # null direction: orthonormalize against what we already have
                v = _null_direction(components[:i], d)
            else:
                v = v / norm
            components[i] = v

    values = np.maximum(values, 0.0)
    return PcaModel(mean, _fix_signs(np.ascontiguousarray(components)), values, total_variance)


def _null_direction(existing: np.ndarray, d: int) -> np.ndarray:
    # deterministic unit vector orthogonal to all rows of existing
    for j in range(d):
        v = np.zeros(d)
        v[j] = 1.0
        if existing.shape[0]:
            v -= existing.T @ (existing @ v)
        norm = np.linalg.norm(v)
        if norm > 1e-9:
            return v / norm
    raise ZeroVariance("no orthogonal direction available")


def pca_transform(model: PcaModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("expected a 2-d sample matrix")
    if x.shape[1] != model.input_dim:
        raise DimMismatch(f"expected dim {model.input_dim}, got {x.shape[1]}")
    if not np.isfinite(x).all():
        raise NonFinite("feature matrix contains NaN or infinity")
    return (x - model.mean) @ model.components.T


def explained_variance_ratio(model: PcaModel) -> np.ndarray:
    if model.total_variance <= 0.0:
        raise ZeroVariance("model was fit on zero-variance data")
    return model.eigenvalues / model.total_variance
