"""Feature post-processing before retrieval.

Whitening statistics come from the database only and the same transform is
applied to queries. The transform is PCA whitening, W = U diag(lambda + eps)^-1/2,
with eigenvalues sorted descending (ties keep index order) and each
eigenvector's largest-magnitude component made positive. Statistics are
accumulated in float64; stored matrices stay float32.
"""
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
import scipy.linalg

from weakrank.embeddings.store import EmbeddingMatrix
from weakrank.errors import (DimensionMismatch, EigenFailure, EmptyEnsemble, IdMismatch, TooFewRows,
                             ValidationError, ZeroNormRow)

@dataclass(frozen=True, eq=False)
class WhiteningTransform:
    mean: np.ndarray
    matrix: np.ndarray
    eps_reg: float = 1e-6

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def identity(cls, dim: int) -> "WhiteningTransform":
        return cls(np.zeros(dim), np.eye(dim), 0.0)

def l2_normalize(m: EmbeddingMatrix) -> EmbeddingMatrix:
    x = m.data.astype(np.float64)
    norms = np.linalg.norm(x, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ZeroNormRow(int(zero[0]))
    return EmbeddingMatrix(m.ids, (x / norms[:, None]).astype(np.float32))

def compute_mean_cov(db: EmbeddingMatrix) -> Tuple[np.ndarray, np.ndarray]:
    """Column mean and population covariance (1/N) of the database rows."""
    if db.n < 2:
        raise TooFewRows(f"Need at least 2 database rows for covariance, got {db.n}")
    x = db.data.astype(np.float64)
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / db.n
    return mean, (cov + cov.T) / 2

def fit_whitening(mean: np.ndarray, cov: np.ndarray, eps_reg: float = 1e-6) -> WhiteningTransform:
    if eps_reg < 0:
        raise ValidationError(f"eps_reg must be >= 0, got {eps_reg}")
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1] or cov.shape[0] != mean.shape[0]:
        raise DimensionMismatch(f"Covariance {cov.shape} does not match mean of length {mean.shape[0]}")
    try:
        eigvals, eigvecs = scipy.linalg.eigh(cov)
    except (np.linalg.LinAlgError, ValueError) as err:
        raise EigenFailure(f"Eigendecomposition failed: {err}") from err
    order = np.argsort(-eigvals, kind='stable')
    eigvals, eigvecs = eigvals[order], eigvecs[:, order]

    pivots = np.argmax(np.abs(eigvecs), axis=0)
    signs = np.sign(eigvecs[pivots, np.arange(eigvecs.shape[1])])
    signs[signs == 0] = 1
    eigvecs = eigvecs * signs

    # Round-off can leave tiny negative eigenvalues on rank-deficient databases
    scale = np.clip(eigvals, 0, None) + eps_reg
    with np.errstate(divide='ignore'):
        matrix = eigvecs / np.sqrt(scale)
    if not np.isfinite(matrix).all():
        raise EigenFailure("Covariance is singular; use a positive eps_reg")
    return WhiteningTransform(mean=np.asarray(mean, dtype=np.float64), matrix=matrix, eps_reg=eps_reg)

def apply_whitening(m: EmbeddingMatrix, t: WhiteningTransform) -> EmbeddingMatrix:
    if m.dim != t.dim:
        raise DimensionMismatch(f"Embeddings have dim {m.dim}, transform expects {t.dim}")
    whitened = (m.data.astype(np.float64) - t.mean) @ t.matrix
    return EmbeddingMatrix(m.ids, whitened.astype(np.float32))

def whiten_pair(queries: EmbeddingMatrix, db: EmbeddingMatrix,
                eps_reg: float = 1e-6) -> Tuple[EmbeddingMatrix, EmbeddingMatrix]:
    """Fit on `db`, whiten both sides and L2-normalise (one ensemble member)."""
    transform = fit_whitening(*compute_mean_cov(db), eps_reg=eps_reg)
    return (l2_normalize(apply_whitening(queries, transform)),
            l2_normalize(apply_whitening(db, transform)))

def ensemble_concat(models: Sequence[EmbeddingMatrix]) -> EmbeddingMatrix:
    """Concatenate per-model embeddings along the feature dimension."""
    if not models:
        raise EmptyEnsemble("Cannot concatenate an empty ensemble")
    ids = models[0].ids
    for position, m in enumerate(models[1:], start=1):
        if m.ids != ids:
            raise IdMismatch(f"Ensemble member {position} has different ids or id order")
    if len(models) == 1:
        return models[0]
    return EmbeddingMatrix(ids, np.hstack([m.data for m in models]))
