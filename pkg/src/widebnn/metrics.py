"""Discrepancy measures: relative Frobenius distance, Gaussian W2 and KL.

``w2_gaussian`` returns the *squared* 2-Wasserstein distance (the Bures form
in the covariances); callers that report an unsquared "W2" take the root.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, SingularDistribution, ZeroReference
from .numkit import as_matrix, cholesky, solve_spd, sym_sqrt

__all__ = ["GaussianDist", "rel_frobenius", "w2_gaussian", "kl_gaussian"]


@dataclass
class GaussianDist:
    """Mean vector and symmetric PSD covariance; zero covariance is a point
    mass (allowed in W2, rejected in KL)."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.cov = as_matrix(self.cov, "cov")
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise DimensionMismatch("covariance shape must match mean length")

    @property
    def dim(self) -> int:
        return self.mean.size


def rel_frobenius(a, b) -> float:
    """||A - B||_F / ||B||_F."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    ref = np.linalg.norm(b)
    if ref == 0.0:
        raise ZeroReference("reference matrix has zero Frobenius norm")
    return float(np.linalg.norm(a - b) / ref)


def w2_gaussian(p: GaussianDist, q: GaussianDist) -> float:
    """Squared 2-Wasserstein distance between two Gaussians (Bures form)."""
    if p.dim != q.dim:
        raise DimensionMismatch("distributions have different dimensions")
    dm = p.mean - q.mean
    sq = sym_sqrt(q.cov)
    inner = sym_sqrt(sq @ p.cov @ sq)
    val = dm @ dm + np.trace(p.cov) + np.trace(q.cov) - 2.0 * np.trace(inner)
    return float(max(val, 0.0))


def kl_gaussian(p: GaussianDist, q: GaussianDist) -> float:
    """KL(P || Q) for Gaussians; Q must be strictly positive definite and P
    non-singular. Determinants come from Cholesky factors for stability."""
    if p.dim != q.dim:
        raise DimensionMismatch("distributions have different dimensions")
    lq = cholesky(q.cov)
    try:
        lp = cholesky(p.cov)
    except Exception as exc:
        raise SingularDistribution("P covariance is singular") from exc
    if np.any(np.diag(lp) <= 0.0):
        raise SingularDistribution("P covariance is singular")
    dim = p.dim
    trace = float(np.trace(solve_spd(q.cov, p.cov)))
    dm = q.mean - p.mean
    quad = float(dm @ solve_spd(q.cov, dm))
    logdet_q = 2.0 * float(np.sum(np.log(np.diag(lq))))
    logdet_p = 2.0 * float(np.sum(np.log(np.diag(lp))))
    val = 0.5 * (trace + quad - dim + logdet_q - logdet_p)
    return float(max(val, 0.0))
