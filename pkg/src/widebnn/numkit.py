"""Dense symmetric linear algebra and reproducible Gaussian streams.

Everything downstream works with plain float64 ``numpy`` arrays; the helpers
here add the validation, jitter and error policy the rest of the package
relies on. Random numbers come from keyed Philox streams so that any
(seed, stream_id) pair reproduces the same sequence regardless of thread
scheduling.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, NotPositiveDefinite, NotPSD

__all__ = [
    "as_matrix",
    "cholesky",
    "solve_spd",
    "sym_sqrt",
    "GaussianStream",
]

_SYM_RTOL = 1e-12
_JITTER_REL = 1e-10
_PSD_TOL = 1e-10


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array and reject non-finite entries."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains NaN or Inf")
    return m


def _check_symmetric(a: np.ndarray, name: str) -> None:
    if a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got {a.shape}")
    scale = np.abs(a).max()
    if scale > 0 and np.abs(a - a.T).max() > _SYM_RTOL * max(scale, 1.0) * a.shape[0]:
        raise DimensionMismatch(f"{name} is not symmetric within tolerance")


def cholesky(a) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive definite matrix.

    Retries once with a diagonal jitter of ``1e-10 * trace / dim`` before
    raising: analytic kernel matrices on near-duplicate inputs are routinely
    semidefinite only up to rounding.
    """
    m = as_matrix(a, "A")
    _check_symmetric(m, "A")
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        pass
    dim = m.shape[0]
    jitter = _JITTER_REL * max(np.trace(m), 0.0) / dim
    try:
        return np.linalg.cholesky(m + jitter * np.eye(dim))
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(
            "matrix is not positive definite (jitter retry failed)"
        ) from None


def solve_spd(a, b) -> np.ndarray:
    """Solve ``A X = B`` for symmetric positive definite ``A``."""
    import scipy.linalg

    m = as_matrix(a, "A")
    rhs = np.asarray(b, dtype=np.float64)
    squeeze = rhs.ndim == 1
    if squeeze:
        rhs = rhs[:, None]
    if rhs.shape[0] != m.shape[0]:
        raise DimensionMismatch(
            f"B has {rhs.shape[0]} rows, expected {m.shape[0]}"
        )
    lower = cholesky(m)
    x = scipy.linalg.cho_solve((lower, True), rhs, check_finite=False)
    return x[:, 0] if squeeze else x


def sym_sqrt(a) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues in ``[-1e-10 * scale, 0)`` are clamped to zero; anything more
    negative raises :class:`NotPSD`.
    """
    m = as_matrix(a, "A")
    _check_symmetric(m, "A")
    w, v = np.linalg.eigh(m)
    tol = _PSD_TOL * max(1.0, float(np.abs(w).max()) if w.size else 0.0)
    if w.size and w[0] < -tol:
        raise NotPSD(f"eigenvalue {w[0]:.3e} below PSD tolerance")
    w = np.clip(w, 0.0, None)
    s = (v * np.sqrt(w)) @ v.T
    return (s + s.T) / 2.0


class GaussianStream:
    """Deterministic standard-normal stream keyed by (seed, stream_id).

    Backed by the counter-based Philox generator, so distinct stream ids give
    statistically independent sequences and the output never depends on which
    thread consumes the stream. Consecutive :meth:`normal` calls continue the
    same sequence.
    """

    __slots__ = ("seed", "stream_id", "_gen")

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        key = np.array(
            [self.seed % (1 << 64), self.stream_id % (1 << 64)], dtype=np.uint64
        )
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def normal(self, count: int) -> np.ndarray:
        """Draw ``count`` standard normal float64 values."""
        return self._gen.standard_normal(int(count))

    def __repr__(self) -> str:  # pragma: no cover
        return f"GaussianStream(seed={self.seed}, stream_id={self.stream_id})"
