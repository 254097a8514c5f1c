"""Symmetric positive-definite matrices: validation, log/exp, tangent space, distances.

Connectivity matrices live on the manifold of SPD matrices.  Under the
log-Euclidean framework all tangent spaces are identified with the tangent
space at the identity, so projecting a matrix into the common tangent space
is simply the matrix logarithm and parallel transport between base points is
the identity map on log-matrices.

All numerics are float64; eigendecompositions always go through the
self-adjoint solver (``numpy.linalg.eigh``), never a general nonsymmetric
routine.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, NonFinite, NotPositiveDefinite

DEFAULT_VALIDATE_EPS = 1e-10
DEFAULT_NEAREST_FLOOR = 1e-8

_SQRT2 = np.sqrt(2.0)


def symmetrize(m: np.ndarray) -> np.ndarray:
    """Return (m + m.T) / 2 as float64.

    The averaged form is exactly symmetric in IEEE arithmetic because
    addition commutes and halving is exact.
    """
    m = np.asarray(m, dtype=np.float64)
    return 0.5 * (m + m.T)


def require_sym(m: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Validate a symmetric matrix: square, dim >= 2, finite, exactly symmetric."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {m.shape}")
    if m.shape[0] < 2:
        raise DimensionMismatch(f"{name} must have dimension >= 2, got {m.shape[0]}")
    if not np.isfinite(m).all():
        raise NonFinite(f"{name} contains non-finite entries")
    if not np.array_equal(m, m.T):
        raise DimensionMismatch(f"{name} is not symmetric; use symmetrize() first")
    return m


@dataclass(frozen=True)
class SpdMatrix:
    """A validated symmetric positive-definite matrix.

    Construct through :func:`validate_spd` or :func:`nearest_spd`; the
    constructor itself re-checks nothing beyond dtype.
    """

    values: np.ndarray
    min_eigenvalue: float

    @property
    def dim(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class TangentVector:
    """A symmetric matrix in the common tangent space at the identity.

    Carries both the matrix form and its upper-triangular vectorization
    (row-major, diagonal included, off-diagonal entries scaled by sqrt(2) so
    Euclidean inner products of vectors equal Frobenius inner products of
    matrices).  Both representations are stored at construction, which makes
    the matrix -> vector -> matrix round trip exact.
    """

    matrix: np.ndarray
    vectorized: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.vectorized is None:
            object.__setattr__(self, "vectorized", sym_to_vec(self.matrix))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def sym_to_vec(m: np.ndarray) -> np.ndarray:
    """Vectorize a symmetric matrix: upper triangle row-major, off-diagonal * sqrt(2)."""
    m = np.asarray(m, dtype=np.float64)
    d = m.shape[0]
    iu, ju = np.triu_indices(d)
    coeff = np.where(iu == ju, 1.0, _SQRT2)
    return coeff * m[iu, ju]


def vec_to_sym(v: np.ndarray) -> np.ndarray:
    """Invert :func:`sym_to_vec`.

    Off-diagonal entries are divided by sqrt(2), so the reconstruction can
    differ from the original matrix by one ulp; use the stored
    ``TangentVector.matrix`` when exactness matters.
    """
    v = np.asarray(v, dtype=np.float64)
    d = int(round((np.sqrt(1 + 8 * v.size) - 1) / 2))
    if d * (d + 1) // 2 != v.size:
        raise DimensionMismatch(f"vector length {v.size} is not d(d+1)/2 for any d")
    iu, ju = np.triu_indices(d)
    m = np.zeros((d, d))
    m[iu, ju] = np.where(iu == ju, v, v / _SQRT2)
    m[ju, iu] = m[iu, ju]
    return m


def validate_spd(m: np.ndarray, eps: float = DEFAULT_VALIDATE_EPS) -> SpdMatrix:
    """Check positive-definiteness and return a validated :class:`SpdMatrix`.

    Parameters
    ----------
    m : ndarray, shape (d, d)
        Symmetric candidate matrix.
    eps : float
        Acceptance threshold; the minimum eigenvalue must exceed it.

    Raises
    ------
    NotPositiveDefinite
        If the minimum eigenvalue is <= eps (the offending value is carried
        on the exception).
    NonFinite
        If the input has NaN or infinite entries.
    """
    m = require_sym(m)
    if eps <= 0:
        raise ValueError("eps must be positive")
    eigvals = np.linalg.eigvalsh(m)
    min_eig = float(eigvals[0])
    if min_eig <= eps:
        raise NotPositiveDefinite(min_eig, eps)
    return SpdMatrix(values=m, min_eigenvalue=min_eig)


def nearest_spd(m: np.ndarray, floor: float = DEFAULT_NEAREST_FLOOR) -> SpdMatrix:
    """Project a symmetric matrix onto the SPD cone by eigenvalue clamping.

    Eigendecomposes, clamps eigenvalues to >= floor and reconstructs.  The
    result passes :func:`validate_spd` with eps = floor / 2 and the map is a
    projection: applying it twice equals applying it once (up to rounding).
    """
    m = require_sym(m)
    if floor <= 0:
        raise ValueError("floor must be positive")
    eigvals, eigvecs = np.linalg.eigh(m)
    if eigvals[0] >= floor:
        return SpdMatrix(values=m, min_eigenvalue=float(eigvals[0]))
    clamped = np.maximum(eigvals, floor)
    out = symmetrize(eigvecs @ np.diag(clamped) @ eigvecs.T)
    return SpdMatrix(values=out, min_eigenvalue=float(np.linalg.eigvalsh(out)[0]))


def matrix_log(s: SpdMatrix) -> np.ndarray:
    """Matrix logarithm of an SPD matrix via its eigendecomposition."""
    eigvals, eigvecs = np.linalg.eigh(s.values)
    if eigvals[0] <= 0:
        raise NotPositiveDefinite(float(eigvals[0]), 0.0)
    return symmetrize((eigvecs * np.log(eigvals)) @ eigvecs.T)


def matrix_exp(t: np.ndarray) -> SpdMatrix:
    """Matrix exponential of a symmetric matrix; the result is SPD."""
    t = require_sym(t)
    eigvals, eigvecs = np.linalg.eigh(t)
    out = symmetrize((eigvecs * np.exp(eigvals)) @ eigvecs.T)
    return SpdMatrix(values=out, min_eigenvalue=float(np.exp(eigvals[0])))


def log_map(s: SpdMatrix) -> TangentVector:
    """Project an SPD matrix into the common tangent space at the identity.

    Under the log-Euclidean framework the projection is the matrix log and
    transport to the shared tangent space is the identity map.
    """
    return TangentVector(matrix=matrix_log(s))


def _check_dims(a: SpdMatrix, b: SpdMatrix) -> None:
    if a.dim != b.dim:
        raise DimensionMismatch(f"dimension mismatch: {a.dim} vs {b.dim}")


def dist_lerm(a: SpdMatrix, b: SpdMatrix) -> float:
    """Log-Euclidean dissimilarity: the SQUARED Frobenius norm of log(a) - log(b).

    The squared form is the quantity used throughout the pipeline; it is not
    a metric (the triangle inequality fails), see :func:`dist_lerm_root` for
    the actual geodesic distance.
    """
    _check_dims(a, b)
    diff = matrix_log(a) - matrix_log(b)
    return float(np.sum(diff * diff))


def dist_lerm_root(a: SpdMatrix, b: SpdMatrix) -> float:
    """Unsquared log-Euclidean distance; satisfies the metric axioms."""
    return float(np.sqrt(dist_lerm(a, b)))


def dist_airm(a: SpdMatrix, b: SpdMatrix) -> float:
    """Affine-invariant distance: sqrt(sum log^2 lambda_i) over eigenvalues of a^-1 b.

    Computed through the symmetric form a^{-1/2} b a^{-1/2} so only
    self-adjoint solvers are involved.  Invariant under congruence by any
    invertible matrix and symmetric in its arguments.
    """
    _check_dims(a, b)
    eigvals_a, eigvecs_a = np.linalg.eigh(a.values)
    if eigvals_a[0] <= 0:
        raise NotPositiveDefinite(float(eigvals_a[0]), 0.0)
    inv_sqrt = (eigvecs_a / np.sqrt(eigvals_a)) @ eigvecs_a.T
    middle = symmetrize(inv_sqrt @ b.values @ inv_sqrt)
    lam = np.linalg.eigvalsh(middle)
    if lam[0] <= 0:
        raise NotPositiveDefinite(float(lam[0]), 0.0)
    return float(np.sqrt(np.sum(np.log(lam) ** 2)))


def dist_skldm(a: SpdMatrix, b: SpdMatrix) -> float:
    """Symmetrized Kullback-Leibler dissimilarity between SPD matrices.

    With kl(P, Q) = trace(P (log P - log Q)) and M the arithmetic average of
    the two inputs, returns (kl(a, M) + kl(b, M)) / 2.  Symmetric by
    construction and zero iff the inputs coincide.
    """
    _check_dims(a, b)
    mid = validate_spd(symmetrize(0.5 * (a.values + b.values)), eps=np.finfo(np.float64).tiny)
    log_mid = matrix_log(mid)

    def kl(p: SpdMatrix) -> float:
        return float(np.trace(p.values @ (matrix_log(p) - log_mid)))

    return 0.5 * (kl(a) + kl(b))
