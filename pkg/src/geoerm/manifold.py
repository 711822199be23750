"""Stiefel manifold St(p, r) primitives.

St(p, r) is the set of p x r real matrices with orthonormal columns.
This module provides the geometry used everywhere else: symmetrization,
tangent-space projection, the polar retraction (Gram route and SVD route),
metric projection onto the manifold, random points, and dimension
accounting.  All functions are pure; the only stateful object is the
caller-owned RNG.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateMatrixError,
    DimensionError,
    NotPositiveDefiniteError,
)

# Orthonormality is enforced at construction and after every retraction.
ORTHONORMALITY_TOL = 1e-8
# Tangency of a TangentVector, as a Frobenius bound on sym(A^T H).
TANGENCY_TOL = 1e-8
# Singular values below this are treated as rank deficiency.
RANK_TOL = 1e-12


def _as_matrix(x) -> np.ndarray:
    """Accept a StiefelPoint, TangentVector or bare array; return the array."""
    m = getattr(x, "matrix", x)
    return np.asarray(m, dtype=float)


@dataclass(frozen=True, eq=False)
class StiefelPoint:
    """A point on St(p, r): a p x r matrix with orthonormal columns.

    The orthonormality defect ||A^T A - I||_F must not exceed
    ORTHONORMALITY_TOL; construction fails otherwise.
    """

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2:
            raise DimensionError(f"expected a 2-d matrix, got ndim={m.ndim}")
        p, r = m.shape
        if p < 1 or r < 1:
            raise DimensionError(f"need p, r >= 1, got ({p}, {r})")
        if r > p:
            raise DimensionError(f"need r <= p, got ({p}, {r})")
        defect = np.linalg.norm(m.T @ m - np.eye(r))
        if not defect <= ORTHONORMALITY_TOL:
            raise ValueError(
                f"columns not orthonormal: ||A^T A - I||_F = {defect:.3e}"
            )
        object.__setattr__(self, "matrix", m)

    @property
    def p(self) -> int:
        return self.matrix.shape[0]

    @property
    def r(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True, eq=False)
class TangentVector:
    """An element of the tangent space at ``base``.

    Tangency means A^T H + H^T A = 0, i.e. sym(A^T H) = 0.
    """

    base: StiefelPoint
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != self.base.matrix.shape:
            raise DimensionError(
                f"tangent shape {m.shape} != base shape {self.base.matrix.shape}"
            )
        defect = np.linalg.norm(sym(self.base.matrix.T @ m))
        scale = max(1.0, float(np.linalg.norm(m)))
        if not defect <= TANGENCY_TOL * scale:
            raise ValueError(
                f"not tangent at base: ||sym(A^T H)||_F = {defect:.3e}"
            )
        object.__setattr__(self, "matrix", m)


def sym(x: np.ndarray) -> np.ndarray:
    """Symmetric part (X + X^T) / 2 of a square matrix."""
    m = _as_matrix(x)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"sym needs a square matrix, got shape {m.shape}")
    return (m + m.T) / 2.0


def project_tangent(A: StiefelPoint, G) -> TangentVector:
    """Orthogonal projection of an ambient p x r matrix onto the tangent space.

    Returns G - A sym(A^T G).  The removed part A sym(A^T G) is the normal
    component, so the output satisfies the tangency condition exactly up to
    rounding.
    """
    Am = A.matrix
    Gm = _as_matrix(G)
    if Gm.shape != Am.shape:
        raise DimensionError(f"shape mismatch: {Gm.shape} vs {Am.shape}")
    return TangentVector(base=A, matrix=project_tangent_matrix(Am, Gm))


def project_tangent_matrix(Am: np.ndarray, Gm: np.ndarray) -> np.ndarray:
    """Array-level tangent projection (no wrapping, no validation)."""
    return Gm - Am @ sym(Am.T @ Gm)


def inv_sqrt_spd(M) -> np.ndarray:
    """Inverse matrix square root of a symmetric positive definite matrix.

    Computed from the symmetric eigendecomposition; eigenvalues must exceed
    RANK_TOL.
    """
    m = sym(M)  # also validates squareness
    w, V = np.linalg.eigh(m)
    if w.min() <= RANK_TOL:
        raise NotPositiveDefiniteError(
            f"matrix not positive definite: min eigenvalue {w.min():.3e}"
        )
    out = (V * (1.0 / np.sqrt(w))) @ V.T
    return sym(out)


def retract_gram_matrix(Am: np.ndarray, Hm: np.ndarray) -> np.ndarray:
    """(A + H)(I + H^T H)^{-1/2}, defined for any p x r step H (the Gram
    matrix always has eigenvalues >= 1)."""
    gram = np.eye(Am.shape[1]) + Hm.T @ Hm
    return (Am + Hm) @ inv_sqrt_spd(gram)


def polar_retract(A: StiefelPoint, H) -> StiefelPoint:
    """Polar retraction (A + H)(I + H^T H)^{-1/2}.

    H is normally a tangent vector (debug-asserted); use
    retract_gram_matrix directly for arbitrary steps.
    """
    Am = A.matrix
    Hm = _as_matrix(H)
    if Hm.shape != Am.shape:
        raise DimensionError(f"shape mismatch: {Hm.shape} vs {Am.shape}")
    assert is_tangent(A, Hm, tol=1e-6 * max(1.0, float(np.linalg.norm(Hm))))
    return StiefelPoint(retract_gram_matrix(Am, Hm))


def polar_retract_svd(A: StiefelPoint, H) -> StiefelPoint:
    """SVD route of the polar retraction: the UW^T factor of A + H.

    Independent of polar_retract; used as its oracle.  Raises if A + H is
    numerically rank deficient.
    """
    Am = A.matrix
    Hm = _as_matrix(H)
    if Hm.shape != Am.shape:
        raise DimensionError(f"shape mismatch: {Hm.shape} vs {Am.shape}")
    return nearest_orthonormal(Am + Hm)


def nearest_orthonormal(M) -> StiefelPoint:
    """Metric (Frobenius-nearest) projection of a full-column-rank matrix
    onto St(p, r), i.e. the orthonormal polar factor UW^T of its thin SVD."""
    m = _as_matrix(M)
    if m.ndim != 2:
        raise DimensionError(f"expected a matrix, got ndim={m.ndim}")
    U, s, Wt = np.linalg.svd(m, full_matrices=False)
    if s.min() < RANK_TOL:
        raise DegenerateMatrixError(
            f"rank-deficient input: min singular value {s.min():.3e}"
        )
    return StiefelPoint(U @ Wt)


def qr_orthonormalize(M) -> np.ndarray:
    """Thin-QR orthonormalization with the sign convention that R has a
    positive diagonal (makes the result unique and deterministic)."""
    m = _as_matrix(M)
    Q, R = np.linalg.qr(m)
    d = np.diagonal(R).copy()
    if np.min(np.abs(d)) < RANK_TOL:
        raise DegenerateMatrixError(
            f"rank-deficient input: |R_ii| min = {np.min(np.abs(d)):.3e}"
        )
    signs = np.where(d < 0.0, -1.0, 1.0)
    return Q * signs


def random_stiefel(p: int, r: int, rng: np.random.Generator) -> StiefelPoint:
    """Uniform-ish random point: QR of a p x r standard Gaussian draw,
    sign-fixed so the same seed gives a bit-identical result."""
    if r > p:
        raise DimensionError(f"need r <= p, got ({p}, {r})")
    g = rng.standard_normal((p, r))
    return StiefelPoint(qr_orthonormalize(g))


def manifold_dim(p: int, r: int) -> int:
    """Dimension of St(p, r): p*r - r*(r+1)/2."""
    if r > p or p < 1 or r < 1:
        raise DimensionError(f"need 1 <= r <= p, got ({p}, {r})")
    return p * r - r * (r + 1) // 2


def is_tangent(A: StiefelPoint, H, tol: float = TANGENCY_TOL) -> bool:
    """True iff ||A^T H + H^T A||_F <= tol."""
    Am = _as_matrix(A)
    Hm = _as_matrix(H)
    if Hm.shape != Am.shape:
        raise DimensionError(f"shape mismatch: {Hm.shape} vs {Am.shape}")
    return bool(np.linalg.norm(Am.T @ Hm + Hm.T @ Am) <= tol)
