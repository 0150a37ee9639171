"""Degree matrices, symmetric normalized Laplacians, and eigendecomposition."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

SYM_TOL = 1e-8


class EigengapWarning(UserWarning):
    """A spectral cut falls inside a (near-)degenerate eigenvalue cluster."""


@dataclass(frozen=True)
class NormalizedLaplacian:
    """L = I - C^{-1/2} W C^{-1/2} with C the diagonal degree matrix of W."""

    matrix: np.ndarray
    degrees: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class EigenBasis:
    """Full symmetric eigendecomposition, eigenvalues ascending, sign-fixed columns."""

    values: np.ndarray
    vectors: np.ndarray


def degree_matrix(w: np.ndarray) -> np.ndarray:
    """Node degrees (row sums) of a symmetric nonnegative weight matrix."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError(f"weight matrix must be square, got {w.shape}")
    if not np.allclose(w, w.T, atol=SYM_TOL):
        raise ValueError("weight matrix is not symmetric")
    if w.min() < -SYM_TOL:
        raise ValueError(f"weight matrix has negative entries (min {w.min():.3g})")
    deg = w.sum(axis=1)
    bad = np.nonzero(deg <= 0.0)[0]
    if len(bad):
        raise ValueError(f"node {bad[0]} has non-positive degree {deg[bad[0]]:.3g}")
    return deg


def normalized_laplacian(w: np.ndarray) -> NormalizedLaplacian:
    """Symmetric normalized Laplacian of a weight matrix.

    Invariant under global positive rescaling of W; eigenvalues lie in [0, 2];
    the degree-weighted constant vector C^{1/2} 1 is a null vector.
    """
    w = np.asarray(w, dtype=np.float64)
    deg = degree_matrix(w)
    inv_sqrt = 1.0 / np.sqrt(deg)
    lap = -(inv_sqrt[:, None] * w * inv_sqrt[None, :])
    lap[np.diag_indices_from(lap)] += 1.0
    lap = (lap + lap.T) / 2.0
    return NormalizedLaplacian(matrix=lap, degrees=deg)


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Make each column's largest-magnitude entry positive (ties: lowest index)."""
    lead = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[lead, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs[None, :]


def symmetric_eigen(m: np.ndarray, check: bool = True) -> EigenBasis:
    """Full eigendecomposition of a symmetric matrix, ascending eigenvalues.

    Eigenvector signs are fixed deterministically so downstream permutation
    statistics reproduce across runs and platforms.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"matrix must be square, got {m.shape}")
    if check and not np.allclose(m, m.T, atol=SYM_TOL):
        raise ValueError("matrix is not symmetric")
    values, vectors = np.linalg.eigh((m + m.T) / 2.0)
    return EigenBasis(values=values, vectors=_fix_signs(vectors))


def eigengap_check(values: np.ndarray, k: int, tol: float = 1e-8) -> None:
    """Warn when cutting the spectrum at k splits a degenerate eigenvalue cluster."""
    if 0 < k < len(values) and abs(values[k] - values[k - 1]) < tol:
        warnings.warn(
            f"eigenvalue gap at K={k} is below {tol:g}; the projector is not "
            "basis-invariant across the tied eigenspace",
            EigengapWarning,
            stacklevel=3,
        )
