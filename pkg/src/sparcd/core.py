"""Spectral differencing: projectors, filtered operators, region scores, K selection.

Pipeline for a pair of connectivity matrices (Wx, Wy):

1. Build the normalized Laplacians Lx, Ly and their eigenbases.
2. For a filtering rank K, project each condition's operator onto the
   orthogonal complement of the *other* condition's K leading (smallest
   eigenvalue) eigenvectors, removing shared dominant structure.
3. The difference of the filtered operators localizes connectivity change;
   its leading eigenvector yields nonnegative unit-sum region scores.
4. K is either fixed or chosen data-driven as the rank maximizing the score
   imbalance eta(K) = ||scores||_2.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .graphspec import (
    EigenBasis,
    NormalizedLaplacian,
    eigengap_check,
    normalized_laplacian,
    symmetric_eigen,
    _fix_signs,
)

DEGENERATE_FROBENIUS = 1e-8
K_RANGE_CAP = 80


class DegenerateDifferenceWarning(UserWarning):
    """The differential operator is numerically zero; scores are uniform."""


@dataclass(frozen=True)
class KMode:
    """Filtering-rank policy: a fixed K or a data-driven argmax over a range."""

    kind: str  # 'fixed' | 'auto'
    k: int | None = None
    lo: int | None = None
    hi: int | None = None

    @classmethod
    def fixed(cls, k: int) -> "KMode":
        return cls(kind="fixed", k=int(k))

    @classmethod
    def auto(cls, lo: int = 2, hi: int | None = None) -> "KMode":
        return cls(kind="auto", lo=int(lo), hi=None if hi is None else int(hi))

    @classmethod
    def parse(cls, text: str) -> "KMode":
        """Parse 'fixed:N' or 'auto:LO..HI' (or bare 'auto')."""
        if text == "auto":
            return cls.auto()
        kind, _, rest = text.partition(":")
        if kind == "fixed" and rest.isdigit():
            return cls.fixed(int(rest))
        if kind == "auto":
            lo, sep, hi = rest.partition("..")
            if sep and lo.isdigit() and hi.isdigit():
                return cls.auto(int(lo), int(hi))
        raise ValueError(f"cannot parse K mode {text!r} (expected fixed:N or auto:LO..HI)")

    def describe(self) -> str:
        if self.kind == "fixed":
            return f"fixed:{self.k}"
        hi = "max" if self.hi is None else str(self.hi)
        return f"auto:{self.lo}..{hi}"

    def resolve_range(self, n_regions: int) -> tuple[int, int]:
        cap = min(K_RANGE_CAP, n_regions - 1)
        hi = cap if self.hi is None else self.hi
        lo = self.lo
        if not (2 <= lo <= hi <= cap):
            raise ValueError(
                f"data-driven K range [{lo}, {hi}] must satisfy "
                f"2 <= lo <= hi <= min({K_RANGE_CAP}, R-1) = {cap}"
            )
        return lo, hi

    def validate_fixed(self, n_regions: int) -> int:
        if not (1 <= self.k < n_regions):
            raise ValueError(f"fixed K={self.k} out of range [1, {n_regions - 1}]")
        return self.k


@dataclass(frozen=True)
class SpectralProjector:
    """Projector onto the complement of the K leading Laplacian eigenvectors."""

    matrix: np.ndarray
    k: int


@dataclass(frozen=True)
class SpectralDiffResult:
    k_used: int
    filtered_x: np.ndarray
    filtered_y: np.ndarray
    diff_op: np.ndarray
    lead_vector: np.ndarray
    lead_value: float
    scores: np.ndarray
    eta: float
    degenerate: bool = False
    eta_curve: np.ndarray | None = None
    k_range: tuple[int, int] | None = None


def projector(basis: EigenBasis, k: int) -> SpectralProjector:
    """Q = I - sum_{j<=K} v_j v_j^T over the K smallest-eigenvalue eigenvectors."""
    r = basis.vectors.shape[0]
    if not (1 <= k < r):
        raise ValueError(f"K={k} out of range [1, {r - 1}]")
    eigengap_check(basis.values, k)
    vk = basis.vectors[:, :k]
    q = -vk @ vk.T
    q[np.diag_indices_from(q)] += 1.0
    return SpectralProjector(matrix=(q + q.T) / 2.0, k=k)


def filtered_operator(proj: SpectralProjector, lap) -> np.ndarray:
    """Q (I - L) Q: the other condition's operator with shared structure removed."""
    q = proj.matrix
    lm = lap.matrix if isinstance(lap, NormalizedLaplacian) else np.asarray(lap)
    if q.shape != lm.shape:
        raise ValueError(f"dimension mismatch: projector {q.shape}, operator {lm.shape}")
    m = -lm.copy()
    m[np.diag_indices_from(m)] += 1.0
    out = q @ m @ q
    return (out + out.T) / 2.0


def differential_operator(filtered_y: np.ndarray, filtered_x: np.ndarray) -> np.ndarray:
    """Elementwise difference of the two filtered operators (Y minus X)."""
    fy = np.asarray(filtered_y, dtype=np.float64)
    fx = np.asarray(filtered_x, dtype=np.float64)
    if fy.shape != fx.shape:
        raise ValueError(f"shape mismatch: {fy.shape} vs {fx.shape}")
    d = fy - fx
    return (d + d.T) / 2.0


def leading_eigvec(diff_op: np.ndarray, mode: str = "abs") -> tuple[np.ndarray, float]:
    """Leading eigenvector of the differential operator.

    mode 'abs' (default) takes the eigenvalue of largest absolute value: the
    operator is symmetric but indefinite and large deviations of either sign
    mark differing directions. mode 'signed' takes the algebraically largest,
    for sensitivity checks. A zero matrix yields (e_1, 0).
    """
    m = np.asarray(diff_op, dtype=np.float64)
    r = m.shape[0]
    if not m.any():
        v = np.zeros(r)
        v[0] = 1.0
        return v, 0.0
    values, vectors = np.linalg.eigh((m + m.T) / 2.0)
    if mode == "abs":
        idx = int(np.argmax(np.abs(values)))
        taken = np.sort(np.abs(values))
        if taken[-1] - taken[-2] < 1e-8:
            warnings.warn(
                "leading eigenvalue of the differential operator is nearly tied; "
                "the score vector is not stable",
                DegenerateDifferenceWarning,
                stacklevel=2,
            )
    elif mode == "signed":
        idx = r - 1
    else:
        raise ValueError(f"unknown leading mode {mode!r}")
    v = _fix_signs(vectors[:, idx:idx + 1])[:, 0]
    return v, float(values[idx])


def region_scores(lead_vector: np.ndarray) -> np.ndarray:
    """Unit-sum nonnegative scores s(r) = |v(r)| / ||v||_1."""
    v = np.abs(np.asarray(lead_vector, dtype=np.float64))
    total = v.sum()
    if total == 0.0:
        raise ValueError("zero vector has no scores")
    return v / total


class _FilteredPair:
    """Incrementally maintained filtered operators over an increasing K sweep.

    Increasing K by one is a rank-two update of each Q M Q (two matvecs plus
    outer products), so a full K range costs two dense triple products total.
    """

    def __init__(self, basis_x: EigenBasis, basis_y: EigenBasis,
                 lap_x: np.ndarray, lap_y: np.ndarray, k0: int):
        r = lap_x.shape[0]
        eye = np.eye(r)
        self.mx = eye - lap_x
        self.my = eye - lap_y
        self.vx = basis_x.vectors
        self.vy = basis_y.vectors
        self.k = k0
        self.qx = eye - self.vx[:, :k0] @ self.vx[:, :k0].T
        self.qy = eye - self.vy[:, :k0] @ self.vy[:, :k0].T
        self.ay = self.qx @ self.my @ self.qx   # filtered Y
        self.ax = self.qy @ self.mx @ self.qy   # filtered X

    def advance(self) -> None:
        """Move from rank K to K+1."""
        vx = self.vx[:, self.k]
        vy = self.vy[:, self.k]
        for (a, q, m, v) in ((self.ay, self.qx, self.my, vx),
                             (self.ax, self.qy, self.mx, vy)):
            t = m @ v
            u = q @ t
            c = float(v @ t)
            a -= np.outer(v, u) + np.outer(u, v)
            a += c * np.outer(v, v)
            q -= np.outer(v, v)
        self.k += 1

    def diff(self) -> np.ndarray:
        d = self.ay - self.ax
        return (d + d.T) / 2.0


def _score_pack(diff: np.ndarray, leading: str, quiet: bool = True):
    fro = float(np.linalg.norm(diff))
    r = diff.shape[0]
    if fro < DEGENERATE_FROBENIUS:
        scores = np.full(r, 1.0 / r)
        vec = np.full(r, 1.0 / np.sqrt(r))
        return scores, vec, 0.0, float(np.linalg.norm(scores)), True
    if quiet:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateDifferenceWarning)
            vec, lam = leading_eigvec(diff, mode=leading)
    else:
        vec, lam = leading_eigvec(diff, mode=leading)
    scores = region_scores(vec)
    return scores, vec, lam, float(np.linalg.norm(scores)), False


def _sweep(basis_x, basis_y, lap_x, lap_y, lo: int, hi: int, leading: str):
    """Evaluate eta(K) for K in [lo, hi]; returns (etas, scores per K)."""
    pair = _FilteredPair(basis_x, basis_y, lap_x, lap_y, lo)
    etas = np.empty(hi - lo + 1)
    all_scores = []
    for i, k in enumerate(range(lo, hi + 1)):
        scores, _, _, eta, _ = _score_pack(pair.diff(), leading)
        etas[i] = eta
        all_scores.append(scores)
        if k < hi:
            pair.advance()
    return etas, all_scores


def select_k(w_x: np.ndarray, w_y: np.ndarray, lo: int = 2, hi: int | None = None,
             leading: str = "abs") -> tuple[int, np.ndarray]:
    """Data-driven filtering rank: K* = argmax_K eta(K), ties to the smallest K.

    Returns (K*, eta curve over the whole range). eta(K) is the L2 norm of
    the unit-L1 score vector, a measure of score imbalance, and lies in
    [1/sqrt(R), 1].
    """
    r = w_x.shape[0]
    lo, hi = KMode.auto(lo, hi).resolve_range(r)
    lap_x = normalized_laplacian(w_x)
    lap_y = normalized_laplacian(w_y)
    basis_x = symmetric_eigen(lap_x.matrix, check=False)
    basis_y = symmetric_eigen(lap_y.matrix, check=False)
    etas, _ = _sweep(basis_x, basis_y, lap_x.matrix, lap_y.matrix, lo, hi, leading)
    return lo + int(np.argmax(etas)), etas


def run_sparcd(w_x: np.ndarray, w_y: np.ndarray, k_mode: KMode,
               leading: str = "abs") -> SpectralDiffResult:
    """Full spectral differencing of two connectivity matrices.

    Resolves K per ``k_mode`` (both filtered operators always share one K),
    then computes the differential operator, its leading eigenvector, and the
    region scores. A numerically zero differential operator yields uniform
    scores with ``degenerate=True`` rather than failing, so permutation
    inference stays well-defined.
    """
    w_x = np.asarray(w_x, dtype=np.float64)
    w_y = np.asarray(w_y, dtype=np.float64)
    if w_x.shape != w_y.shape:
        raise ValueError(f"weight matrices differ in shape: {w_x.shape} vs {w_y.shape}")
    r = w_x.shape[0]
    lap_x = normalized_laplacian(w_x)
    lap_y = normalized_laplacian(w_y)
    basis_x = symmetric_eigen(lap_x.matrix, check=False)
    basis_y = symmetric_eigen(lap_y.matrix, check=False)

    if k_mode.kind == "fixed":
        k = k_mode.validate_fixed(r)
        etas = None
        k_range = None
    else:
        lo, hi = k_mode.resolve_range(r)
        etas, _ = _sweep(basis_x, basis_y, lap_x.matrix, lap_y.matrix, lo, hi, leading)
        k = lo + int(np.argmax(etas))
        k_range = (lo, hi)

    eigengap_check(basis_x.values, k)
    eigengap_check(basis_y.values, k)
    pair = _FilteredPair(basis_x, basis_y, lap_x.matrix, lap_y.matrix, k)
    diff = pair.diff()
    filtered_y, filtered_x = pair.ay, pair.ax
    scores, vec, lam, eta, degen = _score_pack(diff, leading, quiet=False)

    if degen:
        warnings.warn(
            "differential operator is numerically zero; returning uniform scores",
            DegenerateDifferenceWarning,
            stacklevel=2,
        )
    return SpectralDiffResult(
        k_used=k,
        filtered_x=filtered_x,
        filtered_y=filtered_y,
        diff_op=diff,
        lead_vector=vec,
        lead_value=lam,
        scores=scores,
        eta=eta,
        degenerate=degen,
        eta_curve=etas,
        k_range=k_range,
    )
