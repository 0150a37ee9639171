"""Sample distance correlation and connectivity weight matrices.

The estimator for two signal matrices with matching first dimension is

    dcor(X, Y) = <Dx~, Dy~> / sqrt(<Dx~, Dx~> <Dy~, Dy~>)

where D~ = H D H are the doubly centered Euclidean distance matrices and
H = I - 11^T/n. The value lies in [0, 1] and is zero (in population) only
under independence; it is invariant to rotation, scaling and translation of
either input and captures nonlinear association.

Connectivity between two regions of a condition tensor is, by default, the
per-subject distance correlation of the two time series (T scalar samples),
averaged across subjects. A ``pooled`` mode treating subjects as the sample
dimension (one dcor on the n x T matrices per pair) is also available.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import blas as _blas

DEFAULT_CACHE_BYTES = 1 << 30


class DegenerateSeriesError(ValueError):
    """A self inner product <D~, D~> is zero, so dcor is undefined."""


def pairwise_euclidean(x: np.ndarray) -> np.ndarray:
    """Euclidean distances between the rows of ``x`` (shape n x T) as an n x n matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise ValueError(f"need at least 2 rows, got {x.shape[0]}")
    if not np.isfinite(x).all():
        raise ValueError("input contains non-finite values")
    sq = np.einsum("ij,ij->i", x, x)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    d = np.sqrt(d2)
    np.fill_diagonal(d, 0.0)
    return (d + d.T) / 2.0


def double_center(d: np.ndarray) -> np.ndarray:
    """Apply the centering operator on both sides: H d H, H = I - 11^T/n."""
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {d.shape}")
    if not np.allclose(d, d.T, atol=1e-9):
        raise ValueError("distance matrix is not symmetric")
    row = d.mean(axis=1, keepdims=True)
    col = d.mean(axis=0, keepdims=True)
    grand = d.mean()
    return d - row - col + grand


def dcor(x: np.ndarray, y: np.ndarray) -> float:
    """Sample distance correlation between two signal matrices with equal row counts."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    nx = x.shape[0]
    if nx != y.shape[0]:
        raise ValueError(f"row counts differ: {nx} vs {y.shape[0]}")
    cx = double_center(pairwise_euclidean(x))
    cy = double_center(pairwise_euclidean(y))
    den_x = float(np.vdot(cx, cx))
    den_y = float(np.vdot(cy, cy))
    if den_x <= 0.0 or den_y <= 0.0:
        raise DegenerateSeriesError(
            "degenerate input: all rows identical, <D~, D~> = 0"
        )
    num = max(float(np.vdot(cx, cy)), 0.0)
    return min(num / np.sqrt(den_x * den_y), 1.0)


def _syrk(f: np.ndarray) -> np.ndarray:
    """f @ f.T for a C-contiguous (R, M) array via BLAS syrk (half the GEMM work)."""
    fn = _blas.ssyrk if f.dtype == np.float32 else _blas.dsyrk
    # f.T is Fortran-ordered, so no copy is made; trans=1 yields (f.T).T @ f.T = f @ f.T
    s = fn(1.0, f.T, trans=1, lower=0)
    return s + np.triu(s, 1).T


def record_dcor_matrix(record: np.ndarray, dtype=np.float64) -> np.ndarray:
    """All pairwise distance correlations between the rows of one (R, T) record.

    Treats the T columns as scalar samples. Uses the centering-free identity
    <HAH, HBH> = <A, B> - (2/T) a^T b + (sum A)(sum B)/T^2 with a, b the row
    sums, so only one (R, T^2) syrk is needed.
    """
    rec = np.ascontiguousarray(record, dtype=dtype)
    r, t = rec.shape
    d = np.abs(rec[:, :, None] - rec[:, None, :])
    s = _syrk(d.reshape(r, t * t))
    a = d.sum(axis=2)
    ata = a @ a.T
    g = a.sum(axis=1)
    num = s - (2.0 / t) * ata + np.outer(g, g) / (t * t)
    den = np.diag(num).copy()
    bad = np.nonzero(den <= 0.0)[0]
    if len(bad):
        raise DegenerateSeriesError(
            f"degenerate regions (constant series): {bad[:8].tolist()}"
        )
    w = np.clip(num, 0.0, None) / np.sqrt(np.outer(den, den))
    np.clip(w, 0.0, 1.0, out=w)
    return (w + w.T) / 2.0


def mean_record_dcor(records: np.ndarray, dtype=np.float64) -> np.ndarray:
    """Mean of per-record dcor matrices over the leading axis of (n, R, T) data."""
    n = records.shape[0]
    w = np.zeros((records.shape[1], records.shape[1]), dtype=np.float64)
    for i in range(n):
        w += record_dcor_matrix(records[i], dtype=dtype)
    return w / n


def _pooled_connectivity(data: np.ndarray, cache_bytes: int) -> np.ndarray:
    """One dcor per region pair on the (n, T) matrices, subjects as rows."""
    n, r, t = data.shape
    per_region = n * n * 8
    chunk = max(1, min(r, int(cache_bytes // max(per_region, 1)) or 1))

    def centered_chunk(lo, hi):
        x = np.ascontiguousarray(np.transpose(data[:, lo:hi, :], (1, 0, 2)))
        sq = np.einsum("rnt,rnt->rn", x, x)
        d2 = sq[:, :, None] + sq[:, None, :] - 2.0 * np.matmul(x, np.transpose(x, (0, 2, 1)))
        np.maximum(d2, 0.0, out=d2)
        d = np.sqrt(d2)
        d = (d + np.transpose(d, (0, 2, 1))) / 2.0
        d[:, np.arange(n), np.arange(n)] = 0.0
        d -= d.mean(axis=2, keepdims=True)
        d -= d.mean(axis=1, keepdims=True)
        return d.reshape(hi - lo, n * n)

    bounds = list(range(0, r, chunk)) + [r]
    w = np.empty((r, r))
    for bi in range(len(bounds) - 1):
        fi = centered_chunk(bounds[bi], bounds[bi + 1])
        for bj in range(bi, len(bounds) - 1):
            fj = fi if bj == bi else centered_chunk(bounds[bj], bounds[bj + 1])
            s = fi @ fj.T
            w[bounds[bi]:bounds[bi + 1], bounds[bj]:bounds[bj + 1]] = s
            w[bounds[bj]:bounds[bj + 1], bounds[bi]:bounds[bi + 1]] = s.T
    den = np.diag(w).copy()
    bad = np.nonzero(den <= 0.0)[0]
    if len(bad):
        raise DegenerateSeriesError(f"degenerate regions (identical rows): {bad[:8].tolist()}")
    w = np.clip(w, 0.0, None) / np.sqrt(np.outer(den, den))
    np.clip(w, 0.0, 1.0, out=w)
    return (w + w.T) / 2.0


def connectivity_matrix(
    cond,
    method: str = "subject-mean",
    no_self_loops: bool = False,
    dtype=np.float64,
    cache_bytes: int = DEFAULT_CACHE_BYTES,
) -> np.ndarray:
    """R x R connectivity weight matrix of a condition tensor.

    method 'subject-mean' (default): per-subject dcor over time samples,
    averaged across subjects. method 'pooled': one dcor per pair with
    subjects as the sample dimension. The diagonal is the self-weight 1
    (a region's dcor with itself) unless ``no_self_loops``.
    """
    data = getattr(cond, "data", cond)
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 3:
        raise ValueError(f"expected (n, R, T) data, got shape {data.shape}")
    if method == "subject-mean":
        w = mean_record_dcor(data, dtype=dtype)
    elif method == "pooled":
        w = _pooled_connectivity(data, cache_bytes)
    else:
        raise ValueError(f"unknown connectivity method {method!r}")
    np.fill_diagonal(w, 0.0 if no_self_loops else 1.0)
    return w
