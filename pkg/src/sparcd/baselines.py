"""Comparison methods: univariate correlation (UC) edge tests and seed-based
psychophysiological-interaction (PPI) regression.

UC computes per-subject, per-condition Pearson correlation matrices,
stabilizes them with Fisher's z, and runs a paired t-test across subjects on
the per-edge z differences, BH-corrected over all edges. PPI fits, per
subject and target region, ordinary least squares of the target series on
[1, seed, task, seed*task] over the concatenated conditions and tests the
interaction coefficient across subjects per region.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .inference import bh_adjust

CLAMP = 1.0 - 1e-12


@dataclass(frozen=True)
class UcResult:
    mean_corr_diff: np.ndarray
    edge_rows: np.ndarray
    edge_cols: np.ndarray
    edge_p_raw: np.ndarray
    edge_p_bh: np.ndarray
    edge_rejected: np.ndarray
    significant_edges: tuple
    edge_scores: np.ndarray
    flat_edges: np.ndarray  # edges where every subject's z difference was 0
    n_regions: int

    def region_detected(self) -> np.ndarray:
        """A region counts as detected when any incident edge is significant."""
        hit = np.zeros(self.n_regions, dtype=bool)
        for r, c in self.significant_edges:
            hit[r] = hit[c] = True
        return hit

    def region_scores(self) -> np.ndarray:
        """Max incident edge score per region (region-level ranking)."""
        scores = np.zeros(self.n_regions)
        np.maximum.at(scores, self.edge_rows, self.edge_scores)
        np.maximum.at(scores, self.edge_cols, self.edge_scores)
        return scores


@dataclass(frozen=True)
class PpiResult:
    seed_region: int
    betas: np.ndarray          # n x R interaction coefficients, NaN at the seed
    group_t: np.ndarray
    group_p_raw: np.ndarray
    group_p_bh: np.ndarray
    significant_regions: tuple

    def region_scores(self) -> np.ndarray:
        scores = np.abs(self.group_t)
        return np.where(np.isnan(scores), 0.0, scores)


def fisher_z(r: np.ndarray) -> np.ndarray:
    """atanh with |r| clamped away from 1 to keep the transform finite."""
    return np.arctanh(np.clip(r, -CLAMP, CLAMP))


def _corr_stack(data: np.ndarray) -> np.ndarray:
    """Per-subject Pearson correlation matrices of (n, R, T) data."""
    n, r, t = data.shape
    centered = data - data.mean(axis=2, keepdims=True)
    sd = centered.std(axis=2)
    if (sd == 0.0).any():
        i, j = np.argwhere(sd == 0.0)[0]
        raise ValueError(f"zero-variance series (subject {i}, region {j}); Pearson undefined")
    normed = centered / (sd[:, :, None] * np.sqrt(t))
    return np.matmul(normed, np.transpose(normed, (0, 2, 1)))


def uc_test(x, y, alpha: float = 0.05) -> UcResult:
    """Paired per-edge comparison of Fisher-z correlations between conditions."""
    x = np.asarray(getattr(x, "data", x), dtype=np.float64)
    y = np.asarray(getattr(y, "data", y), dtype=np.float64)
    if x.shape[0] != y.shape[0] or x.shape[1] != y.shape[1]:
        raise ValueError("UC requires paired tensors with matching n and R")
    n, r = x.shape[0], x.shape[1]
    if n < 3:
        raise ValueError("paired t-test needs n >= 3 subjects")
    corr_x = _corr_stack(x)
    corr_y = _corr_stack(y)
    diff_z = fisher_z(corr_y) - fisher_z(corr_x)
    rows, cols = np.triu_indices(r, 1)
    d = diff_z[:, rows, cols]
    mean = d.mean(axis=0)
    sd = d.std(axis=0, ddof=1)
    flat = (d == 0.0).all(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_stat = mean / (sd / np.sqrt(n))
    p = 2.0 * stats.t.sf(np.abs(t_stat), df=n - 1)
    p[np.isnan(p)] = 1.0
    p[flat] = 1.0
    p_bh, rejected = bh_adjust(p, alpha)
    edges = tuple((int(rows[e]), int(cols[e])) for e in np.nonzero(rejected)[0])
    return UcResult(
        mean_corr_diff=(corr_y - corr_x).mean(axis=0),
        edge_rows=rows,
        edge_cols=cols,
        edge_p_raw=p,
        edge_p_bh=p_bh,
        edge_rejected=rejected,
        significant_edges=edges,
        edge_scores=np.abs(mean),
        flat_edges=flat,
        n_regions=r,
    )


def ppi_test(x, y, seed_region: int, alpha: float = 0.05,
             psych: np.ndarray | None = None, center_seed: bool = True) -> PpiResult:
    """Seed-based interaction regression over the concatenated conditions.

    ``psych`` is the task regressor over the concatenated time axis; by
    default it is the raw 0/1 condition indicator (no hemodynamic convolution;
    supply an externally convolved regressor for real acquisitions). The seed
    series is mean-centered per subject before forming the interaction unless
    ``center_seed`` is disabled. The seed region itself is excluded from
    testing and from the multiple-comparison family.
    """
    x = np.asarray(getattr(x, "data", x), dtype=np.float64)
    y = np.asarray(getattr(y, "data", y), dtype=np.float64)
    if x.shape[0] != y.shape[0] or x.shape[1] != y.shape[1]:
        raise ValueError("PPI requires paired tensors with matching n and R")
    n, r = x.shape[0], x.shape[1]
    if not (0 <= seed_region < r):
        raise ValueError(f"seed region {seed_region} out of range [0, {r - 1}]")
    t_total = x.shape[2] + y.shape[2]
    if psych is None:
        psych = np.concatenate([np.zeros(x.shape[2]), np.ones(y.shape[2])])
    psych = np.asarray(psych, dtype=np.float64)
    if psych.shape != (t_total,):
        raise ValueError(f"psych regressor must have length {t_total}, got {psych.shape}")
    if np.ptp(psych) == 0.0:
        raise ValueError("rank-deficient design: psych regressor p(t) is constant")

    series = np.concatenate([x, y], axis=2)  # n x R x (Tx+Ty)
    betas = np.full((n, r), np.nan)
    targets = np.array([j for j in range(r) if j != seed_region])
    for i in range(n):
        s = series[i, seed_region]
        if center_seed:
            s = s - s.mean()
        if np.ptp(s) == 0.0:
            raise ValueError(f"rank-deficient design: seed series s(t) constant (subject {i})")
        design = np.column_stack([np.ones(t_total), s, psych, s * psych])
        if np.linalg.matrix_rank(design) < 4:
            raise ValueError("rank-deficient design: interaction column is collinear")
        coef, *_ = np.linalg.lstsq(design, series[i, targets].T, rcond=None)
        betas[i, targets] = coef[3]

    b = betas[:, targets]
    mean = b.mean(axis=0)
    sd = b.std(axis=0, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_stat = mean / (sd / np.sqrt(n))
    p = 2.0 * stats.t.sf(np.abs(t_stat), df=n - 1)
    p[np.isnan(p)] = 1.0
    p_bh, rejected = bh_adjust(p, alpha)

    group_t = np.full(r, np.nan)
    group_p = np.full(r, np.nan)
    group_p_adj = np.full(r, np.nan)
    group_t[targets] = t_stat
    group_p[targets] = p
    group_p_adj[targets] = p_bh
    significant = tuple(int(targets[j]) for j in np.nonzero(rejected)[0])
    return PpiResult(
        seed_region=seed_region,
        betas=betas,
        group_t=group_t,
        group_p_raw=group_p,
        group_p_bh=group_p_adj,
        significant_regions=significant,
    )
