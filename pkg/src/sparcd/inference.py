"""Permutation null generation, empirical p-values, and BH correction.

The null reassigns condition labels: whole-subject records in the paired and
unpaired subject modes, or stimulus-block labels within each subject in the
paired-blocks mode (preserving per-subject label counts and every sample
value). Each replicate b draws from its own counter-based stream keyed by
(seed, b), so results are independent of execution order and worker count;
replicate computation always runs with BLAS pinned to one thread so outputs
are byte-identical for any worker setting.

Empirical p-values count exceedances, p(r) = #{b : s~_b(r) >= s(r)} / B, so
they lie on the grid {0, 1/B, ..., 1}; the optional add-one smoothing
(1 + count) / (1 + B) avoids exact zeros. When the filtering rank is
data-driven it is re-estimated inside every replicate.
"""
from __future__ import annotations

import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from ._rng import STREAM_PERMUTATION, spawn_rng
from .core import KMode, _score_pack, _sweep, _FilteredPair, run_sparcd
from .dcorr import mean_record_dcor, connectivity_matrix
from .graphspec import EigengapWarning, normalized_laplacian, symmetric_eigen
from .tensorio import BlockDesign, PairingMode, interleave_conditions, sample_level_design


@dataclass(frozen=True)
class RunConfig:
    """Resolved run settings; echoed verbatim into meta.json."""

    k: KMode
    permutations: int
    fdr_alpha: float = 0.05
    seed: int = 0
    workers: int = 1
    add_one: bool = False
    leading: str = "abs"
    connectivity: str = "subject-mean"
    no_self_loops: bool = False
    dtype: str = "double"

    def __post_init__(self):
        if self.permutations < 1:
            raise ValueError("B must be >= 1")
        if not (0.0 < self.fdr_alpha < 1.0):
            raise ValueError(f"fdr_alpha must lie in (0, 1), got {self.fdr_alpha}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.dtype not in ("double", "single"):
            raise ValueError(f"dtype must be 'double' or 'single', got {self.dtype!r}")

    @property
    def engine_dtype(self):
        return np.float32 if self.dtype == "single" else np.float64

    def as_dict(self) -> dict:
        return {
            "k_mode": self.k.describe(),
            "permutations": self.permutations,
            "fdr_alpha": self.fdr_alpha,
            "seed": self.seed,
            "workers": self.workers,
            "add_one": self.add_one,
            "leading": self.leading,
            "connectivity": self.connectivity,
            "no_self_loops": self.no_self_loops,
            "dtype": self.dtype,
        }


@dataclass(frozen=True)
class PermutationReport:
    observed: np.ndarray
    null_stats: np.ndarray
    p_raw: np.ndarray
    p_bh: np.ndarray
    rejected: np.ndarray
    k_observed: int
    k_per_perm: np.ndarray
    seed: int
    alpha: float
    mode: str
    diff_op: np.ndarray
    degenerate: bool
    config: dict = field(default_factory=dict)

    @property
    def n_permutations(self) -> int:
        return self.null_stats.shape[0]

    def significant_regions(self) -> np.ndarray:
        return np.nonzero(self.rejected)[0]

    def meta(self) -> dict:
        ks = self.k_per_perm
        return {
            "mode": self.mode,
            "seed": self.seed,
            "fdr_alpha": self.alpha,
            "permutations": int(self.n_permutations),
            "k_observed": int(self.k_observed),
            "k_per_perm": {
                "min": int(ks.min()),
                "max": int(ks.max()),
                "median": float(np.median(ks)),
            },
            "degenerate": bool(self.degenerate),
            "n_rejected": int(self.rejected.sum()),
            "config": self.config,
        }


def bh_adjust(p: np.ndarray, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Benjamini-Hochberg step-up: adjusted p-values and the rejection set.

    Rejects the tests with the m smallest p-values where m is the largest k
    with p_(k) <= k * alpha / m; adjusted values are the running minima of
    m * p_(j) / j from the largest rank down, clamped at 1.
    """
    p = np.asarray(p, dtype=np.float64)
    m = p.size
    if m == 0:
        return np.empty(0), np.empty(0, dtype=bool)
    if p.min() < 0.0 or p.max() > 1.0:
        raise ValueError("p-values must lie in [0, 1]")
    order = np.argsort(p, kind="stable")
    ranked = p[order]
    ranks = np.arange(1, m + 1)
    passing = np.nonzero(ranked <= alpha * ranks / m)[0]
    n_reject = passing[-1] + 1 if passing.size else 0
    rejected = np.zeros(m, dtype=bool)
    rejected[order[:n_reject]] = True
    adj = np.minimum.accumulate((m * ranked / ranks)[::-1])[::-1]
    np.minimum(adj, 1.0, out=adj)
    p_adj = np.empty(m)
    p_adj[order] = adj
    return p_adj, rejected


# ---------------------------------------------------------------------------
# permutation draws
# ---------------------------------------------------------------------------

def permute_subjects(x, y, rng, mode: PairingMode = PairingMode.PAIRED_SUBJECTS):
    """One label reassignment at the subject level; sample values are untouched.

    Paired mode swaps each subject's X/Y records with probability 1/2.
    Unpaired mode pools all records and redraws which n_x of them form X
    (group sizes held fixed).
    """
    x = np.asarray(getattr(x, "data", x))
    y = np.asarray(getattr(y, "data", y))
    if mode == PairingMode.PAIRED_SUBJECTS:
        if x.shape[0] != y.shape[0]:
            raise ValueError("paired mode requires n_x == n_y")
        swap = rng.random(x.shape[0]) < 0.5
        sel = swap[:, None, None]
        return np.where(sel, y, x), np.where(sel, x, y)
    if mode == PairingMode.UNPAIRED:
        pool = np.concatenate([x, y], axis=0)
        perm = rng.permutation(pool.shape[0])
        return pool[perm[: x.shape[0]]], pool[perm[x.shape[0]:]]
    raise ValueError(f"subject-level permutation does not apply to mode {mode}")


def permute_blocks(design: BlockDesign, rng) -> BlockDesign:
    """Shuffle each subject's block labels over its block slots.

    Per-subject label counts and all time intervals are preserved, so only
    the label-to-interval assignment changes.
    """
    new_labels = []
    for blocks in design.subjects:
        labels = np.array([b.label for b in blocks])
        new_labels.append(labels[rng.permutation(len(labels))])
    return design.with_labels(new_labels)


# ---------------------------------------------------------------------------
# replicate engine
# ---------------------------------------------------------------------------

def _assemble_w(flat_x, weights, denom, r, no_self_loops):
    w = (weights @ flat_x).reshape(r, r) / denom
    np.fill_diagonal(w, 0.0 if no_self_loops else 1.0)
    return w


def _statistic(wx, wy, k_mode: KMode, leading: str):
    """Region scores and the K actually used, identical to run_sparcd numerics."""
    r = wx.shape[0]
    lap_x = normalized_laplacian(wx)
    lap_y = normalized_laplacian(wy)
    basis_x = symmetric_eigen(lap_x.matrix, check=False)
    basis_y = symmetric_eigen(lap_y.matrix, check=False)
    if k_mode.kind == "fixed":
        k = k_mode.validate_fixed(r)
        pair = _FilteredPair(basis_x, basis_y, lap_x.matrix, lap_y.matrix, k)
        scores = _score_pack(pair.diff(), leading)[0]
        return scores, k
    lo, hi = k_mode.resolve_range(r)
    etas, all_scores = _sweep(basis_x, basis_y, lap_x.matrix, lap_y.matrix, lo, hi, leading)
    best = int(np.argmax(etas))
    return all_scores[best], lo + best


def _split_records(raw: np.ndarray, design: BlockDesign):
    """Array-level split of a raw tensor into per-condition record arrays."""
    per = {"A": [], "B": []}
    for i, blocks in enumerate(design.subjects):
        for label in ("A", "B"):
            segs = [raw[i, :, b.start:b.end] for b in blocks if b.label == label]
            per[label].append(np.concatenate(segs, axis=1))
    out = []
    for label in ("A", "B"):
        t_min = min(seg.shape[1] for seg in per[label])
        out.append(np.stack([seg[:, :t_min] for seg in per[label]]))
    return out[0], out[1]


def _one_replicate(payload: dict, b: int):
    rng = spawn_rng(payload["seed"], STREAM_PERMUTATION, b)
    mode = payload["mode"]
    k_mode = payload["k_mode"]
    leading = payload["leading"]
    nsl = payload["no_self_loops"]
    if mode == PairingMode.PAIRED_BLOCKS.value:
        design = permute_blocks(payload["design"], rng)
        rec_x, rec_y = _split_records(payload["raw"], design)
        wx = mean_record_dcor(rec_x, dtype=payload["np_dtype"])
        wy = mean_record_dcor(rec_y, dtype=payload["np_dtype"])
        np.fill_diagonal(wx, 0.0 if nsl else 1.0)
        np.fill_diagonal(wy, 0.0 if nsl else 1.0)
    elif payload.get("flat") is not None:
        # subject-level modes on precomputed per-record dcor matrices
        flat = payload["flat"]
        n_x, n_y = payload["n_x"], payload["n_y"]
        r = payload["r"]
        if mode == PairingMode.PAIRED_SUBJECTS.value:
            swap = rng.random(n_x) < 0.5
            in_x = np.concatenate([~swap, swap]).astype(np.float64)
        else:
            perm = rng.permutation(n_x + n_y)
            in_x = np.zeros(n_x + n_y)
            in_x[perm[:n_x]] = 1.0
        wx = _assemble_w(flat, in_x, n_x, r, nsl)
        wy = _assemble_w(flat, 1.0 - in_x, n_y, r, nsl)
    else:
        # generic fallback: permute raw records, recompute connectivity
        xp, yp = permute_subjects(payload["x"], payload["y"], rng, PairingMode(mode))
        wx = connectivity_matrix(xp, method=payload["connectivity"], no_self_loops=nsl)
        wy = connectivity_matrix(yp, method=payload["connectivity"], no_self_loops=nsl)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EigengapWarning)
        return _statistic(wx, wy, k_mode, leading)


def _replicate_range(payload: dict, lo: int, hi: int):
    out = []
    with threadpool_limits(limits=1):
        for b in range(lo, hi):
            scores, k = _one_replicate(payload, b)
            out.append((b, scores, k))
    return out


def _chunk_bounds(total: int, parts: int):
    step = (total + parts - 1) // parts
    return [(lo, min(lo + step, total)) for lo in range(0, total, step)]


def permutation_test(
    x=None,
    y=None,
    *,
    config: RunConfig,
    mode: PairingMode | str,
    raw=None,
    design: BlockDesign | None = None,
    progress: bool = False,
) -> PermutationReport:
    """Permutation significance test for the region scores.

    Subject modes take the two condition tensors ``x`` and ``y``. The
    paired-blocks mode takes a raw tensor plus a block design; given (x, y)
    without a design, every time sample is treated as its own exchangeable
    block (appropriate for simulated data with independent samples).
    """
    mode = PairingMode(mode)
    b_total = config.permutations

    payload: dict = {
        "seed": config.seed,
        "mode": mode.value,
        "k_mode": config.k,
        "leading": config.leading,
        "no_self_loops": config.no_self_loops,
        "np_dtype": config.engine_dtype,
        "connectivity": config.connectivity,
        "flat": None,
    }

    if mode == PairingMode.PAIRED_BLOCKS:
        if design is None:
            if x is None or y is None:
                raise ValueError("paired-blocks mode needs either (raw, design) or (x, y)")
            raw = interleave_conditions(x, y)
            design = sample_level_design(x.data.shape[0], x.data.shape[2], y.data.shape[2])
        elif raw is None:
            raise ValueError("paired-blocks mode with a design needs the raw tensor")
        raw_data = np.asarray(getattr(raw, "data", raw), dtype=np.float64)
        if design.n_subjects != raw_data.shape[0]:
            raise ValueError("design subject count does not match the raw tensor")
        if design.max_index() > raw_data.shape[2]:
            raise ValueError("design indices exceed the raw tensor's time axis")
        payload["raw"] = raw_data
        payload["design"] = design
        rec_x, rec_y = _split_records(raw_data, design)
        wx = mean_record_dcor(rec_x, dtype=config.engine_dtype)
        wy = mean_record_dcor(rec_y, dtype=config.engine_dtype)
        np.fill_diagonal(wx, 0.0 if config.no_self_loops else 1.0)
        np.fill_diagonal(wy, 0.0 if config.no_self_loops else 1.0)
    else:
        if x is None or y is None:
            raise ValueError(f"{mode.value} mode needs both condition tensors")
        x_data = np.asarray(getattr(x, "data", x), dtype=np.float64)
        y_data = np.asarray(getattr(y, "data", y), dtype=np.float64)
        if x_data.shape[1] != y_data.shape[1]:
            raise ValueError("condition tensors disagree on region count")
        if mode == PairingMode.PAIRED_SUBJECTS and x_data.shape[0] != y_data.shape[0]:
            raise ValueError("paired-subjects mode requires n_x == n_y")
        n_x, n_y = x_data.shape[0], y_data.shape[0]
        r = x_data.shape[1]
        if config.connectivity == "subject-mean":
            from .dcorr import record_dcor_matrix

            stack = np.empty((n_x + n_y, r * r))
            for i in range(n_x):
                stack[i] = record_dcor_matrix(x_data[i], dtype=config.engine_dtype).ravel()
            for i in range(n_y):
                stack[n_x + i] = record_dcor_matrix(y_data[i], dtype=config.engine_dtype).ravel()
            payload.update({"flat": stack, "n_x": n_x, "n_y": n_y, "r": r})
            wx = _assemble_w(stack, np.concatenate([np.ones(n_x), np.zeros(n_y)]),
                             n_x, r, config.no_self_loops)
            wy = _assemble_w(stack, np.concatenate([np.zeros(n_x), np.ones(n_y)]),
                             n_y, r, config.no_self_loops)
        else:
            payload.update({"x": x_data, "y": y_data})
            wx = connectivity_matrix(x_data, method=config.connectivity,
                                     no_self_loops=config.no_self_loops)
            wy = connectivity_matrix(y_data, method=config.connectivity,
                                     no_self_loops=config.no_self_loops)

    observed_result = run_sparcd(wx, wy, config.k, leading=config.leading)
    observed = observed_result.scores
    r = observed.size

    null_stats = np.empty((b_total, r))
    k_per_perm = np.empty(b_total, dtype=np.int64)

    def consume(results, done_before):
        done = done_before
        for b, scores, k in results:
            null_stats[b] = scores
            k_per_perm[b] = k
            done += 1
        if progress:
            print(f"\rpermutations: {done}/{b_total}", end="", file=sys.stderr, flush=True)
        return done

    done = 0
    if config.workers == 1:
        for lo, hi in _chunk_bounds(b_total, max(1, min(20, b_total))):
            done = consume(_replicate_range(payload, lo, hi), done)
    else:
        bounds = _chunk_bounds(b_total, config.workers * 4)
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(_replicate_range, payload, lo, hi) for lo, hi in bounds]
            for fut in futures:
                done = consume(fut.result(), done)
    if progress:
        print(file=sys.stderr)

    counts = (null_stats >= observed[None, :]).sum(axis=0)
    p_raw = counts / b_total
    p_inference = (1.0 + counts) / (1.0 + b_total) if config.add_one else p_raw
    p_bh, rejected = bh_adjust(p_inference, config.fdr_alpha)

    return PermutationReport(
        observed=observed,
        null_stats=null_stats,
        p_raw=p_raw,
        p_bh=p_bh,
        rejected=rejected,
        k_observed=observed_result.k_used,
        k_per_perm=k_per_perm,
        seed=config.seed,
        alpha=config.fdr_alpha,
        mode=mode.value,
        diff_op=observed_result.diff_op,
        degenerate=observed_result.degenerate,
        config=config.as_dict(),
    )
