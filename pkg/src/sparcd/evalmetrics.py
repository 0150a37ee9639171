"""Detection metrics and the benchmark harness comparing the three methods."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .baselines import ppi_test, uc_test
from .inference import RunConfig, permutation_test
from .simgen import SimSpec, generate
from .tensorio import PairingMode

SWEEP_PARAM = {"linear": "gamma", "nonlinear": "sigma", "hybrid": "alpha"}
KNOWN_METHODS = ("sparcd", "uc", "ppi", "uc-region")


@dataclass(frozen=True)
class BenchmarkRow:
    regime: str
    sweep_param_name: str
    sweep_value: float
    method: str
    precision: float
    recall: float
    pr_auc: float
    seed: int
    runtime_seconds: float
    no_detections: bool

    CSV_HEADER = ("regime,sweep_param_name,sweep_value,method,"
                  "precision,recall,pr_auc,seed,runtime_seconds,no_detections")

    def csv_line(self) -> str:
        return (
            f"{self.regime},{self.sweep_param_name},{self.sweep_value!r},{self.method},"
            f"{self.precision!r},{self.recall!r},{self.pr_auc!r},{self.seed},"
            f"{self.runtime_seconds!r},{'true' if self.no_detections else 'false'}"
        )


def precision_recall(detected, truth_mask) -> tuple[float, float]:
    """Literal detection ratios against a nonempty ground-truth mask.

    Empty detection sets return precision 1.0 by convention (callers record
    the emptiness separately) and recall 0.
    """
    truth_mask = np.asarray(truth_mask, dtype=bool)
    n_truth = int(truth_mask.sum())
    if n_truth == 0:
        raise ValueError("ground-truth mask is empty")
    detected = np.asarray(list(detected), dtype=int)
    if detected.size == 0:
        return 1.0, 0.0
    tp = int(truth_mask[detected].sum())
    return tp / detected.size, tp / n_truth


def pr_auc(scores, labels) -> float:
    """Area under the precision-recall curve of a ranking.

    Sweeps every distinct score as a threshold (descending; ties form one
    threshold) and integrates with the step-wise rectangular rule
    sum (R_k - R_{k-1}) * P_k, which avoids optimistic interpolation.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be matching 1-d arrays")
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("no positive labels")
    order = np.argsort(scores, kind="stable")[::-1]
    sorted_scores = scores[order]
    tp_cum = np.cumsum(labels[order])
    k = np.arange(1, scores.size + 1)
    # last index of each tie group = the threshold points
    boundary = np.nonzero(np.diff(sorted_scores))[0]
    idx = np.concatenate([boundary, [scores.size - 1]])
    precision = tp_cum[idx] / k[idx]
    recall = tp_cum[idx] / n_pos
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * precision))


def _edge_truth(rows, cols, truth_mask) -> np.ndarray:
    return truth_mask[rows] & truth_mask[cols]


def _sparcd_row(x, y, truth, config: RunConfig, mode) -> tuple:
    report = permutation_test(x, y, config=config, mode=mode)
    detected = report.significant_regions()
    prec, rec = precision_recall(detected, truth.mask)
    auc = pr_auc(report.observed, truth.mask)
    return prec, rec, auc, detected.size == 0


def _uc_rows(x, y, truth, alpha):
    res = uc_test(x, y, alpha=alpha)
    edge_labels = _edge_truth(res.edge_rows, res.edge_cols, truth.mask)
    detected_edges = np.nonzero(res.edge_rejected)[0]
    prec, rec = precision_recall(detected_edges, edge_labels)
    auc = pr_auc(res.edge_scores, edge_labels)
    edge_row = (prec, rec, auc, detected_edges.size == 0)

    region_hit = res.region_detected()
    prec_r, rec_r = precision_recall(np.nonzero(region_hit)[0], truth.mask)
    auc_r = pr_auc(res.region_scores(), truth.mask)
    region_row = (prec_r, rec_r, auc_r, not region_hit.any())
    return edge_row, region_row


def _ppi_row(x, y, truth, alpha):
    seed_region = int(truth.indices()[0]) if truth.mask.any() else 0
    res = ppi_test(x, y, seed_region=seed_region, alpha=alpha)
    prec, rec = precision_recall(res.significant_regions, truth.mask)
    keep = np.arange(truth.mask.size) != seed_region
    auc = pr_auc(res.region_scores()[keep], truth.mask[keep])
    return prec, rec, auc, len(res.significant_regions) == 0


def run_benchmark(
    regime: str,
    sweep_values,
    seeds,
    methods,
    config: RunConfig,
    n: int = 150,
    t: int = 100,
    mode: PairingMode | str = PairingMode.PAIRED_BLOCKS,
    **spec_overrides,
) -> list[BenchmarkRow]:
    """Sweep one regime parameter over seeds and methods; emit tidy rows.

    The swept parameter is gamma (linear), sigma (nonlinear) or alpha
    (hybrid). Every (value, seed, method) cell regenerates data, runs the
    method, and scores BH-level detections plus the continuous-score PR-AUC.
    The 'uc' method scores edges (ranked by |mean z difference| over the
    upper triangle); 'uc-region' reduces edges to regions (a region is
    detected when any incident edge is, ranked by max incident edge score).
    """
    unknown = [m for m in methods if m not in KNOWN_METHODS]
    if unknown:
        raise ValueError(f"unknown methods: {unknown} (choose from {KNOWN_METHODS})")
    param = SWEEP_PARAM[regime]
    rows = []
    for value in sweep_values:
        for seed in seeds:
            kwargs = {"regime": regime, "seed": int(seed), "n": n, "t": t, param: float(value)}
            kwargs.update(spec_overrides)
            spec = SimSpec(**kwargs)
            x, y, truth = generate(spec)
            per_method = {}
            run_config = RunConfig(
                k=config.k, permutations=config.permutations,
                fdr_alpha=config.fdr_alpha, seed=int(seed),
                workers=config.workers, add_one=config.add_one,
                leading=config.leading, connectivity=config.connectivity,
                no_self_loops=config.no_self_loops, dtype=config.dtype,
            )
            if "sparcd" in methods:
                t0 = time.perf_counter()
                per_method["sparcd"] = _sparcd_row(x, y, truth, run_config, mode)
                per_method["sparcd"] += (time.perf_counter() - t0,)
            if "uc" in methods or "uc-region" in methods:
                t0 = time.perf_counter()
                edge_row, region_row = _uc_rows(x, y, truth, config.fdr_alpha)
                dt = time.perf_counter() - t0
                if "uc" in methods:
                    per_method["uc"] = edge_row + (dt,)
                if "uc-region" in methods:
                    per_method["uc-region"] = region_row + (dt,)
            if "ppi" in methods:
                t0 = time.perf_counter()
                per_method["ppi"] = _ppi_row(x, y, truth, config.fdr_alpha)
                per_method["ppi"] += (time.perf_counter() - t0,)
            for name in methods:
                prec, rec, auc, empty, dt = per_method[name]
                rows.append(BenchmarkRow(
                    regime=regime,
                    sweep_param_name=param,
                    sweep_value=float(value),
                    method=name,
                    precision=prec,
                    recall=rec,
                    pr_auc=auc,
                    seed=int(seed),
                    runtime_seconds=dt,
                    no_detections=empty,
                ))
    rows.sort(key=lambda r: (r.regime, r.sweep_param_name, r.sweep_value, r.method, r.seed))
    return rows


def write_benchmark_csv(rows, path) -> None:
    lines = [BenchmarkRow.CSV_HEADER]
    lines.extend(row.csv_line() for row in rows)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
