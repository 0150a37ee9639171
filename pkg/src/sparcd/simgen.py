"""Synthetic dependency-structure generators with ground-truth masks.

Three regimes, each producing paired condition tensors (X, Y) whose block
dependency structures agree everywhere except one block of X that is split
into two independent sub-blocks in Y:

* linear: columns are zero-mean Gaussian with block-diagonal covariance;
  per block the covariance is U diag((1/k)^gamma) U^T with a Haar-random
  orthogonal U. Each subject samples its block-size layout from a small set
  of configurations. The first block is the one split in Y.
* nonlinear: each block carries an i.i.d. standard normal seed series as its
  first region; remaining regions are sin(pi * f * seed + phase) plus
  N(0, sigma^2) noise, with per-subject random frequencies and phases. The
  last block is the one split in Y (each sub-block gets its own seed).
* hybrid: alpha * linear + (1 - alpha) * nonlinear + N(0, sigma^2), on a
  shared equal-block layout; the last block splits.

All draws derive from counter-based streams keyed by (seed, stream, subject),
so identical specs produce bitwise-identical tensors and subjects could be
generated in any order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._rng import STREAM_SIM_POPULATION, STREAM_SIM_X, STREAM_SIM_Y, spawn_rng
from .tensorio import ConditionTensor

LINEAR_LAYOUTS = ((20, 20, 30, 20), (20, 21, 29, 20), (20, 19, 31, 20))
LINEAR_SPLITS = ((10, 10), (9, 11), (11, 9))

REGIMES = ("linear", "nonlinear", "hybrid")


@dataclass(frozen=True)
class GroundTruth:
    """Boolean mask of the regions inside the split block."""

    mask: np.ndarray

    def indices(self) -> np.ndarray:
        return np.nonzero(self.mask)[0]

    def to_json(self) -> dict:
        return {"regions": self.indices().tolist(), "n_regions": int(self.mask.size)}


@dataclass(frozen=True)
class SimSpec:
    regime: str
    seed: int
    n: int = 150
    t: int = 100
    gamma: float = 1.5
    sigma: float = 0.5
    alpha: float | None = None
    block_layouts: tuple = LINEAR_LAYOUTS
    split_layouts: tuple = LINEAR_SPLITS
    q: int = 8
    l: int = 18
    freq_range: tuple = (0.5, 2.0)
    split: bool = True

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.n < 2 or self.t < 2:
            raise ValueError("need n >= 2 subjects and T >= 2 samples")
        if self.regime == "linear":
            sums = {sum(lay) for lay in self.block_layouts}
            if len(sums) != 1:
                raise ValueError(f"block layouts disagree on total region count: {sorted(sums)}")
            firsts = {lay[0] for lay in self.block_layouts}
            if len(firsts) != 1:
                raise ValueError("block layouts must share the first (split) block size")
            if self.split:
                first = next(iter(firsts))
                for sp in self.split_layouts:
                    if len(sp) != 2 or sum(sp) != first:
                        raise ValueError(
                            f"split layout {sp} must have two parts summing to {first}"
                        )
        else:
            if self.q < 2 or self.l < 2:
                raise ValueError("need q >= 2 blocks of l >= 2 regions")
            if self.regime == "hybrid":
                if self.alpha is None or not (0.0 <= self.alpha <= 1.0):
                    raise ValueError("hybrid regime requires alpha in [0, 1]")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")

    @property
    def n_regions(self) -> int:
        if self.regime == "linear":
            return sum(self.block_layouts[0])
        return self.q * self.l

    def to_json(self) -> dict:
        return {
            "regime": self.regime,
            "seed": self.seed,
            "n": self.n,
            "t": self.t,
            "gamma": self.gamma,
            "sigma": self.sigma,
            "alpha": self.alpha,
            "block_layouts": [list(l) for l in self.block_layouts],
            "split_layouts": [list(l) for l in self.split_layouts],
            "q": self.q,
            "l": self.l,
            "freq_range": list(self.freq_range),
            "split": self.split,
        }


# ---------------------------------------------------------------------------
# covariance construction
# ---------------------------------------------------------------------------

def _haar_orthogonal(size: int, rng) -> np.ndarray:
    """Haar-distributed orthogonal matrix (QR with sign correction)."""
    q, r = np.linalg.qr(rng.standard_normal((size, size)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs[None, :]


def _block_factor(size: int, gamma: float, rng) -> np.ndarray:
    """A with A A^T = U diag((1/k)^gamma) U^T; sampling uses x = A z."""
    u = _haar_orthogonal(size, rng)
    decay = (1.0 / np.arange(1, size + 1)) ** gamma
    return u * np.sqrt(decay)[None, :]


def block_covariance(size: int, gamma: float, rng) -> np.ndarray:
    """Block covariance with eigenvalues (1/k)^gamma and a Haar-random basis."""
    if size < 1:
        raise ValueError("block size must be >= 1")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    a = _block_factor(size, gamma, rng)
    sigma = a @ a.T
    return (sigma + sigma.T) / 2.0


# ---------------------------------------------------------------------------
# linear regime
# ---------------------------------------------------------------------------

def _linear_factors(spec: SimSpec, split_index: int):
    """Population factors shared across subjects, drawn once per spec.

    The split block's covariance is common to all X subjects; the remaining
    ("tail") blocks are drawn per layout configuration and shared between X
    and Y, so only the split block's dependence differs between conditions.
    """
    rng = spawn_rng(spec.seed, STREAM_SIM_POPULATION)
    first = spec.block_layouts[0][split_index]
    head = _block_factor(first, spec.gamma, rng)
    tails = []
    for lay in spec.block_layouts:
        rest = [s for j, s in enumerate(lay) if j != split_index]
        tails.append([_block_factor(s, spec.gamma, rng) for s in rest])
    splits = []
    for sp in spec.split_layouts:
        splits.append([_block_factor(s, spec.gamma, rng) for s in sp])
    return head, tails, splits


def _sample_blocks(factors, t: int, rng) -> np.ndarray:
    rows = []
    for a in factors:
        z = rng.standard_normal((a.shape[1], t))
        rows.append(a @ z)
    return np.concatenate(rows, axis=0)


def _linear_component(spec: SimSpec, split_index: int):
    head, tails, splits = _linear_factors(spec, split_index)
    n_layouts = len(spec.block_layouts)
    n_splits = len(spec.split_layouts)

    def insert(head_factors, tail_factors):
        ordered = list(tail_factors)
        ordered[split_index:split_index] = [None]
        out = []
        for slot in ordered:
            if slot is None:
                out.extend(head_factors)
            else:
                out.append(slot)
        return out

    def subject_x(rng):
        c = int(rng.integers(n_layouts))
        return _sample_blocks(insert([head], tails[c]), spec.t, rng)

    def subject_y(rng):
        c = int(rng.integers(n_layouts))
        if spec.split:
            s = int(rng.integers(n_splits))
            return _sample_blocks(insert(splits[s], tails[c]), spec.t, rng)
        return _sample_blocks(insert([head], tails[c]), spec.t, rng)

    return subject_x, subject_y


def _linear_truth(spec: SimSpec, split_index: int) -> np.ndarray:
    mask = np.zeros(spec.n_regions, dtype=bool)
    if spec.split:
        start = sum(spec.block_layouts[0][:split_index])
        mask[start:start + spec.block_layouts[0][split_index]] = True
    return mask


def gen_linear(spec: SimSpec):
    """Linear regime: block-Gaussian X and Y with the first block split in Y."""
    subject_x, subject_y = _linear_component(spec, split_index=0)
    x = np.stack([subject_x(spawn_rng(spec.seed, STREAM_SIM_X, i)) for i in range(spec.n)])
    y = np.stack([subject_y(spawn_rng(spec.seed, STREAM_SIM_Y, i)) for i in range(spec.n)])
    return (
        ConditionTensor(x, condition_id="X"),
        ConditionTensor(y, condition_id="Y"),
        GroundTruth(_linear_truth(spec, 0)),
    )


def linear_population_covariances(spec: SimSpec, split_index: int = 0) -> dict:
    """Population covariance templates of the linear regime (for verification)."""
    head, tails, splits = _linear_factors(spec, split_index)
    to_cov = lambda a: a @ a.T
    return {
        "head": to_cov(head),
        "tails": [[to_cov(a) for a in tail] for tail in tails],
        "splits": [[to_cov(a) for a in sp] for sp in splits],
    }


# ---------------------------------------------------------------------------
# nonlinear regime
# ---------------------------------------------------------------------------

def _nonlinear_layouts(spec: SimSpec):
    lx = [spec.l] * spec.q
    ly = [spec.l] * (spec.q - 1) + [spec.l - spec.l // 2, spec.l // 2]
    return lx, ly


def nonlinear_frequencies(spec: SimSpec) -> np.ndarray:
    """Per-region sine frequencies, drawn once per spec and shared by X and Y.

    Dataset-level frequencies give the dependency blocks distinct coupling
    strengths, which spreads the community eigenvalues of the connectivity
    Laplacians apart (with per-subject draws all blocks would average to the
    same strength and the spectrum would be near-degenerate).
    """
    rng = spawn_rng(spec.seed, STREAM_SIM_POPULATION, 1)
    return rng.uniform(*spec.freq_range, size=spec.n_regions)


def _nonlinear_record(layout, spec: SimSpec, freq: np.ndarray, rng, sigma: float) -> np.ndarray:
    out = np.empty((sum(layout), spec.t))
    pos = 0
    for bsize in layout:
        seed_series = rng.standard_normal(spec.t)
        out[pos] = seed_series
        k = bsize - 1
        if k:
            f = freq[pos + 1:pos + bsize]
            phase = rng.uniform(0.0, 2.0 * np.pi, size=k)
            noise = rng.standard_normal((k, spec.t))
            out[pos + 1:pos + bsize] = (
                np.sin(np.pi * f[:, None] * seed_series[None, :] + phase[:, None])
                + sigma * noise
            )
        pos += bsize
    return out


def gen_nonlinear(spec: SimSpec):
    """Nonlinear regime: sine-coupled blocks with the last block split in Y.

    Frequencies are fixed per region across subjects and conditions; phases
    are redrawn per subject, so connection signs vary across subjects and
    linear-correlation statistics average out to zero.
    """
    lx, ly = _nonlinear_layouts(spec)
    if not spec.split:
        ly = lx
    freq = nonlinear_frequencies(spec)
    x = np.stack([
        _nonlinear_record(lx, spec, freq, spawn_rng(spec.seed, STREAM_SIM_X, i), spec.sigma)
        for i in range(spec.n)
    ])
    y = np.stack([
        _nonlinear_record(ly, spec, freq, spawn_rng(spec.seed, STREAM_SIM_Y, i), spec.sigma)
        for i in range(spec.n)
    ])
    mask = np.zeros(spec.n_regions, dtype=bool)
    if spec.split:
        mask[spec.n_regions - spec.l:] = True
    return ConditionTensor(x, "X"), ConditionTensor(y, "Y"), GroundTruth(mask)


# ---------------------------------------------------------------------------
# hybrid regime
# ---------------------------------------------------------------------------

def gen_hybrid(spec: SimSpec):
    """Hybrid regime: alpha-weighted sum of linear and nonlinear components.

    Both components live on a shared q-blocks-of-l layout and split the last
    block, so the ground truth is one coherent region set. The components are
    noise-free; a single N(0, sigma^2) term is added on top.
    """
    r = spec.n_regions
    lin_spec = SimSpec(
        regime="linear",
        seed=spec.seed,
        n=spec.n,
        t=spec.t,
        gamma=spec.gamma,
        block_layouts=((spec.l,) * spec.q,),
        split_layouts=((spec.l - spec.l // 2, spec.l // 2),),
        split=spec.split,
    )
    subject_x, subject_y = _linear_component(lin_spec, split_index=spec.q - 1)
    lx, ly = _nonlinear_layouts(spec)
    if not spec.split:
        ly = lx
    a = spec.alpha

    freq = nonlinear_frequencies(spec)

    def record(builder, layout, rng_lin, rng_nl, rng_eps):
        lin = builder(rng_lin)
        nl = _nonlinear_record(layout, spec, freq, rng_nl, sigma=0.0)
        eps = rng_eps.standard_normal((r, spec.t))
        return a * lin + (1.0 - a) * nl + spec.sigma * eps

    x = np.stack([
        record(subject_x, lx,
               spawn_rng(spec.seed, STREAM_SIM_X, i, 0),
               spawn_rng(spec.seed, STREAM_SIM_X, i, 1),
               spawn_rng(spec.seed, STREAM_SIM_X, i, 2))
        for i in range(spec.n)
    ])
    y = np.stack([
        record(subject_y, ly,
               spawn_rng(spec.seed, STREAM_SIM_Y, i, 0),
               spawn_rng(spec.seed, STREAM_SIM_Y, i, 1),
               spawn_rng(spec.seed, STREAM_SIM_Y, i, 2))
        for i in range(spec.n)
    ])
    mask = np.zeros(r, dtype=bool)
    if spec.split:
        mask[r - spec.l:] = True
    return ConditionTensor(x, "X"), ConditionTensor(y, "Y"), GroundTruth(mask)


def generate(spec: SimSpec):
    """Dispatch to the regime's generator; returns (X, Y, ground truth)."""
    if spec.regime == "linear":
        return gen_linear(spec)
    if spec.regime == "nonlinear":
        return gen_nonlinear(spec)
    return gen_hybrid(spec)
