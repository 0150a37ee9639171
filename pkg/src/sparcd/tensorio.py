"""Condition tensor ingest, block-design handling, and result artifacts.

File formats
------------
Binary tensor: magic ``SPRC``, u32 version (=1), u32 n, u32 R, u32 T,
followed by n*R*T little-endian float64 values in subject-major,
region-major, time-minor order.

CSV tensor: a directory with ``manifest.json`` declaring
``{"n": .., "R": .., "T": .., "files": [..]}`` and one CSV file per subject
(R rows x T comma-separated values).

Block design: a JSON array with one entry per subject; each entry is a list
of ``{"label": "A"|"B", "start": int, "end": int}`` with end exclusive.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

_MAGIC = b"SPRC"
_VERSION = 1
_HEADER = struct.Struct("<4sIIII")


class TensorFormatError(ValueError):
    """Raised when an input file violates its declared format."""


class PairingMode(str, Enum):
    PAIRED_BLOCKS = "paired-blocks"
    PAIRED_SUBJECTS = "paired-subjects"
    UNPAIRED = "unpaired-subjects"


@dataclass(frozen=True)
class ConditionTensor:
    """One condition's signals: ``data`` has shape (n subjects, R regions, T samples)."""

    data: np.ndarray
    condition_id: str = ""

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise TensorFormatError(f"tensor must be 3-dimensional, got shape {data.shape}")
        n, r, t = data.shape
        if n < 2 or r < 2 or t < 2:
            raise TensorFormatError(f"need n >= 2, R >= 2, T >= 2, got (n={n}, R={r}, T={t})")
        if not np.isfinite(data).all():
            raise TensorFormatError("tensor contains non-finite values")
        spread = data.max(axis=2) - data.min(axis=2)
        flat = np.argwhere(spread == 0.0)
        if len(flat):
            where = ", ".join(f"(subject {i}, region {j})" for i, j in flat[:5])
            raise TensorFormatError(
                f"constant time series (distance-correlation denominator would be zero): {where}"
                + ("..." if len(flat) > 5 else "")
            )
        data = data.copy()
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def n_subjects(self) -> int:
        return self.data.shape[0]

    @property
    def n_regions(self) -> int:
        return self.data.shape[1]

    @property
    def n_samples(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class Block:
    label: str
    start: int
    end: int


@dataclass(frozen=True)
class BlockDesign:
    """Per-subject stimulus blocks; within a subject blocks are disjoint and ordered."""

    subjects: tuple[tuple[Block, ...], ...]

    def __post_init__(self):
        if not self.subjects:
            raise ValueError("block design has no subjects")
        for i, blocks in enumerate(self.subjects):
            labels = set()
            prev_end = None
            for b in blocks:
                if b.label not in ("A", "B"):
                    raise ValueError(f"subject {i}: block label must be 'A' or 'B', got {b.label!r}")
                if not (0 <= b.start < b.end):
                    raise ValueError(f"subject {i}: invalid block interval [{b.start}, {b.end})")
                if prev_end is not None and b.start < prev_end:
                    raise ValueError(f"subject {i}: overlapping blocks at [{b.start}, {b.end})")
                prev_end = b.end
                labels.add(b.label)
            if labels != {"A", "B"}:
                missing = {"A", "B"} - labels
                raise ValueError(f"subject {i}: no block with label {sorted(missing)}")

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)

    def max_index(self) -> int:
        return max(b.end for blocks in self.subjects for b in blocks)

    def with_labels(self, labels_per_subject) -> "BlockDesign":
        """Same intervals, new label assignment (one label list per subject)."""
        new_subjects = []
        for blocks, labels in zip(self.subjects, labels_per_subject):
            new_subjects.append(tuple(Block(lab, b.start, b.end) for lab, b in zip(labels, blocks)))
        return BlockDesign(tuple(new_subjects))

    @classmethod
    def from_json(cls, obj) -> "BlockDesign":
        subjects = []
        for entry in obj:
            subjects.append(tuple(Block(d["label"], int(d["start"]), int(d["end"])) for d in entry))
        return cls(tuple(subjects))

    def to_json(self):
        return [
            [{"label": b.label, "start": b.start, "end": b.end} for b in blocks]
            for blocks in self.subjects
        ]


def sample_level_design(n_subjects: int, t_a: int, t_b: int) -> BlockDesign:
    """Design that treats every time sample as its own exchangeable block.

    Subject records are assumed to be the concatenation of condition A's
    ``t_a`` samples followed by condition B's ``t_b`` samples. Only valid
    when samples carry no temporal dependence (e.g. simulated i.i.d. columns).
    """
    blocks = tuple(
        tuple(Block("A", t, t + 1) for t in range(t_a))
        + tuple(Block("B", t_a + t, t_a + t + 1) for t in range(t_b))
    )
    return BlockDesign(tuple(blocks for _ in range(n_subjects)))


def interleave_conditions(a: ConditionTensor, b: ConditionTensor) -> ConditionTensor:
    """Concatenate two paired condition tensors along time (A first)."""
    if a.n_subjects != b.n_subjects or a.n_regions != b.n_regions:
        raise ValueError("paired tensors must agree on subject and region counts")
    raw = np.concatenate([a.data, b.data], axis=2)
    return ConditionTensor(raw, condition_id=f"{a.condition_id}+{b.condition_id}")


# ---------------------------------------------------------------------------
# loaders / writers
# ---------------------------------------------------------------------------

def load_tensor(path, fmt: str = "auto", condition_id: str | None = None) -> ConditionTensor:
    """Load a condition tensor from the binary format or a CSV directory."""
    path = Path(path)
    if fmt == "auto":
        fmt = "csvdir" if path.is_dir() else "binary"
    if fmt == "binary":
        data = _read_binary(path)
    elif fmt == "csvdir":
        data = _read_csvdir(path)
    else:
        raise ValueError(f"unknown tensor format {fmt!r}")
    return ConditionTensor(data, condition_id=condition_id or path.stem)


def _read_binary(path: Path) -> np.ndarray:
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise TensorFormatError(f"{path}: truncated header")
    magic, version, n, r, t = _HEADER.unpack_from(blob)
    if magic != _MAGIC:
        raise TensorFormatError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise TensorFormatError(f"{path}: unsupported version {version}")
    expected = n * r * t
    body = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size)
    if body.size < expected:
        raise TensorFormatError(f"{path}: truncated body ({body.size} of {expected} values)")
    if body.size > expected:
        raise TensorFormatError(f"{path}: trailing bytes ({body.size} values, header says {expected})")
    return body.reshape(n, r, t).astype(np.float64)


def save_tensor(tensor: ConditionTensor, path) -> None:
    """Write a tensor in the binary format (round-trips exactly for finite doubles)."""
    path = Path(path)
    n, r, t = tensor.data.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, n, r, t))
        fh.write(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())


def _read_csvdir(path: Path) -> np.ndarray:
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise TensorFormatError(f"{path}: missing manifest.json")
    manifest = json.loads(manifest_path.read_text())
    n, r, t = int(manifest["n"]), int(manifest["R"]), int(manifest["T"])
    files = manifest["files"]
    if len(files) != n:
        raise TensorFormatError(f"{path}: subject count mismatch (manifest n={n}, {len(files)} files)")
    data = np.empty((n, r, t))
    for i, name in enumerate(files):
        rows = np.loadtxt(path / name, delimiter=",", ndmin=2)
        if rows.shape != (r, t):
            raise TensorFormatError(
                f"{path / name}: expected {r} rows x {t} cols, got {rows.shape[0]} x {rows.shape[1]}"
            )
        data[i] = rows
    return data


def load_design(path) -> BlockDesign:
    return BlockDesign.from_json(json.loads(Path(path).read_text()))


def save_design(design: BlockDesign, path) -> None:
    Path(path).write_text(json.dumps(design.to_json(), indent=2, sort_keys=True) + "\n")


def load_region_labels(path) -> dict[int, str]:
    """Read an optional two-column (index, name) CSV of region labels."""
    labels = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        idx, name = line.split(",", 1)
        labels[int(idx)] = name.strip()
    return labels


# ---------------------------------------------------------------------------
# block splitting
# ---------------------------------------------------------------------------

def split_by_design(raw: ConditionTensor, design: BlockDesign) -> tuple[ConditionTensor, ConditionTensor]:
    """Split a raw tensor into the two condition tensors declared by the design.

    Per subject the A-blocks (in temporal order) are concatenated along time,
    likewise B. Unequal per-subject totals are truncated to the per-condition
    minimum across subjects so the outputs stay rectangular.
    """
    if design.n_subjects != raw.n_subjects:
        raise ValueError(
            f"design has {design.n_subjects} subjects, tensor has {raw.n_subjects}"
        )
    if design.max_index() > raw.n_samples:
        raise ValueError(
            f"design indices reach {design.max_index()}, tensor has T={raw.n_samples}"
        )
    per_label: dict[str, list[np.ndarray]] = {"A": [], "B": []}
    for i, blocks in enumerate(design.subjects):
        for label in ("A", "B"):
            segs = [raw.data[i, :, b.start:b.end] for b in blocks if b.label == label]
            per_label[label].append(np.concatenate(segs, axis=1))
    out = []
    for label in ("A", "B"):
        t_min = min(seg.shape[1] for seg in per_label[label])
        stacked = np.stack([seg[:, :t_min] for seg in per_label[label]])
        out.append(ConditionTensor(stacked, condition_id=label))
    return out[0], out[1]


# ---------------------------------------------------------------------------
# result artifacts
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    return repr(float(x))


def write_report(report, out_dir, meta: dict | None = None) -> None:
    """Write scores.csv, pvalues.csv, ld_matrix.csv and meta.json for a run.

    Output is byte-identical for identical reports (floats are written with
    round-trip repr).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    null_mean = report.null_stats.mean(axis=0)
    if report.null_stats.shape[0] > 1:
        null_sd = report.null_stats.std(axis=0, ddof=1)
    else:
        null_sd = np.zeros_like(null_mean)

    lines = ["region,s_observed,null_mean,null_sd"]
    for r in range(len(report.observed)):
        lines.append(f"{r},{_fmt(report.observed[r])},{_fmt(null_mean[r])},{_fmt(null_sd[r])}")
    (out / "scores.csv").write_text("\n".join(lines) + "\n")

    lines = ["region,p_raw,p_bh,rejected"]
    for r in range(len(report.observed)):
        flag = "true" if report.rejected[r] else "false"
        lines.append(f"{r},{_fmt(report.p_raw[r])},{_fmt(report.p_bh[r])},{flag}")
    (out / "pvalues.csv").write_text("\n".join(lines) + "\n")

    rows = [",".join(_fmt(v) for v in row) for row in report.diff_op]
    (out / "ld_matrix.csv").write_text("\n".join(rows) + "\n")

    payload = dict(meta or {})
    payload.update(report.meta())
    (out / "meta.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_connectivity(w: np.ndarray, path) -> None:
    """Dump a connectivity matrix as CSV for inspection."""
    rows = [",".join(_fmt(v) for v in row) for row in np.asarray(w)]
    Path(path).write_text("\n".join(rows) + "\n")
