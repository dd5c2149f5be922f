"""Sparse dataset parsing and construction of the augmented working representation.

Training operates on "working" patterns: each raw instance is rescaled,
augmented with a constant bias coordinate ``rho``, reflected (multiplied by
its label), and implicitly extended by one private slack coordinate of
magnitude ``delta``.  The private coordinates are never materialized; they
only ever contribute ``delta**2`` terms to inner products, which is handled
by the bookkeeping in :mod:`dynmargin.core`.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np


class ParseError(ValueError):
    """Malformed dataset text; carries the offending 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


MAX_FEATURE_INDEX = 2**31 - 1  # indices are stored as int32


@dataclass(frozen=True)
class SparsePattern:
    """One instance: strictly increasing 0-based feature ids, values, and a binary label."""

    indices: np.ndarray
    values: np.ndarray
    label: int

    def __post_init__(self):
        indices = np.asarray(self.indices, dtype=np.int32)
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "values", values)
        if indices.ndim != 1 or values.ndim != 1 or indices.size != values.size:
            raise ValueError("indices and values must be 1-d arrays of equal length")
        if indices.size:
            if indices[0] < 0:
                raise ValueError("feature indices must be non-negative")
            if (np.diff(indices) <= 0).any():
                raise ValueError("feature indices must be strictly increasing")
        if not np.isfinite(values).all():
            raise ValueError("feature values must be finite")
        if self.label not in (-1, 1):
            raise ValueError("label must be +1 or -1")

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def dense(self, dim: int) -> np.ndarray:
        out = np.zeros(dim)
        out[self.indices] = self.values
        return out


@dataclass(frozen=True)
class WorkingDataset:
    """Reflected, augmented, implicitly extended patterns in CSR layout.

    The explicit part of pattern ``k`` is ``[l_k*scale*x_k, l_k*rho]`` stored
    in ``indptr``/``indices``/``values``.  The virtual slack coordinate
    (value ``l_k*delta`` in the pattern's own private dimension) is implicit:
    ``row_sq[k]`` already includes its ``delta**2`` contribution, and weight
    vectors carry per-pattern counts instead of virtual components.

    Immutable after construction; safe to share across concurrent readers.
    """

    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray
    row_sq: np.ndarray
    labels: np.ndarray
    delta: float
    rho: float
    scale: float
    explicit_dim: int
    R: float

    @property
    def m(self) -> int:
        return int(self.labels.size)

    @property
    def delta_sq(self) -> float:
        return self.delta * self.delta

    def explicit_row(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Views of the explicit (index, value) pairs of working pattern k."""
        lo, hi = self.indptr[k], self.indptr[k + 1]
        return self.indices[lo:hi], self.values[lo:hi]

    def explicit_sq(self, k: int) -> float:
        """Squared norm of the explicit part alone (excludes the slack term)."""
        return float(self.row_sq[k]) - self.delta_sq

    def pattern(self, k: int) -> SparsePattern:
        idx, vals = self.explicit_row(k)
        return SparsePattern(idx.copy(), vals.copy(), int(self.labels[k]))

    @property
    def patterns(self) -> list[SparsePattern]:
        """Materialized list of working patterns (intended for small datasets)."""
        return [self.pattern(k) for k in range(self.m)]

    def __iter__(self) -> Iterator[SparsePattern]:
        return iter(self.patterns)


def parse_dataset(text: str | Iterable[str], positive_label: float | None = None) -> list[SparsePattern]:
    """Parse ``<label> <i1>:<v1> <i2>:<v2> ...`` lines into patterns.

    Indices in the text are 1-based and strictly ascending; they are stored
    0-based.  Blank lines and lines starting with ``#`` are skipped.  Labels
    are arbitrary reals: by default any label > 0 maps to +1 and everything
    else to -1.  With ``positive_label`` given, only labels numerically equal
    to it map to +1 (one-vs-rest reduction for multiclass data).

    Raises :class:`ParseError` with the line number on malformed tokens,
    non-ascending indices, or non-finite values.
    """
    lines = text.splitlines() if isinstance(text, str) else text
    patterns = []
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        try:
            raw_label = float(tokens[0])
        except ValueError:
            raise ParseError(line_no, f"invalid label {tokens[0]!r}") from None
        if not math.isfinite(raw_label):
            raise ParseError(line_no, "label must be finite")
        if positive_label is None:
            label = 1 if raw_label > 0 else -1
        else:
            label = 1 if raw_label == positive_label else -1
        idxs: list[int] = []
        vals: list[float] = []
        prev = 0
        for tok in tokens[1:]:
            name, sep, val_s = tok.partition(":")
            if not sep:
                raise ParseError(line_no, f"malformed token {tok!r}")
            try:
                idx = int(name)
                val = float(val_s)
            except ValueError:
                raise ParseError(line_no, f"malformed token {tok!r}") from None
            if not 1 <= idx <= MAX_FEATURE_INDEX:
                raise ParseError(
                    line_no, f"index {idx} out of range (must be in [1, {MAX_FEATURE_INDEX}])"
                )
            if idx <= prev:
                raise ParseError(line_no, f"non-ascending index at {tok!r}")
            if not math.isfinite(val):
                raise ParseError(line_no, f"non-finite value in {tok!r}")
            prev = idx
            idxs.append(idx - 1)
            vals.append(val)
        patterns.append(
            SparsePattern(np.array(idxs, dtype=np.int32), np.array(vals), label)
        )
    return patterns


def load_dataset(path: str, positive_label: float | None = None) -> list[SparsePattern]:
    """Read a sparse text dataset from ``path`` (``-`` reads standard input)."""
    if path == "-":
        return parse_dataset(sys.stdin, positive_label)
    with open(path, "r", encoding="utf-8") as fh:
        return parse_dataset(fh, positive_label)


def build_working(
    patterns: list[SparsePattern],
    delta: float = 0.0,
    rho: float = 1.0,
    scale: float = 1.0,
) -> WorkingDataset:
    """Rescale, augment, reflect, and implicitly extend raw patterns.

    The explicit part of each working pattern is ``[l*scale*x, l*rho]`` with
    the bias coordinate occupying index ``d`` (0-based), where ``d`` is the
    largest feature index seen.  ``R`` is the maximum pattern norm over the
    full (explicit + virtual) space.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    if delta < 0:
        raise ValueError("delta must be non-negative")
    if scale <= 0:
        raise ValueError("scale must be positive")
    m = len(patterns)
    d = 0
    for p in patterns:
        if p.nnz:
            d = max(d, int(p.indices[-1]) + 1)
    explicit_dim = d + 1
    nnz = sum(p.nnz for p in patterns) + m
    indptr = np.zeros(m + 1, dtype=np.int64)
    indices = np.zeros(nnz, dtype=np.int32)
    values = np.zeros(nnz, dtype=np.float64)
    row_sq = np.zeros(m)
    labels = np.zeros(m, dtype=np.int8)
    delta_sq = delta * delta
    pos = 0
    for k, p in enumerate(patterns):
        l = float(p.label)
        n = p.nnz
        indices[pos : pos + n] = p.indices
        values[pos : pos + n] = l * scale * p.values
        indices[pos + n] = d
        values[pos + n] = l * rho
        pos += n + 1
        indptr[k + 1] = pos
        scaled = scale * p.values
        row_sq[k] = float(np.dot(scaled, scaled)) + rho * rho + delta_sq
        labels[k] = p.label
    R = math.sqrt(float(row_sq.max())) if m else 0.0
    return WorkingDataset(
        indptr=indptr,
        indices=indices,
        values=values,
        row_sq=row_sq,
        labels=labels,
        delta=float(delta),
        rho=float(rho),
        scale=float(scale),
        explicit_dim=explicit_dim,
        R=R,
    )


def working_from_rows(
    rows, delta: float = 0.0, labels=None, rho: float = 1.0, scale: float = 1.0
) -> WorkingDataset:
    """Build a working dataset directly from dense explicit rows.

    The rows are trusted as already augmented and reflected; no bias column
    is appended and no sign flips happen.  Useful for constructing exact
    vector configurations in tests and for data prepared elsewhere.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise ValueError("rows must be a 2-d array")
    if delta < 0:
        raise ValueError("delta must be non-negative")
    m, explicit_dim = rows.shape
    if labels is None:
        labels = np.ones(m, dtype=np.int8)
    else:
        labels = np.asarray(labels, dtype=np.int8)
    delta_sq = delta * delta
    indptr = np.zeros(m + 1, dtype=np.int64)
    idx_parts = []
    val_parts = []
    row_sq = np.zeros(m)
    for k in range(m):
        nz = np.nonzero(rows[k])[0]
        idx_parts.append(nz.astype(np.int32))
        val_parts.append(rows[k, nz])
        indptr[k + 1] = indptr[k] + nz.size
        row_sq[k] = float(np.dot(rows[k], rows[k])) + delta_sq
    indices = (
        np.concatenate(idx_parts) if idx_parts else np.zeros(0, dtype=np.int32)
    )
    values = np.concatenate(val_parts) if val_parts else np.zeros(0)
    R = math.sqrt(float(row_sq.max())) if m else 0.0
    return WorkingDataset(
        indptr=indptr,
        indices=indices,
        values=values,
        row_sq=row_sq,
        labels=labels,
        delta=float(delta),
        rho=float(rho),
        scale=float(scale),
        explicit_dim=explicit_dim,
        R=R,
    )


def margin_floor(delta: float, m: int) -> float:
    """Guaranteed lower bound delta/sqrt(m) on the working dataset's margin."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    if m < 1:
        raise ValueError("m must be at least 1")
    return delta / math.sqrt(m)
