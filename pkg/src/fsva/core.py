"""Dense data model shared by every stage: expression matrices, outcome
labels, design matrices, and the delimited text formats used on disk.

Features are rows and samples are columns throughout.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Hashable, Sequence

import numpy as np

log = logging.getLogger(__name__)


class ParseError(ValueError):
    """Malformed delimited input. The message names the offending row/column."""


def _readonly(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def _check_unique(ids: Sequence[str], what: str) -> None:
    seen = set()
    dups = []
    for i in ids:
        if i in seen:
            dups.append(i)
        seen.add(i)
    if dups:
        raise ValueError(f"duplicate {what} ids: {sorted(set(dups))[:10]}")


@dataclass(frozen=True, eq=False)
class ExpressionMatrix:
    """m features x n samples of finite real values."""

    values: np.ndarray
    feature_ids: tuple
    sample_ids: tuple

    def __post_init__(self):
        values = _readonly(self.values)
        if values.ndim != 2:
            raise ValueError(f"expression values must be 2-D, got shape {values.shape}")
        m, n = values.shape
        if m < 1 or n < 1:
            raise ValueError(f"expression matrix must be non-empty, got {m}x{n}")
        if not np.all(np.isfinite(values)):
            i, j = np.argwhere(~np.isfinite(values))[0]
            raise ValueError(f"non-finite value at feature row {i}, sample column {j}")
        fids = tuple(str(f) for f in self.feature_ids)
        sids = tuple(str(s) for s in self.sample_ids)
        if len(fids) != m or len(sids) != n:
            raise ValueError(
                f"id lengths ({len(fids)}, {len(sids)}) do not match matrix shape {values.shape}"
            )
        _check_unique(fids, "feature")
        _check_unique(sids, "sample")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "feature_ids", fids)
        object.__setattr__(self, "sample_ids", sids)

    @classmethod
    def from_array(cls, values, feature_ids=None, sample_ids=None, sample_prefix="s"):
        values = np.asarray(values, dtype=float)
        m, n = values.shape
        if feature_ids is None:
            feature_ids = [f"f{i + 1:0{len(str(m))}d}" for i in range(m)]
        if sample_ids is None:
            sample_ids = [f"{sample_prefix}{j + 1:0{len(str(n))}d}" for j in range(n)]
        return cls(values, tuple(feature_ids), tuple(sample_ids))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def with_values(self, values) -> "ExpressionMatrix":
        return ExpressionMatrix(values, self.feature_ids, self.sample_ids)

    def select_samples(self, idx) -> "ExpressionMatrix":
        idx = np.asarray(idx)
        return ExpressionMatrix(
            self.values[:, idx], self.feature_ids, tuple(self.sample_ids[j] for j in idx)
        )

    def hstack(self, other: "ExpressionMatrix") -> "ExpressionMatrix":
        if other.feature_ids != self.feature_ids:
            raise ValueError("cannot concatenate matrices with different feature registries")
        return ExpressionMatrix(
            np.hstack([self.values, other.values]),
            self.feature_ids,
            self.sample_ids + other.sample_ids,
        )

    def __eq__(self, other):
        if not isinstance(other, ExpressionMatrix):
            return NotImplemented
        return (
            self.feature_ids == other.feature_ids
            and self.sample_ids == other.sample_ids
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


@dataclass(frozen=True)
class OutcomeLabels:
    labels: tuple
    class_set: tuple = ()

    def __post_init__(self):
        labels = tuple(self.labels)
        class_set = tuple(self.class_set) if self.class_set else tuple(sorted(set(labels)))
        if len(set(class_set)) != len(class_set):
            raise ValueError("class_set contains duplicates")
        unknown = set(labels) - set(class_set)
        if unknown:
            raise ValueError(f"labels not in class_set: {sorted(map(str, unknown))}")
        missing = [c for c in class_set if c not in set(labels)]
        if missing:
            raise ValueError(f"classes with no samples: {missing}")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_set", class_set)

    def __len__(self):
        return len(self.labels)

    @property
    def codes(self) -> np.ndarray:
        """Integer index of each label into class_set."""
        lookup = {c: k for k, c in enumerate(self.class_set)}
        return np.array([lookup[y] for y in self.labels], dtype=int)

    def subset(self, idx) -> "OutcomeLabels":
        # class_set is re-derived so classes absent from the subset are dropped
        sub = [self.labels[j] for j in idx]
        return OutcomeLabels(tuple(sub), tuple(c for c in self.class_set if c in set(sub)))


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    values: np.ndarray
    includes_intercept: bool = True

    def __post_init__(self):
        object.__setattr__(self, "values", _readonly(np.atleast_2d(self.values)))

    @property
    def p1(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Dataset:
    expr: ExpressionMatrix
    outcomes: OutcomeLabels
    batch: tuple | None = None

    def __post_init__(self):
        if len(self.outcomes) != self.expr.n:
            raise ValueError(
                f"{len(self.outcomes)} outcome labels for {self.expr.n} samples"
            )
        if self.batch is not None:
            object.__setattr__(self, "batch", tuple(self.batch))
            if len(self.batch) != self.expr.n:
                raise ValueError(f"{len(self.batch)} batch labels for {self.expr.n} samples")


def encode_design(outcomes: OutcomeLabels) -> DesignMatrix:
    """Intercept row followed by 0/1 indicators for classes 2..K."""
    k = len(outcomes.class_set)
    if k < 2:
        raise ValueError("degenerate design: fewer than two outcome classes")
    codes = outcomes.codes
    rows = [np.ones(len(codes))]
    rows += [(codes == c).astype(float) for c in range(1, k)]
    return DesignMatrix(np.vstack(rows), includes_intercept=True)


# ---------------------------------------------------------------------------
# Delimited text I/O
# ---------------------------------------------------------------------------

def _detect_delimiter(header: str) -> str:
    return "\t" if "\t" in header else ","


def _data_lines(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            yield lineno, line


def read_matrix(path, delimiter: str | None = None) -> ExpressionMatrix:
    """Parse a feature-by-sample matrix.

    The header is ``feature_id<d>sample_1<d>...``; each following line is one
    feature id and its n values. The delimiter (tab or comma) is detected from
    the header unless given.
    """
    path = Path(path)
    lines = _data_lines(path)
    try:
        _, header = next(lines)
    except StopIteration:
        raise ParseError(f"{path}: empty file") from None
    delim = delimiter or _detect_delimiter(header)
    sample_ids = [s.strip() for s in header.split(delim)[1:]]
    n = len(sample_ids)
    if n == 0:
        raise ParseError(f"{path}: header has no sample columns")
    dup = [s for s in set(sample_ids) if sample_ids.count(s) > 1]
    if dup:
        raise ParseError(f"{path}: duplicate sample ids in header: {sorted(dup)}")

    feature_ids, rows, seen = [], [], {}
    for lineno, line in lines:
        cells = line.split(delim)
        fid = cells[0].strip()
        if len(cells) - 1 != n:
            raise ParseError(
                f"{path}: line {lineno} (feature {fid!r}) has {len(cells) - 1} values, expected {n}"
            )
        if fid in seen:
            raise ParseError(
                f"{path}: line {lineno}: duplicate feature id {fid!r} (first at line {seen[fid]})"
            )
        seen[fid] = lineno
        row = []
        for col, cell in enumerate(cells[1:]):
            try:
                v = float(cell)
            except ValueError:
                v = None
            if v is None or not np.isfinite(v):
                raise ParseError(
                    f"{path}: line {lineno}, column {col + 2} (feature {fid!r}, sample "
                    f"{sample_ids[col]!r}): invalid value {cell.strip()!r}"
                )
            row.append(v)
        feature_ids.append(fid)
        rows.append(row)
    if not rows:
        raise ParseError(f"{path}: no feature rows")
    return ExpressionMatrix(np.array(rows, dtype=float), tuple(feature_ids), tuple(sample_ids))


def write_matrix(expr: ExpressionMatrix, path, delimiter: str = "\t", header_comment: str | None = None) -> None:
    # repr() of a Python float is the shortest string that round-trips exactly
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write(delimiter.join(("feature_id",) + expr.sample_ids) + "\n")
        for fid, row in zip(expr.feature_ids, expr.values.tolist()):
            fh.write(delimiter.join([fid] + [repr(v) for v in row]) + "\n")


def read_sample_table(path, column: str = "label") -> dict:
    """Read a two-column ``sample_id<d>value`` file into a dict keyed by sample id."""
    path = Path(path)
    out = {}
    delim = None
    for lineno, line in _data_lines(path):
        delim = delim or _detect_delimiter(line)
        cells = [c.strip() for c in line.split(delim)]
        if len(cells) != 2:
            raise ParseError(f"{path}: line {lineno} has {len(cells)} columns, expected 2")
        if not out and cells[0] == "sample_id":
            continue
        sid, val = cells
        if sid in out:
            raise ParseError(f"{path}: line {lineno}: duplicate sample id {sid!r}")
        out[sid] = val
    return out


def write_sample_table(ids: Sequence[str], values: Sequence[Hashable], path, column="label", delimiter="\t") -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"sample_id{delimiter}{column}\n")
        for sid, v in zip(ids, values):
            fh.write(f"{sid}{delimiter}{v}\n")


def read_labels(path, sample_ids: Sequence[str]) -> OutcomeLabels:
    """Outcome labels for `sample_ids`, joined by id from a labels file."""
    table = read_sample_table(path)
    missing = [s for s in sample_ids if s not in table]
    if missing:
        raise ParseError(f"{path}: no label for samples {missing[:10]}")
    return OutcomeLabels(tuple(table[s] for s in sample_ids))


def align_features(train_features: Sequence[str], new_sample: ExpressionMatrix) -> ExpressionMatrix:
    """Reorder rows of `new_sample` to the training feature order.

    Features not in the training registry are dropped (logged as a count);
    any training feature absent from `new_sample` is an error.
    """
    train_features = tuple(train_features)
    if new_sample.feature_ids == train_features:
        return new_sample
    index = {f: i for i, f in enumerate(new_sample.feature_ids)}
    missing = [f for f in train_features if f not in index]
    if missing:
        raise ValueError(
            f"{len(missing)} training features missing from new samples: {missing[:20]}"
        )
    extra = new_sample.m - len(train_features)
    if extra:
        log.warning("dropping %d features not present in the training registry", extra)
    rows = np.fromiter((index[f] for f in train_features), dtype=int, count=len(train_features))
    return ExpressionMatrix(new_sample.values[rows], train_features, new_sample.sample_ids)
