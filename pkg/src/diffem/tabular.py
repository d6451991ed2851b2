"""Typed tabular data and its mapping to the continuous encoded space.

Categorical columns become analog bits (binary codes treated as reals),
every encoded dimension is standardized with statistics of its observed
entries, and missing entries start at 0, the observed mean.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import SchemaError, ShapeError

log = logging.getLogger(__name__)

NUMERIC = "numeric"
CATEGORICAL = "categorical"


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    categories: tuple = ()

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        object.__setattr__(self, "categories", tuple(str(c) for c in self.categories))
        if self.kind == CATEGORICAL:
            if len(self.categories) < 2:
                raise SchemaError(f"categorical column {self.name!r} needs >= 2 categories")
            if len(set(self.categories)) != len(self.categories):
                raise SchemaError(f"categorical column {self.name!r} has duplicate categories")
        elif self.categories:
            raise SchemaError(f"numeric column {self.name!r} cannot list categories")

    @property
    def width(self) -> int:
        return 1 if self.kind == NUMERIC else bit_width(len(self.categories))

    def to_json(self) -> dict:
        out = {"name": self.name, "kind": self.kind}
        if self.kind == CATEGORICAL:
            out["categories"] = list(self.categories)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ColumnSpec":
        return cls(obj["name"], obj["kind"], tuple(obj.get("categories", ())))


@dataclass(frozen=True)
class TabularDataset:
    """Column-typed table with a per-cell missing flag.

    Numeric columns are float arrays, categorical columns object arrays of
    category strings. Values under a missing flag are ignored (NaN/None by
    convention).
    """

    specs: tuple
    columns: tuple
    missing: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "specs", tuple(self.specs))
        object.__setattr__(self, "columns", tuple(self.columns))
        missing = np.asarray(self.missing, dtype=bool)
        object.__setattr__(self, "missing", missing)
        if len(self.specs) != len(self.columns):
            raise SchemaError(f"{len(self.specs)} specs for {len(self.columns)} columns")
        n = missing.shape[0]
        if missing.shape != (n, len(self.specs)):
            raise ShapeError(f"missing flags shape {missing.shape} does not match table")
        for j, (spec, col) in enumerate(zip(self.specs, self.columns)):
            if len(col) != n:
                raise ShapeError(f"column {spec.name!r} has {len(col)} rows, expected {n}")
            obs = ~missing[:, j]
            if spec.kind == NUMERIC:
                if not np.all(np.isfinite(np.asarray(col, dtype=np.float64)[obs])):
                    raise SchemaError(f"column {spec.name!r} has non-finite observed values")
            else:
                allowed = set(spec.categories)
                bad = {v for v in np.asarray(col, dtype=object)[obs] if v not in allowed}
                if bad:
                    raise SchemaError(
                        f"column {spec.name!r} has values outside its categories: {sorted(map(str, bad))}"
                    )

    @property
    def n_rows(self) -> int:
        return self.missing.shape[0]

    @property
    def names(self) -> list:
        return [s.name for s in self.specs]

    def take(self, rows) -> "TabularDataset":
        rows = np.asarray(rows)
        return TabularDataset(self.specs, [c[rows] for c in self.columns], self.missing[rows])

    def with_missing(self, mask) -> "TabularDataset":
        """Copy with ``mask`` (True = missing) applied on top of existing flags."""
        mask = np.asarray(mask, dtype=bool) | self.missing
        cols = []
        for j, (spec, col) in enumerate(zip(self.specs, self.columns)):
            col = col.copy()
            col[mask[:, j]] = np.nan if spec.kind == NUMERIC else None
            cols.append(col)
        return TabularDataset(self.specs, cols, mask)


def bit_width(n_categories: int) -> int:
    """``ceil(log2 C)`` for ``C >= 2``."""
    return (n_categories - 1).bit_length()


def analog_bits(index: int, n_categories: int) -> np.ndarray:
    """Big-endian binary code of ``index`` as a float vector."""
    if n_categories < 2:
        raise ValueError(f"need at least 2 categories, got {n_categories}")
    if not 0 <= index < n_categories:
        raise ValueError(f"category index {index} out of range for {n_categories} categories")
    width = bit_width(n_categories)
    return np.array([(index >> (width - 1 - k)) & 1 for k in range(width)], dtype=np.float64)


def analog_bits_decode(vec, n_categories: int) -> int:
    """Threshold at 0.5, read as big-endian binary, clamp to ``C - 1``."""
    bits = np.asarray(vec, dtype=np.float64) > 0.5
    if bits.shape != (bit_width(n_categories),):
        raise ShapeError(f"expected {bit_width(n_categories)} bits, got shape {bits.shape}")
    value = 0
    for b in bits:
        value = (value << 1) | int(b)
    return min(value, n_categories - 1)


def _bits_matrix(indices: np.ndarray, n_categories: int) -> np.ndarray:
    width = bit_width(n_categories)
    shifts = np.arange(width - 1, -1, -1)
    return ((indices[:, None] >> shifts) & 1).astype(np.float64)


def _decode_bits_matrix(values: np.ndarray, n_categories: int) -> np.ndarray:
    bits = (values > 0.5).astype(np.int64)
    weights = 1 << np.arange(bits.shape[1] - 1, -1, -1)
    return np.minimum(bits @ weights, n_categories - 1)


@dataclass(frozen=True)
class EncodedMatrix:
    """Standardized encoded table.

    ``mask`` is 1.0 where the cell was missing. ``spans[j]`` is the
    ``(start, stop)`` range of column ``j`` in the encoded width.
    """

    values: np.ndarray
    mask: np.ndarray
    specs: tuple
    spans: tuple
    col_means: np.ndarray
    col_stds: np.ndarray

    @property
    def shape(self):
        return self.values.shape

    def with_values(self, values) -> "EncodedMatrix":
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.values.shape:
            raise ShapeError(f"values shape {values.shape} != {self.values.shape}")
        return replace(self, values=values)

    def take(self, rows) -> "EncodedMatrix":
        rows = np.asarray(rows)
        return replace(self, values=self.values[rows], mask=self.mask[rows])

    def numeric_dims(self) -> np.ndarray:
        return np.array(
            [self.spans[j][0] for j, s in enumerate(self.specs) if s.kind == NUMERIC], dtype=np.int64
        )

    def cell_mask(self) -> np.ndarray:
        """Per-cell (not per-dim) missing flags."""
        return np.stack([self.mask[:, a] != 0 for a, _ in self.spans], axis=1)


def _spans(specs) -> tuple:
    spans, pos = [], 0
    for s in specs:
        spans.append((pos, pos + s.width))
        pos += s.width
    return tuple(spans)


def _raw_matrix(ds: TabularDataset, spans) -> np.ndarray:
    width = spans[-1][1] if spans else 0
    raw = np.zeros((ds.n_rows, width))
    for j, (spec, col) in enumerate(zip(ds.specs, ds.columns)):
        a, b = spans[j]
        obs = ~ds.missing[:, j]
        if spec.kind == NUMERIC:
            raw[obs, a] = np.asarray(col, dtype=np.float64)[obs]
        else:
            lookup = {c: i for i, c in enumerate(spec.categories)}
            idx = np.array([lookup[v] for v in np.asarray(col, dtype=object)[obs]], dtype=np.int64)
            raw[obs, a:b] = _bits_matrix(idx, len(spec.categories))
    return raw


def encode(ds: TabularDataset, reference: Optional[EncodedMatrix] = None) -> EncodedMatrix:
    """Encode and standardize ``ds``.

    Without ``reference`` the statistics come from ``ds``'s observed cells.
    With ``reference`` (e.g. the training split) its specs, means and stds
    are reused, so test rows land in the same space.
    """
    if reference is not None:
        if [s.name for s in reference.specs] != ds.names:
            raise SchemaError(f"columns {ds.names} do not match reference {[s.name for s in reference.specs]}")
        for spec, ref in zip(ds.specs, reference.specs):
            if spec.kind != ref.kind:
                raise SchemaError(f"column {spec.name!r} is {spec.kind}, reference has {ref.kind}")
            if spec.kind == CATEGORICAL and spec.categories != ref.categories:
                unseen = [c for c in spec.categories if c not in ref.categories]
                if unseen:
                    raise SchemaError(f"column {spec.name!r} has categories unseen in training: {unseen}")
        ds = TabularDataset(reference.specs, ds.columns, ds.missing)

    specs = ds.specs
    spans = _spans(specs)
    raw = _raw_matrix(ds, spans)
    mask = np.zeros_like(raw)
    for j, (a, b) in enumerate(spans):
        mask[:, a:b] = ds.missing[:, j][:, None]

    if reference is None:
        means = np.zeros(raw.shape[1])
        stds = np.ones(raw.shape[1])
        for j, (a, b) in enumerate(spans):
            obs = ~ds.missing[:, j]
            if not obs.any():
                raise SchemaError(f"column {specs[j].name!r} has no observed cells")
            block = raw[obs, a:b]
            means[a:b] = block.mean(axis=0)
            sd = block.std(axis=0)
            flat = sd == 0
            if flat.any():
                log.warning("column %r has zero spread in %d encoded dim(s); using std 1",
                            specs[j].name, int(flat.sum()))
                sd[flat] = 1.0
            stds[a:b] = sd
    else:
        means, stds = reference.col_means, reference.col_stds

    values = (raw - means) / stds
    values[mask != 0] = 0.0
    return EncodedMatrix(values, mask, specs, spans, means.copy(), stds.copy())


def decode(em: EncodedMatrix, specs: Optional[Sequence[ColumnSpec]] = None) -> TabularDataset:
    """Map encoded values back to a table with every cell filled in."""
    specs = tuple(specs) if specs is not None else em.specs
    if _spans(specs) != em.spans:
        raise SchemaError("column specs do not match the encoded spans")
    raw = em.values * em.col_stds + em.col_means
    cols = []
    for spec, (a, b) in zip(specs, em.spans):
        if spec.kind == NUMERIC:
            cols.append(raw[:, a].copy())
        else:
            idx = _decode_bits_matrix(raw[:, a:b], len(spec.categories))
            cols.append(np.array(spec.categories, dtype=object)[idx])
    return TabularDataset(specs, cols, np.zeros((em.shape[0], len(specs)), dtype=bool))


# --- CSV and schema files -------------------------------------------------


def load_schema(path) -> tuple:
    with open(path) as fh:
        obj = json.load(fh)
    cols = obj["columns"] if isinstance(obj, dict) else obj
    return tuple(ColumnSpec.from_json(c) for c in cols)


def save_schema(specs, path) -> None:
    with open(path, "w") as fh:
        json.dump({"columns": [s.to_json() for s in specs]}, fh, indent=2)
        fh.write("\n")


def _is_float(text: str) -> bool:
    try:
        return math.isfinite(float(text))
    except ValueError:
        return False


def infer_specs(header, rows) -> tuple:
    """Numeric when every non-empty cell parses as a finite float; categories in order of appearance."""
    specs = []
    for j, name in enumerate(header):
        cells = [r[j] for r in rows if r[j] != ""]
        if cells and all(_is_float(c) for c in cells):
            specs.append(ColumnSpec(name, NUMERIC))
            log.info("inferred column %r as numeric", name)
        else:
            cats = list(dict.fromkeys(cells))
            while len(cats) < 2:
                cats.append(f"__{name}_other{len(cats)}__")
            specs.append(ColumnSpec(name, CATEGORICAL, tuple(cats)))
            log.info("inferred column %r as categorical with %d categories", name, len(cats))
    return tuple(specs)


def read_csv(path, specs: Optional[Sequence[ColumnSpec]] = None) -> TabularDataset:
    """Read a CSV with a header row; empty cells are missing."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        rows = [r for r in reader if r]
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise SchemaError(f"{path}: row {i + 2} has {len(r)} cells, header has {len(header)}")
    if specs is None:
        specs = infer_specs(header, rows)
    specs = tuple(specs)
    if [s.name for s in specs] != header:
        raise SchemaError(f"{path}: header {header} does not match schema {[s.name for s in specs]}")
    n = len(rows)
    missing = np.array([[c == "" for c in r] for r in rows], dtype=bool).reshape(n, len(header))
    cols = []
    for j, spec in enumerate(specs):
        if spec.kind == NUMERIC:
            try:
                cols.append(np.array([float(r[j]) if r[j] != "" else np.nan for r in rows]))
            except ValueError as exc:
                raise SchemaError(f"{path}: column {spec.name!r}: {exc}") from None
        else:
            cols.append(np.array([r[j] if r[j] != "" else None for r in rows], dtype=object))
    return TabularDataset(specs, cols, missing)


def format_number(v: float) -> str:
    return repr(float(v))


def write_csv(ds: TabularDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ds.names)
        for i in range(ds.n_rows):
            row = []
            for j, spec in enumerate(ds.specs):
                if ds.missing[i, j]:
                    row.append("")
                elif spec.kind == NUMERIC:
                    row.append(format_number(ds.columns[j][i]))
                else:
                    row.append(str(ds.columns[j][i]))
            w.writerow(row)


def from_matrix(x, names=None, missing=None) -> TabularDataset:
    """All-numeric dataset from a 2-D array."""
    x = np.asarray(x, dtype=np.float64)
    names = names or [f"x{j + 1}" for j in range(x.shape[1])]
    if missing is None:
        missing = np.zeros(x.shape, dtype=bool)
    specs = [ColumnSpec(n, NUMERIC) for n in names]
    return TabularDataset(specs, [x[:, j].copy() for j in range(x.shape[1])], missing)


def numeric_matrix(ds: TabularDataset) -> np.ndarray:
    """Raw numeric values (NaN where missing); categorical columns as category indices."""
    out = np.empty((ds.n_rows, len(ds.specs)))
    for j, (spec, col) in enumerate(zip(ds.specs, ds.columns)):
        if spec.kind == NUMERIC:
            out[:, j] = np.asarray(col, dtype=np.float64)
        else:
            lookup = {c: i for i, c in enumerate(spec.categories)}
            out[:, j] = [lookup.get(v, np.nan) for v in col]
        out[ds.missing[:, j], j] = np.nan
    return out
