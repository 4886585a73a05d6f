"""Ingestion, encoding and fold partitioning of tabular audit data."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "na", "n/a", "nan", "null"})


class SchemaError(ValueError):
    """Raised when a schema does not fit the data it describes."""


class Role(str, Enum):
    LABEL = "label"
    ATTRIBUTE = "attribute"
    FEATURE = "feature"
    PREDICTION = "prediction"
    ID = "id"


@dataclass(frozen=True)
class ColumnRole:
    """Role of one column.

    Prediction columns name the attribute they predict. A prediction column
    with ``class_value`` set holds the probability of that single class;
    without it the column holds hard class predictions.
    """

    role: Role
    attribute: str | None = None
    class_value: str | None = None

    @classmethod
    def parse(cls, spec) -> "ColumnRole":
        """Parse ``label``, ``attribute``, ``feature``, ``id``,
        ``prediction:<attr>`` or ``probability:<attr>:<class>``."""
        if isinstance(spec, ColumnRole):
            return spec
        parts = str(spec).split(":")
        head = parts[0].strip().lower()
        if head == "prediction" and len(parts) == 2:
            return cls(Role.PREDICTION, parts[1])
        if head == "probability" and len(parts) >= 3:
            return cls(Role.PREDICTION, parts[1], ":".join(parts[2:]))
        if head in ("label", "attribute", "feature", "id") and len(parts) == 1:
            return cls(Role(head))
        raise SchemaError(f"unrecognised column role {spec!r}")

    def __str__(self):
        if self.role is Role.PREDICTION:
            if self.class_value is None:
                return f"prediction:{self.attribute}"
            return f"probability:{self.attribute}:{self.class_value}"
        return self.role.value


def _sort_key(value: str):
    try:
        return (0, float(value), value)
    except ValueError:
        return (1, 0.0, value)


@dataclass(frozen=True)
class CategoricalCodec:
    """Bijection between observed raw values and dense codes ``0..K-1``.

    Categories are ordered numerically when they parse as numbers, otherwise
    lexically, so the encoding of a column does not depend on row order.
    """

    categories: tuple

    @classmethod
    def fit(cls, values: Sequence) -> "CategoricalCodec":
        return cls(tuple(sorted({str(v) for v in values}, key=_sort_key)))

    @property
    def n_categories(self) -> int:
        return len(self.categories)

    def encode(self, values) -> np.ndarray:
        index = {c: i for i, c in enumerate(self.categories)}
        try:
            return np.array([index[str(v)] for v in values], dtype=np.int64)
        except KeyError as exc:
            raise SchemaError(
                f"value {exc.args[0]!r} is not among the categories {list(self.categories)}"
            ) from None

    def decode(self, codes) -> list:
        return [self.categories[int(c)] for c in codes]


@dataclass(frozen=True)
class Binned:
    codes: np.ndarray
    edges: np.ndarray
    degenerate: bool


def bin_continuous(column, n_bins: int = 5) -> Binned:
    """Quantile binning; values equal to an edge fall in the lower bin.

    Edges sit at the ``i / n_bins`` empirical quantiles. Bins left empty by
    tied edges are squeezed out so that codes stay dense and monotone.
    """
    if n_bins < 2:
        raise ValueError("n_bins must be at least 2")
    x = np.asarray(column, dtype=float)
    if x.size == 0:
        raise ValueError("cannot bin an empty column")
    if not np.all(np.isfinite(x)):
        raise ValueError("column to bin must be finite")
    if np.all(x == x[0]):
        return Binned(np.zeros(x.size, dtype=np.int64), np.array([]), True)
    edges = np.quantile(x, np.arange(1, n_bins) / n_bins)
    raw = np.searchsorted(edges, x, side="left")
    _, codes = np.unique(raw, return_inverse=True)
    return Binned(codes.astype(np.int64), edges, False)


@dataclass(frozen=True)
class AuditTable:
    """Immutable, role-tagged columns of equal length.

    Categorical columns (label, attributes, hard predictions) are held as
    integer codes with their codec; features and probability columns as
    finite floats.
    """

    n_rows: int
    roles: Mapping[str, ColumnRole]
    codes: Mapping[str, np.ndarray]
    codecs: Mapping[str, CategoricalCodec]
    values: Mapping[str, np.ndarray]
    row_ids: tuple
    dropped: int = 0
    column_order: tuple = field(default=())

    def __post_init__(self):
        labels = [n for n, r in self.roles.items() if r.role is Role.LABEL]
        if len(labels) != 1:
            raise SchemaError(f"exactly one label column is required, got {labels}")
        for name, role in self.roles.items():
            if role.role is Role.PREDICTION and role.attribute not in self.roles:
                raise SchemaError(f"prediction column {name!r} references unknown attribute {role.attribute!r}")
        for name, arr in {**self.codes, **self.values}.items():
            if len(arr) != self.n_rows:
                raise SchemaError(f"column {name!r} has {len(arr)} rows, expected {self.n_rows}")
            arr.setflags(write=False)
        if not self.column_order:
            object.__setattr__(self, "column_order", tuple(self.roles))

    @property
    def label_name(self) -> str:
        return next(n for n, r in self.roles.items() if r.role is Role.LABEL)

    @property
    def label(self) -> np.ndarray:
        return self.codes[self.label_name]

    def names(self, role: Role) -> list:
        return [n for n in self.column_order if self.roles[n].role is role]

    @property
    def attributes(self) -> list:
        return self.names(Role.ATTRIBUTE)

    @property
    def feature_names(self) -> list:
        return self.names(Role.FEATURE)

    def column(self, name: str) -> np.ndarray:
        if name in self.codes:
            return self.codes[name]
        if name in self.values:
            return self.values[name]
        raise SchemaError(f"unknown column {name!r}")

    def features(self, names: Sequence[str] | None = None) -> np.ndarray:
        names = self.feature_names if names is None else list(names)
        if not names:
            return np.empty((self.n_rows, 0))
        for n in names:
            if n not in self.values:
                raise SchemaError(f"{n!r} is not a numeric feature column")
        return np.column_stack([self.values[n] for n in names])

    def prediction_columns(self, attribute: str) -> list:
        return [n for n in self.column_order
                if self.roles[n].role is Role.PREDICTION and self.roles[n].attribute == attribute]

    @classmethod
    def from_arrays(cls, label, attributes: Mapping | None = None,
                    features: Mapping | None = None, label_name: str = "y",
                    row_ids: Sequence | None = None) -> "AuditTable":
        """Build a table from in-memory columns (raw values, not codes)."""
        raw: dict = {label_name: list(label)}
        roles: dict = {label_name: ColumnRole(Role.LABEL)}
        for name, col in (attributes or {}).items():
            raw[name] = list(col)
            roles[name] = ColumnRole(Role.ATTRIBUTE)
        for name, col in (features or {}).items():
            raw[name] = list(col)
            roles[name] = ColumnRole(Role.FEATURE)
        n = len(raw[label_name])
        ids = [str(i) for i in range(n)] if row_ids is None else [str(r) for r in row_ids]
        return _build(raw, roles, ids, dropped=0)

    def to_csv(self, path) -> None:
        """Write decoded values back out; re-ingesting with ``schema()`` round-trips."""
        path = Path(path)
        names = list(self.column_order)
        id_name = self._id_column_name()
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow([id_name] + names)
            decoded = {n: self.codecs[n].decode(c) for n, c in self.codes.items()}
            for i in range(self.n_rows):
                row = [self.row_ids[i]]
                for n in names:
                    row.append(decoded[n][i] if n in decoded else repr(float(self.values[n][i])))
                writer.writerow(row)

    def _id_column_name(self) -> str:
        return "row_id" if "row_id" not in self.roles else "_row_id"

    def schema(self) -> dict:
        """Role schema matching the layout written by ``to_csv``."""
        return {self._id_column_name(): "id", **{n: str(r) for n, r in self.roles.items()}}


def _build(raw: dict, roles: dict, row_ids: list, dropped: int) -> AuditTable:
    codes, codecs, values = {}, {}, {}
    for name, role in roles.items():
        col = raw[name]
        if role.role is Role.FEATURE or (role.role is Role.PREDICTION and role.class_value is not None):
            arr = np.empty(len(col))
            for i, v in enumerate(col):
                try:
                    arr[i] = float(v)
                except (TypeError, ValueError):
                    raise SchemaError(f"column {name!r} row {i}: cannot parse {v!r} as a number") from None
            if not np.all(np.isfinite(arr)):
                raise SchemaError(f"column {name!r} contains non-finite values")
            values[name] = arr
        else:
            codec = CategoricalCodec.fit(col)
            codecs[name] = codec
            codes[name] = codec.encode(col)
    label = next(n for n, r in roles.items() if r.role is Role.LABEL)
    if codecs[label].n_categories < 2:
        raise SchemaError(f"label column {label!r} is constant")
    return AuditTable(
        n_rows=len(row_ids),
        roles=dict(roles),
        codes=codes,
        codecs=codecs,
        values=values,
        row_ids=tuple(row_ids),
        dropped=dropped,
        column_order=tuple(roles),
    )


def _is_missing(value: str) -> bool:
    return value.strip().lower() in MISSING_TOKENS


def ingest_csv(path, schema: Mapping[str, object]) -> AuditTable:
    """Read a headed CSV and validate it against a role schema.

    Columns absent from the schema are ignored. Rows with a missing cell in
    any schema column are dropped; the count is logged and kept on the table.
    """
    path = Path(path)
    roles = {name: ColumnRole.parse(spec) for name, spec in schema.items()}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: file is empty") from None
        missing = [n for n in roles if n not in header]
        if missing:
            raise SchemaError(f"{path}: schema columns not in header: {missing}")
        pos = {n: header.index(n) for n in roles}
        id_cols = [n for n, r in roles.items() if r.role is Role.ID]
        if len(id_cols) > 1:
            raise SchemaError("at most one id column is allowed")
        kept = {n: [] for n in roles if roles[n].role is not Role.ID}
        row_ids, dropped = [], 0
        for line_no, row in enumerate(reader):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(f"{path}: data row {line_no} has {len(row)} fields, header has {len(header)}")
            cells = {n: row[p].strip() for n, p in pos.items()}
            if any(_is_missing(v) for v in cells.values()):
                dropped += 1
                continue
            row_ids.append(cells[id_cols[0]] if id_cols else str(line_no))
            for n in kept:
                kept[n].append(cells[n])
    if dropped:
        logger.warning("%s: dropped %d row(s) with missing cells", path, dropped)
    if not row_ids:
        raise SchemaError(f"{path}: no complete rows")
    if id_cols and len(set(row_ids)) != len(row_ids):
        raise SchemaError(f"{path}: id column {id_cols[0]!r} has duplicate values")
    return _build(kept, {n: r for n, r in roles.items() if r.role is not Role.ID}, row_ids, dropped)


@dataclass(frozen=True)
class FoldAssignment:
    fold_id: np.ndarray
    k: int
    small_cells: tuple = ()

    def indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_id == fold)


def stratified_folds(strata, k: int, seed) -> FoldAssignment:
    """Deal shuffled rows of each stratum round-robin into ``k`` folds.

    Each stratum starts where the previous one stopped so fold sizes stay
    within one of each other overall as well as per stratum.
    """
    if k < 2:
        raise ValueError("fold count k must be at least 2")
    strata = np.asarray(strata, dtype=np.int64)
    rng = np.random.default_rng(seed)
    fold_id = np.empty(strata.size, dtype=np.int64)
    offset = 0
    small = []
    for cell in np.unique(strata):
        idx = np.flatnonzero(strata == cell)
        if idx.size < k:
            small.append(int(cell))
        idx = rng.permutation(idx)
        fold_id[idx] = (offset + np.arange(idx.size)) % k
        offset = (offset + idx.size) % k
    return FoldAssignment(fold_id, k, tuple(small))


def assign_folds(table: AuditTable, attribute: str, k: int = 3, seed=0) -> FoldAssignment:
    """k folds stratified on the joint (attribute, label) cell."""
    a = table.codes[attribute]
    y = table.label
    n_y = table.codecs[table.label_name].n_categories
    folds = stratified_folds(a * n_y + y, k, seed)
    if folds.small_cells:
        cells = [(table.codecs[attribute].categories[c // n_y],
                  table.codecs[table.label_name].categories[c % n_y]) for c in folds.small_cells]
        logger.warning("attribute %r: (attribute, label) cells with fewer than %d rows: %s",
                       attribute, k, cells)
        folds = FoldAssignment(folds.fold_id, k, tuple(cells))
    return folds


def stratified_split(strata, holdout: float, seed) -> tuple:
    """Split row positions into (keep, holdout), holding out ``holdout`` of each stratum."""
    strata = np.asarray(strata)
    rng = np.random.default_rng(seed)
    keep, held = [], []
    for cell in np.unique(strata):
        idx = rng.permutation(np.flatnonzero(strata == cell))
        n_hold = int(math.floor(holdout * idx.size + 0.5))
        if idx.size >= 2:
            n_hold = min(max(n_hold, 1), idx.size - 1)
        else:
            n_hold = 0
        held.append(idx[:n_hold])
        keep.append(idx[n_hold:])
    return np.sort(np.concatenate(keep)), np.sort(np.concatenate(held))


def with_binned_attribute(table: AuditTable, name: str, n_bins: int = 5) -> AuditTable:
    """Replace a numeric column by its quantile-binned codes as an attribute.

    Bin categories are labelled ``q0``, ``q1``, ... in increasing order.
    """
    if name not in table.values:
        raise SchemaError(f"{name!r} is not a numeric column")
    binned = bin_continuous(table.values[name], n_bins)
    if binned.degenerate:
        logger.warning("column %r is constant; binned into a single category", name)
    k = int(binned.codes.max()) + 1
    codec = CategoricalCodec(tuple(f"q{i}" for i in range(k)))
    values = {n: v for n, v in table.values.items() if n != name}
    return AuditTable(
        n_rows=table.n_rows,
        roles={**table.roles, name: ColumnRole(Role.ATTRIBUTE)},
        codes={**table.codes, name: binned.codes},
        codecs={**table.codecs, name: codec},
        values=values,
        row_ids=table.row_ids,
        dropped=table.dropped,
        column_order=table.column_order,
    )
