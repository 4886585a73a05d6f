"""Plug-in information measures on contingency tables.

All quantities are in nats. The adjusted statistics subtract the expected
mutual information under the hypergeometric permutation model (fixed
marginals) and rescale by an entropy bound, so that independent variables
score close to 0 at any sample size and identical variables score 1.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np
from scipy.special import gammaln

NORMALIZERS = ("max", "mean", "min")
_DEGENERATE_TOL = 1e-12


@dataclass(frozen=True)
class ContingencyTable:
    """I x J joint count matrix of two categorical variables."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise ValueError(f"contingency counts must be 2-D, got shape {counts.shape}")
        if np.any(counts < 0):
            raise ValueError("contingency counts must be non-negative")
        if counts.sum() <= 0:
            raise ValueError("contingency table must hold at least one observation")
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_codes(cls, x, y, n_x: int | None = None, n_y: int | None = None) -> "ContingencyTable":
        x = np.asarray(x, dtype=np.int64)
        y = np.asarray(y, dtype=np.int64)
        if x.shape != y.shape:
            raise ValueError("code arrays must have equal length")
        if x.size == 0:
            raise ValueError("cannot build a contingency table from empty arrays")
        n_x = int(x.max()) + 1 if n_x is None else n_x
        n_y = int(y.max()) + 1 if n_y is None else n_y
        flat = np.bincount(x * n_y + y, minlength=n_x * n_y)
        return cls(flat.reshape(n_x, n_y))

    @property
    def row_marginals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_marginals(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def total(self):
        return self.counts.sum()

    def transpose(self) -> "ContingencyTable":
        return ContingencyTable(self.counts.T)


@dataclass(frozen=True)
class StratifiedTables:
    """One contingency table per value of a conditioning variable.

    Strata with no observations are dropped at construction.
    """

    tables: tuple

    def __post_init__(self):
        if len(self.tables) == 0:
            raise ValueError("at least one non-empty stratum is required")

    @classmethod
    def from_codes(cls, x, y, z) -> "StratifiedTables":
        """Tables of (x, y) within each stratum of z."""
        x = np.asarray(x, dtype=np.int64)
        y = np.asarray(y, dtype=np.int64)
        z = np.asarray(z, dtype=np.int64)
        if not (x.shape == y.shape == z.shape):
            raise ValueError("code arrays must have equal length")
        if x.size == 0:
            raise ValueError("cannot stratify empty arrays")
        n_x, n_y, n_z = int(x.max()) + 1, int(y.max()) + 1, int(z.max()) + 1
        cube = np.bincount((z * n_x + x) * n_y + y, minlength=n_z * n_x * n_y)
        cube = cube.reshape(n_z, n_x, n_y)
        return cls(tuple(ContingencyTable(t) for t in cube if t.sum() > 0))

    @property
    def sizes(self) -> np.ndarray:
        return np.array([t.total for t in self.tables])

    @property
    def total(self):
        return self.sizes.sum()

    @property
    def weights(self) -> np.ndarray:
        sizes = self.sizes.astype(float)
        return sizes / sizes.sum()


@dataclass(frozen=True)
class AdjustedStatistic:
    raw: float
    expected_under_chance: float
    normalizer: float
    adjusted: float
    degenerate: bool

    def to_dict(self) -> dict:
        return {
            "raw": self.raw,
            "expected_under_chance": self.expected_under_chance,
            "normalizer": self.normalizer,
            "adjusted": self.adjusted,
            "degenerate": self.degenerate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AdjustedStatistic":
        return cls(
            raw=float(d["raw"]),
            expected_under_chance=float(d["expected_under_chance"]),
            normalizer=float(d["normalizer"]),
            adjusted=float(d["adjusted"]),
            degenerate=bool(d["degenerate"]),
        )


def _as_counts(table) -> np.ndarray:
    if isinstance(table, ContingencyTable):
        return table.counts
    return ContingencyTable(np.asarray(table)).counts


def entropy(counts) -> float:
    """Plug-in Shannon entropy of a count vector, with 0 ln 0 = 0."""
    counts = np.asarray(counts, dtype=float).ravel()
    if counts.size == 0:
        raise ValueError("entropy of an empty count vector is undefined")
    if np.any(counts < 0):
        raise ValueError("counts must be non-negative")
    total = counts.sum()
    if total <= 0:
        raise ValueError("entropy requires a positive total count")
    nz = counts[counts > 0]
    return float(-np.sum(nz / total * (np.log(nz) - np.log(total))))


def mutual_information(table) -> float:
    """Plug-in MI of a contingency table (nats).

    Accepts a ``ContingencyTable`` or a 2-D array of counts; non-integer
    counts are allowed, which is how expected tables are scored.
    """
    counts = _as_counts(table).astype(float)
    n = counts.sum()
    a = counts.sum(axis=1)
    b = counts.sum(axis=0)
    i, j = np.nonzero(counts)
    nij = counts[i, j]
    mi = np.sum(nij / n * (np.log(nij) + np.log(n) - np.log(a[i]) - np.log(b[j])))
    # rounding can leave a -1e-17 residue on independent tables
    return float(max(mi, 0.0))


def conditional_mutual_information(strata: StratifiedTables) -> float:
    """Stratum-weighted average of per-stratum MI."""
    mis = np.array([mutual_information(t) for t in strata.tables])
    return float(np.dot(strata.weights, mis))


def expected_mi_under_chance(row_marginals, col_marginals, n: int | None = None) -> float:
    """Expected MI over all tables sharing the given integer marginals.

    Each cell count follows a hypergeometric law under random pairing of the
    two labelings; the sum is evaluated in log space through log-gamma.
    """
    a = np.asarray(row_marginals)
    b = np.asarray(col_marginals)
    if not (np.allclose(a, np.round(a)) and np.allclose(b, np.round(b))):
        raise ValueError("marginals must be integer counts")
    a = np.round(a).astype(np.int64)
    b = np.round(b).astype(np.int64)
    total = int(a.sum())
    if int(b.sum()) != total:
        raise ValueError(f"marginals disagree: rows sum to {total}, columns to {int(b.sum())}")
    if n is not None and int(n) != total:
        raise ValueError(f"marginals sum to {total}, not N={n}")
    a = a[a > 0]
    b = b[b > 0]
    if a.size <= 1 or b.size <= 1:
        return 0.0

    N = total
    lf = gammaln(np.arange(N + 2, dtype=float))  # lf[k] = ln((k-1)!)
    ai = a[:, None, None]
    bj = b[None, :, None]
    upper = np.minimum(a[:, None], b[None, :])
    lower = np.maximum(1, a[:, None] + b[None, :] - N)
    nij = np.arange(1, upper.max() + 1)[None, None, :]
    valid = (nij >= lower[:, :, None]) & (nij <= upper[:, :, None])
    # outside the valid range indices are clamped; those terms are masked below
    log_p = (
        lf[ai + 1] + lf[bj + 1] + lf[N - ai + 1] + lf[N - bj + 1] - lf[N + 1]
        - lf[nij + 1] - lf[np.clip(ai - nij, 0, N) + 1] - lf[np.clip(bj - nij, 0, N) + 1]
        - lf[np.clip(N - ai - bj + nij, 0, N) + 1]
    )
    term = nij / N * (np.log(N) + np.log(nij) - np.log(ai) - np.log(bj))
    return float(np.sum(np.where(valid, term * np.exp(log_p), 0.0)))


def _normalizer(h_rows: float, h_cols: float, mode: str) -> float:
    if mode == "max":
        return max(h_rows, h_cols)
    if mode == "mean":
        return 0.5 * (h_rows + h_cols)
    if mode == "min":
        return min(h_rows, h_cols)
    raise ValueError(f"unknown normalizer {mode!r}; expected one of {NORMALIZERS}")


def adjust(raw: float, emi: float, norm: float) -> float:
    """Chance-corrected, normalized score from its three ingredients."""
    return (raw - emi) / (norm - emi)


def adjusted_mi(table, normalizer: str = "max") -> AdjustedStatistic:
    """Chance-adjusted, entropy-normalized MI.

    A table where either variable occupies a single category is degenerate
    and scores 0 by convention.
    """
    counts = _as_counts(table)
    rows = counts.sum(axis=1)
    cols = counts.sum(axis=0)
    raw = mutual_information(counts)
    h_rows, h_cols = entropy(rows), entropy(cols)
    norm = _normalizer(h_rows, h_cols, normalizer)
    if np.count_nonzero(rows) <= 1 or np.count_nonzero(cols) <= 1:
        return AdjustedStatistic(raw, 0.0, norm, 0.0, True)
    emi = expected_mi_under_chance(rows, cols)
    if abs(norm - emi) < _DEGENERATE_TOL:
        return AdjustedStatistic(raw, emi, norm, 0.0, True)
    return AdjustedStatistic(raw, emi, norm, adjust(raw, emi, norm), False)


def adjusted_cmi(strata: StratifiedTables, normalizer: str = "max") -> AdjustedStatistic:
    """Stratum-weighted expectation of per-stratum adjusted MI.

    Degenerate strata contribute 0 but keep their weight. The result is
    flagged degenerate only when every stratum is.
    """
    w = strata.weights
    parts = [adjusted_mi(t, normalizer) for t in strata.tables]
    raw = float(np.dot(w, [p.raw for p in parts]))
    emi = float(np.dot(w, [p.expected_under_chance for p in parts]))
    norm = float(np.dot(w, [p.normalizer for p in parts]))
    adjusted = float(np.dot(w, [p.adjusted for p in parts]))
    return AdjustedStatistic(raw, emi, norm, adjusted, all(p.degenerate for p in parts))


def adjusted_mi_codes(x, y, normalizer: str = "max") -> AdjustedStatistic:
    return adjusted_mi(ContingencyTable.from_codes(x, y), normalizer)


def adjusted_cmi_codes(x, y, z, normalizer: str = "max") -> AdjustedStatistic:
    """Adjusted CMI(x; y | z) from code arrays."""
    return adjusted_cmi(StratifiedTables.from_codes(x, y, z), normalizer)


def batched_mutual_information(counts: np.ndarray) -> np.ndarray:
    """MI over the trailing two axes of a stack of count tables."""
    counts = np.asarray(counts, dtype=float)
    n = counts.sum(axis=(-2, -1), keepdims=True)
    a = counts.sum(axis=-1, keepdims=True)
    b = counts.sum(axis=-2, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = counts / n * np.log(counts * n / (a * b))
    return np.maximum(np.where(counts > 0, terms, 0.0).sum(axis=(-2, -1)), 0.0)

