"""Conditional permutation tests and bootstrap intervals.

Every replicate draws from its own generator, derived from the master seed
and the replicate index, so results do not depend on evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .infotheo import (
    AdjustedStatistic,
    StratifiedTables,
    adjust,
    adjusted_mi,
    batched_mutual_information,
)

DEFAULT_N_PERM = 1000
DEFAULT_CUTOFF = 0.95
MAX_REDRAW_FRACTION = 0.10


def replicate_rng(seed, index: int, attempt: int = 0) -> np.random.Generator:
    """Independent generator for replicate ``index`` of a run seeded by ``seed``."""
    key = (index,) if attempt == 0 else (index, attempt)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=key))


@dataclass(frozen=True)
class PermutationTestResult:
    observed: float
    n_permutations: int
    percentile: float
    null_samples: np.ndarray
    seed: int

    def to_dict(self) -> dict:
        return {
            "observed": self.observed,
            "n_permutations": self.n_permutations,
            "percentile": self.percentile,
            "null_samples": [float(v) for v in self.null_samples],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PermutationTestResult":
        return cls(float(d["observed"]), int(d["n_permutations"]), float(d["percentile"]),
                   np.asarray(d["null_samples"], dtype=float), int(d["seed"]))


@dataclass(frozen=True)
class BootstrapCI:
    lower: float
    upper: float
    level: float
    n_replicates: int
    seed: int
    redraws: int = 0

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    def to_dict(self) -> dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "level": self.level,
            "n_replicates": self.n_replicates,
            "seed": self.seed,
            "redraws": self.redraws,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BootstrapCI":
        return cls(float(d["lower"]), float(d["upper"]), float(d["level"]),
                   int(d["n_replicates"]), int(d["seed"]), int(d.get("redraws", 0)))


class _StratumScorer:
    """Adjusted CMI of (a, ahat | y) for many relabelings of ``a`` at once.

    Shuffling ``a`` within strata of ``y`` leaves every per-stratum marginal
    untouched, so the expected-MI and normalizer terms are computed once and
    only the raw MI is recomputed per replicate.
    """

    def __init__(self, a, ahat, y, normalizer: str):
        self.a = np.asarray(a, dtype=np.int64)
        self.ahat = np.asarray(ahat, dtype=np.int64)
        y = np.asarray(y, dtype=np.int64)
        _, self.y = np.unique(y, return_inverse=True)
        self.n_a = int(self.a.max()) + 1
        self.n_h = int(self.ahat.max()) + 1
        self.n_y = int(self.y.max()) + 1
        strata = StratifiedTables.from_codes(self.a, self.ahat, self.y)
        self.weights = strata.weights
        parts = [adjusted_mi(t, normalizer) for t in strata.tables]
        self.observed = AdjustedStatistic(
            raw=float(np.dot(self.weights, [p.raw for p in parts])),
            expected_under_chance=float(np.dot(self.weights, [p.expected_under_chance for p in parts])),
            normalizer=float(np.dot(self.weights, [p.normalizer for p in parts])),
            adjusted=float(np.dot(self.weights, [p.adjusted for p in parts])),
            degenerate=all(p.degenerate for p in parts),
        )
        self.live = np.array([not p.degenerate for p in parts])
        self.emi = np.array([p.expected_under_chance for p in parts])
        self.norm = np.array([p.normalizer for p in parts])
        self.groups = [np.flatnonzero(self.y == s) for s in range(self.n_y)]

    def score(self, a_batch: np.ndarray) -> np.ndarray:
        """Adjusted CMI for each row of a (B, n) stack of relabeled ``a``."""
        b = a_batch.shape[0]
        cells = self.n_y * self.n_a * self.n_h
        codes = (self.y[None, :] * self.n_a + a_batch) * self.n_h + self.ahat[None, :]
        codes = codes + np.arange(b)[:, None] * cells
        counts = np.bincount(codes.ravel(), minlength=b * cells).reshape(b, self.n_y, self.n_a, self.n_h)
        mi = batched_mutual_information(counts)
        with np.errstate(divide="ignore", invalid="ignore"):
            per_stratum = np.where(self.live, adjust(mi, self.emi, self.norm), 0.0)
        return per_stratum @ self.weights

    def shuffle(self, rng: np.random.Generator) -> np.ndarray:
        out = self.a.copy()
        for idx in self.groups:
            if idx.size > 1:
                out[idx] = self.a[idx[rng.permutation(idx.size)]]
        return out


def mid_rank_percentile(observed: float, null_samples) -> float:
    """Fraction of null draws below ``observed``, counting ties as one half."""
    null_samples = np.asarray(null_samples, dtype=float)
    below = np.count_nonzero(null_samples < observed)
    ties = np.count_nonzero(null_samples == observed)
    return float((below + 0.5 * ties) / null_samples.size)


def conditional_permutation_test(a, ahat, y, n_perm: int = DEFAULT_N_PERM, seed=0,
                                 normalizer: str = "max", batch: int = 64) -> PermutationTestResult:
    """Percentile of the observed adjusted CMI(a; ahat | y) in its null.

    The null shuffles ``a`` uniformly within each stratum of ``y``, which
    keeps the a-y association intact while breaking any link between ``a``
    and ``ahat`` beyond what ``y`` carries. A stratum with one row stays put.
    """
    a = np.asarray(a)
    ahat = np.asarray(ahat)
    y = np.asarray(y)
    if not (a.shape == ahat.shape == y.shape):
        raise ValueError("a, ahat and y must have equal length")
    if n_perm < 1:
        raise ValueError("n_perm must be at least 1")
    scorer = _StratumScorer(a, ahat, y, normalizer)
    null = np.empty(n_perm)
    for start in range(0, n_perm, batch):
        stop = min(start + batch, n_perm)
        stack = np.stack([scorer.shuffle(replicate_rng(seed, r)) for r in range(start, stop)])
        null[start:stop] = scorer.score(stack)
    observed = scorer.score(scorer.a[None, :])[0]
    return PermutationTestResult(float(observed), n_perm, mid_rank_percentile(observed, null), null, int(seed))


def classify_detectable(result: PermutationTestResult, cutoff: float = DEFAULT_CUTOFF) -> bool:
    """Detectable when the percentile reaches the cutoff (inclusive)."""
    if not 0.0 < cutoff < 1.0:
        raise ValueError("cutoff must lie in (0, 1)")
    return result.percentile >= cutoff


class BootstrapError(RuntimeError):
    pass


def bootstrap_ci(statistic: Callable[..., float], *arrays, n_boot: int = 1000, level: float = 0.95,
                 seed=0) -> BootstrapCI:
    """Percentile bootstrap interval of ``statistic(*arrays)``.

    Rows are resampled with replacement, jointly across ``arrays``. A
    replicate whose statistic is NaN or raises ``ValueError`` is redrawn; more
    than 10% redraws aborts.
    """
    if n_boot < 100:
        raise ValueError("n_boot must be at least 100")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    arrays = [np.asarray(x) for x in arrays]
    n = len(arrays[0])
    if any(len(x) != n for x in arrays):
        raise ValueError("all arrays must share the row count")
    max_redraws = int(MAX_REDRAW_FRACTION * n_boot)
    reps = np.empty(n_boot)
    redraws = 0
    for r in range(n_boot):
        attempt = 0
        while True:
            idx = replicate_rng(seed, r, attempt).integers(0, n, size=n)
            try:
                value = float(statistic(*(x[idx] for x in arrays)))
            except ValueError:
                value = float("nan")
            if np.isfinite(value):
                break
            redraws += 1
            attempt += 1
            if redraws > max_redraws:
                raise BootstrapError(
                    f"statistic undefined on {redraws} resamples (limit {max_redraws} for n_boot={n_boot})")
        reps[r] = value
    tail = (1.0 - level) / 2.0
    lower, upper = np.quantile(reps, [tail, 1.0 - tail])
    return BootstrapCI(float(lower), float(upper), level, n_boot, int(seed), redraws)
