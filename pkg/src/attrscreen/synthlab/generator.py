"""Synthetic datasets with a planted artifact of controlled utility and visibility.

Rows carry a binary label ``y``, a binary artifact ``a`` and features

    x = label_signal * y * e_y + signal * a * e_a + N(0, I_d)

with ``e_y`` and ``e_a`` the first two coordinate axes. ``signal = 0`` gives
an artifact that leaves no trace in the features at all.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from ..infotheo import adjusted_mi

DEFAULT_N = 7387
DEFAULT_PREVALENCE = 0.157
DEFAULT_N_ARTIFACT = 1000


class InfeasibleBias(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    """Generator parameters.

    The artifact association is set either by ``p1``/``p0`` (artifact rate
    among y=1 / y=0 rows) or by a target ``utility`` (adjusted MI of a and y),
    which is solved for at fixed expected artifact count ``n_artifact``.
    With neither, the artifact is independent of the label.
    """

    n: int = DEFAULT_N
    prevalence: float = DEFAULT_PREVALENCE
    n_artifact: int | None = DEFAULT_N_ARTIFACT
    p1: float | None = None
    p0: float | None = None
    utility: float | None = None
    signal: float = 0.0
    label_signal: float = 1.0
    d: int = 8
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown SynthConfig keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_(self, **changes) -> "SynthConfig":
        return replace(self, **changes)

    def resolve_bias(self) -> tuple:
        """Return ``(p1, p0)`` after validating the configuration."""
        if self.n < 2 or self.d < 2:
            raise ValueError("need n >= 2 rows and d >= 2 feature dimensions")
        if not 0.0 < self.prevalence < 1.0:
            raise ValueError("prevalence must lie in (0, 1)")
        if self.signal < 0:
            raise ValueError("signal must be non-negative")
        n1 = self.prevalence * self.n
        n0 = self.n - n1
        if self.p1 is not None or self.p0 is not None:
            if self.p1 is None or self.p0 is None:
                raise ValueError("p1 and p0 must be given together")
            if self.utility is not None:
                raise ValueError("give either (p1, p0) or utility, not both")
            for p in (self.p1, self.p0):
                if not 0.0 <= p <= 1.0:
                    raise ValueError("p1 and p0 must lie in [0, 1]")
            expected = self.p1 * n1 + self.p0 * n0
            if self.n_artifact is not None and abs(expected - self.n_artifact) > 1.0:
                raise InfeasibleBias(
                    f"(p1, p0) = ({self.p1}, {self.p0}) imply {expected:.1f} artifacts, "
                    f"not n_artifact={self.n_artifact}")
            return float(self.p1), float(self.p0)
        if self.n_artifact is None or not 0 <= self.n_artifact <= self.n:
            raise InfeasibleBias(f"n_artifact must lie in [0, {self.n}], got {self.n_artifact}")
        if self.utility is not None:
            return solve_bias_for_utility(self.utility, self.prevalence, self.n, self.n_artifact)
        rate = self.n_artifact / self.n
        return rate, rate


@dataclass(frozen=True)
class SynthDataset:
    y: np.ndarray
    a: np.ndarray
    noise: np.ndarray
    config: SynthConfig
    p1: float
    p0: float

    @property
    def n(self) -> int:
        return self.y.size

    def features_for(self, a) -> np.ndarray:
        """Features with the artifact channel set to ``a`` and everything else paired."""
        c = self.config
        X = self.noise.copy()
        X[:, 0] += c.label_signal * self.y
        X[:, 1] += c.signal * np.asarray(a, dtype=float)
        return X

    @property
    def X(self) -> np.ndarray:
        return self.features_for(self.a)

    @property
    def a_worst_case(self) -> np.ndarray:
        """Positives lose the artifact and negatives gain it."""
        return 1 - self.y

    @property
    def X_worst_case(self) -> np.ndarray:
        return self.features_for(self.a_worst_case)

    def manifest(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "p1": self.p1,
            "p0": self.p0,
            "n_rows": self.n,
            "n_artifact_realized": int(self.a.sum()),
            "n_positive": int(self.y.sum()),
            "feature_model": "x = label_signal*y*e_0 + signal*a*e_1 + N(0, I_d)",
            "columns": {"y": "label", "a": "attribute", "a_wc": "worst-case counterfactual artifact",
                        "x*": "feature"},
        }

    def write(self, out_dir) -> tuple:
        """Write ``dataset.csv`` (audit-table layout) and ``manifest.json``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        X = self.X
        names = [f"x{i}" for i in range(X.shape[1])]
        csv_path = out / "dataset.csv"
        with csv_path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["row_id", "y", "a", "a_wc", *names])
            for i in range(self.n):
                w.writerow([i, int(self.y[i]), int(self.a[i]), int(self.a_worst_case[i]),
                            *(repr(float(v)) for v in X[i])])
        manifest_path = out / "manifest.json"
        manifest = self.manifest()
        manifest["schema"] = {"row_id": "id", "y": "label", "a": "attribute",
                              **{n: "feature" for n in names}}
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return csv_path, manifest_path


def generate(config: SynthConfig) -> SynthDataset:
    """Draw y ~ Bernoulli(prevalence), a | y ~ Bernoulli(p_y), then the features."""
    p1, p0 = config.resolve_bias()
    rng = np.random.default_rng(config.seed)
    y = (rng.random(config.n) < config.prevalence).astype(np.int64)
    a = (rng.random(config.n) < np.where(y == 1, p1, p0)).astype(np.int64)
    noise = rng.standard_normal((config.n, config.d))
    return SynthDataset(y, a, noise, config, p1, p0)


def _tilted_table(k: float, n1: int, n0: int, n_artifact: int) -> np.ndarray:
    """Rows y=0/1, columns a=0/1, with ``k`` of the artifacts on y=1 rows."""
    return np.array([[n0 - (n_artifact - k), n_artifact - k], [n1 - k, k]], dtype=float)


def solve_bias_for_utility(target_u: float, prevalence: float = DEFAULT_PREVALENCE, n: int = DEFAULT_N,
                           n_artifact: int = DEFAULT_N_ARTIFACT, normalizer: str = "max",
                           tol: float = 1e-4) -> tuple:
    """Artifact rates ``(p1, p0)`` whose expected 2x2 table has adjusted MI ``target_u``.

    The artifact count is held at ``n_artifact`` while mass shifts from y=0
    to y=1 rows; adjusted MI rises monotonically along that path, so
    bisection on the number of positive-row artifacts finds the target.
    """
    if not 0.0 <= target_u < 1.0:
        raise InfeasibleBias("target utility must lie in [0, 1)")
    n1 = int(round(prevalence * n))
    n0 = n - n1
    if not (0 < n1 < n and 0 < n_artifact < n):
        raise InfeasibleBias("prevalence and n_artifact must leave both classes non-empty")
    k_lo = n_artifact * n1 / n
    if target_u == 0.0:
        rate = n_artifact / n
        return rate, rate
    k_hi = float(min(n_artifact, n1))

    def utility(k):
        return adjusted_mi(_tilted_table(k, n1, n0, n_artifact), normalizer).adjusted

    u_max = utility(k_hi)
    if target_u > u_max + tol:
        raise InfeasibleBias(
            f"utility {target_u} unreachable: feasible range is [0, {u_max:.4f}] "
            f"for prevalence={prevalence}, n={n}, n_artifact={n_artifact}")
    if target_u >= u_max:
        k = k_hi
    else:
        lo, hi = k_lo, k_hi
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if utility(mid) < target_u:
                lo = mid
            else:
                hi = mid
            if hi - lo < 1e-9:
                break
        k = 0.5 * (lo + hi)
    return k / n1, (n_artifact - k) / n0


def max_feasible_utility(prevalence: float = DEFAULT_PREVALENCE, n: int = DEFAULT_N,
                         n_artifact: int = DEFAULT_N_ARTIFACT, normalizer: str = "max") -> float:
    n1 = int(round(prevalence * n))
    k_hi = float(min(n_artifact, n1))
    return adjusted_mi(_tilted_table(k_hi, n1, n - n1, n_artifact), normalizer).adjusted
