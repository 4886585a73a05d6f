"""Desk-scale validation experiments on synthetic artifacts.

e1  worst-case counterfactual AUC of a task model versus artifact utility
e2  an invisible artifact (no feature signal) at rising utility
e3  detectability of an independent artifact as its feature signal fades
e4  utility x signal grid: detectability, detection flag and AUC drop

Within one seed every level reuses the same generator seed, so levels
differ only through the swept parameter (common random numbers).
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..crossfit import TrainConfig, crossfit_arrays
from ..inference import bootstrap_ci, classify_detectable, conditional_permutation_test
from ..infotheo import adjusted_cmi_codes, adjusted_mi_codes
from ..table import stratified_folds
from .generator import SynthConfig, SynthDataset, generate
from .metrics import auc, kendall_tau

E1_UTILITIES = (0.0, 0.15, 0.3, 0.45, 0.6, 0.75)
E2_UTILITIES = (0.0, 0.25, 0.5, 0.75)
E3_SIGNALS = (8.0, 4.0, 2.0, 1.0, 0.5, 0.0)
E4_SIGNALS = (0.5, 1.0, 1.5, 2.0, 3.0, 4.0)
E4_UTILITIES = E1_UTILITIES

DEFAULT_BASES = {
    "e1": SynthConfig(signal=4.0, label_signal=1.0),
    "e2": SynthConfig(signal=0.0, label_signal=2.0),
    "e3": SynthConfig(label_signal=1.0),
    "e4": SynthConfig(label_signal=1.0),
}


@dataclass(frozen=True)
class ExperimentSettings:
    """Knobs shared by every experiment; ``base`` holds the generator defaults."""

    base: SynthConfig = SynthConfig()
    seeds: tuple = (0,)
    folds: int = 3
    n_perm: int = 1000
    n_boot: int = 1000
    cutoff: float = 0.95
    level: float = 0.95
    normalizer: str = "max"
    train: TrainConfig = TrainConfig()

    @classmethod
    def from_dict(cls, d: dict, base_defaults: SynthConfig | None = None) -> "ExperimentSettings":
        """Build settings from a config mapping; ``base`` keys override ``base_defaults``."""
        d = dict(d)
        base_dict = (base_defaults or SynthConfig()).to_dict()
        base_dict.update(d.pop("base", {}))
        base = SynthConfig.from_dict(base_dict)
        train = TrainConfig.from_dict(d.pop("train", {}))
        if "seeds" in d:
            d["seeds"] = tuple(int(s) for s in d["seeds"])
        sweep_keys = {"utilities", "signals"}
        unknown = set(d) - set(cls.__dataclass_fields__) - sweep_keys
        if unknown:
            raise ValueError(f"unknown experiment settings: {sorted(unknown)}")
        return cls(base=base, train=train, **{k: v for k, v in d.items() if k not in sweep_keys})

    def to_dict(self) -> dict:
        out = asdict(self)
        out["seeds"] = list(self.seeds)
        return out


@dataclass
class ExperimentResult:
    name: str
    records: list
    summary: dict = field(default_factory=dict)
    settings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "settings": self.settings, "summary": self.summary, "records": self.records}

    def write(self, out_dir) -> tuple:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        json_path = out / f"{self.name}.json"
        json_path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        csv_path = out / f"{self.name}.csv"
        fields = list(self.records[0]) if self.records else []
        with csv_path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            writer.writerows(self.records)
        return json_path, csv_path


def _train_config(settings: ExperimentSettings, seed: int) -> TrainConfig:
    return replace(settings.train, seed=int(seed))


def detectability(ds: SynthDataset, settings: ExperimentSettings, seed: int, with_ci: bool = False) -> dict:
    """Cross-fit the artifact from the features and score the predictions."""
    folds = stratified_folds(ds.a * 2 + ds.y, settings.folds, seed=(seed, 1))
    cf = crossfit_arrays(ds.X, ds.a, folds, _train_config(settings, seed), n_classes=2)
    stat = adjusted_cmi_codes(ds.a, cf.ahat, ds.y, settings.normalizer)
    test = conditional_permutation_test(ds.a, cf.ahat, ds.y, settings.n_perm, seed=seed,
                                        normalizer=settings.normalizer)
    row = {
        "naive_auc": auc(cf.scores[:, 1], ds.a),
        "raw_cmi": stat.raw,
        "adjusted_cmi": stat.adjusted,
        "percentile": test.percentile,
        "detectable": classify_detectable(test, settings.cutoff),
    }
    if with_ci:
        ci = bootstrap_ci(lambda a, h, y: adjusted_cmi_codes(a, h, y, settings.normalizer).adjusted,
                          ds.a, cf.ahat, ds.y, n_boot=settings.n_boot, level=settings.level, seed=seed)
        row.update(ci_lower=ci.lower, ci_upper=ci.upper, ci_includes_zero=ci.contains(0.0))
    return row


def task_auc_drop(ds: SynthDataset, settings: ExperimentSettings, seed: int) -> dict:
    """Cross-fitted task model for y, scored on i.i.d. and worst-case features.

    Each row's worst-case score comes from the same out-of-fold model as its
    i.i.d. score; only the artifact channel of the features differs.
    """
    folds = stratified_folds(ds.y, settings.folds, seed=(seed, 2))
    cf = crossfit_arrays(ds.X, ds.y, folds, _train_config(settings, seed), n_classes=2,
                         extra_features=[ds.X_worst_case])
    iid = auc(cf.scores[:, 1], ds.y)
    worst = auc(cf.extra_scores[0][:, 1], ds.y)
    return {"iid_auc": iid, "worst_case_auc": worst, "auc_drop": iid - worst}


def _base_row(ds: SynthDataset, seed: int, normalizer: str) -> dict:
    return {
        "seed": int(seed),
        "signal": float(ds.config.signal),
        "target_utility": ds.config.utility if ds.config.utility is not None else 0.0,
        "p1": ds.p1,
        "p0": ds.p0,
        "utility": adjusted_mi_codes(ds.a, ds.y, normalizer).adjusted,
    }


def run_experiment_1(utilities=E1_UTILITIES, settings: ExperimentSettings | None = None) -> ExperimentResult:
    """Worst-case AUC of a task model as a visible artifact gains utility."""
    settings = settings or ExperimentSettings(base=DEFAULT_BASES["e1"])
    if settings.base.signal <= 0:
        raise ValueError("experiment 1 needs a visible artifact (signal > 0)")
    records = []
    for seed in settings.seeds:
        for u in utilities:
            ds = generate(settings.base.with_(utility=float(u), seed=int(seed)))
            records.append({**_base_row(ds, seed, settings.normalizer), **task_auc_drop(ds, settings, seed)})
    taus = []
    for seed in settings.seeds:
        rows = [r for r in records if r["seed"] == seed]
        taus.append(kendall_tau([r["target_utility"] for r in rows], [r["worst_case_auc"] for r in rows]))
    top = [r["worst_case_auc"] for r in records if r["target_utility"] == max(utilities)]
    summary = {
        "tau_utility_vs_worst_case_auc": taus,
        "mean_tau": float(np.mean(taus)),
        "tau_utility_vs_drop": float(np.mean([
            kendall_tau([r["target_utility"] for r in records if r["seed"] == s],
                        [r["auc_drop"] for r in records if r["seed"] == s]) for s in settings.seeds])),
        "worst_case_auc_at_max_utility": float(np.mean(top)),
    }
    return ExperimentResult("e1", records, summary, settings.to_dict())


def run_experiment_2(utilities=E2_UTILITIES, settings: ExperimentSettings | None = None) -> ExperimentResult:
    """Invisible artifact: predictable from the features only through the label."""
    settings = settings or ExperimentSettings(base=DEFAULT_BASES["e2"])
    base = settings.base.with_(signal=0.0)
    records = []
    for seed in settings.seeds:
        for u in utilities:
            ds = generate(base.with_(utility=float(u), seed=int(seed)))
            row = {**_base_row(ds, seed, settings.normalizer), **detectability(ds, settings, seed, with_ci=True)}
            records.append(row)
    per_level = {}
    for u in utilities:
        rows = [r for r in records if r["target_utility"] == u]
        per_level[str(u)] = {
            "mean_naive_auc": float(np.mean([r["naive_auc"] for r in rows])),
            "frac_ci_includes_zero": float(np.mean([r["ci_includes_zero"] for r in rows])),
            "frac_not_detectable": float(np.mean([not r["detectable"] for r in rows])),
            "frac_null_consistent": float(np.mean([r["ci_includes_zero"] and not r["detectable"] for r in rows])),
        }
    return ExperimentResult("e2", records, {"per_level": per_level}, settings.to_dict())


def run_experiment_3(signals=E3_SIGNALS, settings: ExperimentSettings | None = None) -> ExperimentResult:
    """Fading signal on an artifact that carries no label information."""
    settings = settings or ExperimentSettings(base=DEFAULT_BASES["e3"])
    base = settings.base.with_(utility=None, p1=None, p0=None)
    records = []
    for seed in settings.seeds:
        for s in signals:
            ds = generate(base.with_(signal=float(s), seed=int(seed)))
            records.append({**_base_row(ds, seed, settings.normalizer), **detectability(ds, settings, seed)})
    table = {}
    for s in signals:
        rows = [r for r in records if r["signal"] == s]
        table[str(s)] = {k: float(np.mean([r[k] for r in rows]))
                         for k in ("naive_auc", "adjusted_cmi", "percentile")}
    return ExperimentResult("e3", records, {"table": table}, settings.to_dict())


def run_experiment_4(signals=E4_SIGNALS, utilities=E4_UTILITIES,
                     settings: ExperimentSettings | None = None) -> ExperimentResult:
    """Detectability and utility against the task model's worst-case AUC drop."""
    settings = settings or ExperimentSettings(base=DEFAULT_BASES["e4"])
    records = []
    for seed in settings.seeds:
        for u in utilities:
            for s in signals:
                ds = generate(settings.base.with_(utility=float(u), signal=float(s), seed=int(seed)))
                records.append({**_base_row(ds, seed, settings.normalizer),
                                **detectability(ds, settings, seed),
                                **task_auc_drop(ds, settings, seed)})
    taus = {}
    for u in utilities:
        rows = [r for r in records if r["target_utility"] == u]
        taus[str(u)] = kendall_tau([r["adjusted_cmi"] for r in rows], [r["auc_drop"] for r in rows])
    zero_rows = [r["auc_drop"] for r in records if r["target_utility"] == 0.0]
    summary = {
        "n_cells": len(records),
        "n_detectable": int(sum(r["detectable"] for r in records)),
        "tau_detectability_vs_drop": taus,
        "tau_utility_vs_drop": kendall_tau([r["utility"] for r in records], [r["auc_drop"] for r in records]),
        "mean_drop_zero_utility": float(np.mean(zero_rows)) if zero_rows else float("nan"),
    }
    return ExperimentResult("e4", records, summary, settings.to_dict())


EXPERIMENTS = {
    "e1": run_experiment_1,
    "e2": run_experiment_2,
    "e3": run_experiment_3,
    "e4": run_experiment_4,
}
