"""Attribute screening: utility, detectability and a ranked risk report."""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import logging
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .crossfit import CrossFitResult, TrainConfig, crossfit_predict, external_predictions
from .inference import (
    BootstrapCI,
    BootstrapError,
    PermutationTestResult,
    bootstrap_ci,
    classify_detectable,
    conditional_permutation_test,
)
from .infotheo import AdjustedStatistic, ContingencyTable, adjusted_cmi_codes, adjusted_mi, adjusted_mi_codes
from .table import AuditTable, SchemaError, assign_folds

logger = logging.getLogger(__name__)

CSV_COLUMNS = (
    "rank",
    "attribute",
    "detectable",
    "utility_adjusted",
    "utility_raw_nats",
    "utility_ci_lower",
    "utility_ci_upper",
    "detectability_adjusted",
    "detectability_raw_nats",
    "detectability_ci_lower",
    "detectability_ci_upper",
    "percentile",
    "n_permutations",
    "n_categories",
    "prediction_source",
    "tautological",
    "warnings",
)
PLOT_COLUMNS = ("utility", "detectability", "label")


@dataclass(frozen=True)
class AuditParams:
    n_perm: int = 1000
    n_boot: int = 1000
    cutoff: float = 0.95
    level: float = 0.95
    folds: int = 3
    seed: int = 0
    normalizer: str = "max"
    features: tuple | None = None
    train: TrainConfig = TrainConfig()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["features"] = None if self.features is None else list(self.features)
        return d


@dataclass
class AttributeRiskRecord:
    attribute: str
    n_categories: int
    utility: AdjustedStatistic
    utility_ci: BootstrapCI | None
    detectability: AdjustedStatistic | None
    detectability_ci: BootstrapCI | None
    permutation: PermutationTestResult | None
    detectable: bool
    prediction_source: str
    tautological: bool = False
    warnings: list = field(default_factory=list)
    rank: int | None = None

    def to_dict(self) -> dict:
        return {
            "attribute": self.attribute,
            "rank": self.rank,
            "n_categories": self.n_categories,
            "detectable": self.detectable,
            "tautological": self.tautological,
            "prediction_source": self.prediction_source,
            "utility": self.utility.to_dict(),
            "utility_ci": None if self.utility_ci is None else self.utility_ci.to_dict(),
            "detectability": None if self.detectability is None else self.detectability.to_dict(),
            "detectability_ci": None if self.detectability_ci is None else self.detectability_ci.to_dict(),
            "permutation_test": None if self.permutation is None else self.permutation.to_dict(),
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttributeRiskRecord":
        def opt(key, kind):
            return None if d.get(key) is None else kind.from_dict(d[key])

        return cls(
            attribute=d["attribute"],
            n_categories=int(d["n_categories"]),
            utility=AdjustedStatistic.from_dict(d["utility"]),
            utility_ci=opt("utility_ci", BootstrapCI),
            detectability=opt("detectability", AdjustedStatistic),
            detectability_ci=opt("detectability_ci", BootstrapCI),
            permutation=opt("permutation_test", PermutationTestResult),
            detectable=bool(d["detectable"]),
            prediction_source=d["prediction_source"],
            tautological=bool(d["tautological"]),
            warnings=list(d["warnings"]),
            rank=d["rank"],
        )


@dataclass
class AuditReport:
    records: list
    metadata: dict

    def to_dict(self) -> dict:
        return {"metadata": dict(self.metadata), "records": [r.to_dict() for r in self.records]}

    @classmethod
    def from_dict(cls, d: dict) -> "AuditReport":
        return cls([AttributeRiskRecord.from_dict(r) for r in d["records"]], dict(d["metadata"]))

    def canonical(self) -> dict:
        """Report content with the wall-clock timestamp removed."""
        d = self.to_dict()
        d["metadata"].pop("created", None)
        return d

    def ranked(self) -> list:
        return sorted((r for r in self.records if r.rank is not None), key=lambda r: r.rank)


def attribute_seed(seed: int, name: str) -> int:
    """Per-attribute seed that does not depend on the order attributes are listed."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(name.encode("utf-8"))])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def table_digest(table: AuditTable) -> str:
    h = hashlib.sha256()
    for name in table.column_order:
        h.update(name.encode("utf-8"))
        h.update(str(table.roles[name]).encode("utf-8"))
        if name in table.codes:
            h.update("\x1f".join(table.codecs[name].categories).encode("utf-8"))
            h.update(np.ascontiguousarray(table.codes[name]).tobytes())
        else:
            h.update(np.ascontiguousarray(table.values[name]).tobytes())
    return "sha256:" + h.hexdigest()


def file_digest(path) -> str:
    return "sha256:" + hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _is_relabeling(a, y) -> bool:
    counts = ContingencyTable.from_codes(a, y).counts
    occupied = counts > 0
    return bool(np.all(occupied.sum(axis=1) <= 1) and np.all(occupied.sum(axis=0) <= 1))


def rank_records(records: Sequence[AttributeRiskRecord]) -> None:
    """Rank by detectable flag, then utility, then detectability, then name.

    Tautological attributes are left unranked.
    """
    def key(r):
        det = r.detectability.adjusted if r.detectability is not None else -np.inf
        return (not r.detectable, -r.utility.adjusted, -det, r.attribute)

    ranked = sorted((r for r in records if not r.tautological), key=key)
    for i, r in enumerate(ranked, start=1):
        r.rank = i


def _safe_ci(statistic, arrays, params: AuditParams, seed: int, what: str, warnings: list):
    try:
        return bootstrap_ci(statistic, *arrays, n_boot=params.n_boot, level=params.level, seed=seed)
    except BootstrapError as exc:
        msg = f"{what} interval unavailable: {exc}"
        logger.warning(msg)
        warnings.append(msg)
        return None


def audit_attribute(table: AuditTable, attribute: str, params: AuditParams,
                    prediction: CrossFitResult | None = None) -> AttributeRiskRecord:
    """Utility and detectability of one categorical attribute."""
    if attribute not in table.codes or attribute == table.label_name:
        raise SchemaError(f"{attribute!r} is not a categorical attribute column")
    a = table.codes[attribute]
    y = table.label
    seed = attribute_seed(params.seed, attribute)
    warnings: list = []
    utility = adjusted_mi_codes(a, y, params.normalizer)

    def utility_stat(a_, y_):
        stat = adjusted_mi(ContingencyTable.from_codes(a_, y_), params.normalizer)
        return float("nan") if stat.degenerate else stat.adjusted

    utility_ci = _safe_ci(utility_stat, (a, y), params, seed, "utility", warnings)
    n_cat = table.codecs[attribute].n_categories
    if _is_relabeling(a, y):
        warnings.append("attribute is a relabeling of the label; excluded from ranking")
        return AttributeRiskRecord(attribute, n_cat, utility, utility_ci, None, None, None, False,
                                   "none", tautological=True, warnings=warnings)

    if prediction is None:
        if table.prediction_columns(attribute):
            prediction = external_predictions(table, attribute)
        else:
            folds = assign_folds(table, attribute, params.folds, seed)
            if folds.small_cells:
                warnings.append(f"(attribute, label) cells with fewer than {params.folds} rows: "
                                f"{[list(c) for c in folds.small_cells]}")
            train = replace(params.train, seed=seed)
            prediction = crossfit_predict(table, attribute, folds, train, features=params.features)
            prediction.check_out_of_fold()
    warnings.extend(prediction.warnings)
    ahat = prediction.ahat
    if ahat.size != table.n_rows:
        raise SchemaError(f"predictions for {attribute!r} cover {ahat.size} rows, table has {table.n_rows}")

    detect = adjusted_cmi_codes(a, ahat, y, params.normalizer)
    detect_ci = _safe_ci(lambda a_, h_, y_: adjusted_cmi_codes(a_, h_, y_, params.normalizer).adjusted,
                         (a, ahat, y), params, seed, "detectability", warnings)
    test = conditional_permutation_test(a, ahat, y, params.n_perm, seed=seed, normalizer=params.normalizer)
    return AttributeRiskRecord(
        attribute=attribute,
        n_categories=n_cat,
        utility=utility,
        utility_ci=utility_ci,
        detectability=detect,
        detectability_ci=detect_ci,
        permutation=test,
        detectable=classify_detectable(test, params.cutoff),
        prediction_source=prediction.provenance,
        warnings=warnings,
    )


def audit(table: AuditTable, attributes: Sequence[str] | None = None,
          predictions: Mapping[str, CrossFitResult] | None = None,
          params: AuditParams = AuditParams(), input_digest: str | None = None) -> AuditReport:
    """Screen attributes and rank them by shortcut risk.

    Predictions of each attribute come from ``predictions`` when given, else
    from the table's own prediction columns, else from cross-fitting the
    baseline model on the feature columns.
    """
    attributes = table.attributes if attributes is None else list(attributes)
    if len(set(attributes)) != len(attributes):
        raise SchemaError("attribute list contains duplicates")
    predictions = predictions or {}
    records = [audit_attribute(table, name, params, predictions.get(name)) for name in attributes]
    rank_records(records)
    metadata = {
        "toolkit_version": __version__,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "input_digest": input_digest or table_digest(table),
        "label": table.label_name,
        "n_rows": table.n_rows,
        "dropped_rows": table.dropped,
        "params": params.to_dict(),
    }
    return AuditReport(records, metadata)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def report_rows(report: AuditReport) -> list:
    """One flat row per attribute, ranked first and tautological ones last."""
    ordered = report.ranked() + sorted((r for r in report.records if r.rank is None), key=lambda r: r.attribute)
    rows = []
    for r in ordered:
        rows.append({
            "rank": r.rank,
            "attribute": r.attribute,
            "detectable": r.detectable,
            "utility_adjusted": r.utility.adjusted,
            "utility_raw_nats": r.utility.raw,
            "utility_ci_lower": r.utility_ci.lower if r.utility_ci else None,
            "utility_ci_upper": r.utility_ci.upper if r.utility_ci else None,
            "detectability_adjusted": r.detectability.adjusted if r.detectability else None,
            "detectability_raw_nats": r.detectability.raw if r.detectability else None,
            "detectability_ci_lower": r.detectability_ci.lower if r.detectability_ci else None,
            "detectability_ci_upper": r.detectability_ci.upper if r.detectability_ci else None,
            "percentile": r.permutation.percentile if r.permutation else None,
            "n_permutations": r.permutation.n_permutations if r.permutation else None,
            "n_categories": r.n_categories,
            "prediction_source": r.prediction_source,
            "tautological": r.tautological,
            "warnings": " | ".join(r.warnings),
        })
    return rows


def plot_path_for(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".plot.csv")


def emit_report(report: AuditReport, fmt: str, path) -> list:
    """Write the report as JSON or CSV plus a scatter-ready plot-data CSV.

    Returns the paths written. CSV columns follow ``CSV_COLUMNS``; the plot
    file holds ``utility, detectability, label`` per ranked attribute.
    """
    path = Path(path)
    written = []
    try:
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True)
        if fmt == "json":
            path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        elif fmt == "csv":
            with path.open("w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(CSV_COLUMNS)
                for row in report_rows(report):
                    writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
        else:
            raise ValueError(f"unknown report format {fmt!r}; expected json or csv")
        written.append(path)
        plot_path = plot_path_for(path)
        with plot_path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(PLOT_COLUMNS)
            for r in report.ranked():
                writer.writerow([_fmt(r.utility.adjusted), _fmt(r.detectability.adjusted), r.attribute])
        written.append(plot_path)
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc.strerror or exc}") from exc
    return written


def load_report(path) -> AuditReport:
    return AuditReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
