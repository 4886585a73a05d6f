"""Command-line entry point: ``attrscreen audit|simulate|experiment|stat``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .audit import AuditParams, audit, emit_report, file_digest
from .crossfit import TrainConfig, load_sidecar
from .infotheo import NORMALIZERS, adjusted_cmi_codes, adjusted_mi_codes
from .synthlab.experiments import DEFAULT_BASES, EXPERIMENTS, ExperimentSettings
from .synthlab.generator import SynthConfig, generate
from .table import ColumnRole, ingest_csv, with_binned_attribute

logger = logging.getLogger("attrscreen")

AUDIT_CONFIG_KEYS = {
    "input", "label", "attributes", "features", "predictions", "bin", "exclude", "n_perm", "n_boot",
    "cutoff", "level", "folds", "seed", "normalizer", "out", "format", "id_column", "train",
}


def _split(values) -> list:
    if isinstance(values, str):
        values = [values]
    out = []
    for v in values or []:
        out.extend(p.strip() for p in str(v).split(",") if p.strip())
    return out


def _load_config(path) -> dict:
    if path is None:
        return {}
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return data


def _audit(args) -> int:
    cfg = _load_config(args.config)
    unknown = set(cfg) - AUDIT_CONFIG_KEYS
    if unknown:
        raise ValueError(f"unknown audit config keys: {sorted(unknown)}")

    def pick(name, default=None):
        value = getattr(args, name)
        return cfg.get(name, default) if value is None else value

    input_path = pick("input")
    label = pick("label")
    if not input_path or not label:
        raise ValueError("audit needs --input and --label (or the same keys in --config)")
    attributes = _split(pick("attributes", []))
    features = _split(pick("features", []))
    exclude = set(_split(pick("exclude", [])))
    bins = {}
    for spec in _split(pick("bin", [])):
        name, _, n = spec.partition(":")
        bins[name] = int(n) if n else 5
    id_column = pick("id_column")

    schema = {label: "label"}
    for name in attributes:
        schema[name] = "feature" if name in bins else "attribute"
    for name in features:
        schema.setdefault(name, "feature")
    if id_column:
        schema[id_column] = "id"
    table = ingest_csv(input_path, schema)
    for name, n_bins in bins.items():
        table = with_binned_attribute(table, name, n_bins)
    if table.dropped:
        print(f"dropped {table.dropped} row(s) with missing cells", file=sys.stderr)

    audited = [a for a in attributes if a not in exclude]
    params = AuditParams(
        n_perm=int(pick("n_perm", 1000)),
        n_boot=int(pick("n_boot", 1000)),
        cutoff=float(pick("cutoff", 0.95)),
        level=float(pick("level", 0.95)),
        folds=int(pick("folds", 3)),
        seed=int(pick("seed", 0)),
        normalizer=pick("normalizer", "max"),
        features=tuple(features) if features else None,
        train=TrainConfig.from_dict(cfg.get("train", {})),
    )
    predictions = {}
    sidecar = pick("predictions")
    if sidecar:
        for name in audited:
            predictions[name] = load_sidecar(sidecar, table, name)
    elif not features:
        raise ValueError("audit needs --features to cross-fit predictions, or --predictions with a sidecar")
    report = audit(table, audited, predictions, params, input_digest=file_digest(input_path))
    fmt = pick("format", "json")
    out = pick("out")
    if out:
        for path in emit_report(report, fmt, out):
            print(f"wrote {path}", file=sys.stderr)
    else:
        json.dump(report.to_dict(), sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    return 0


def _simulate(args) -> int:
    cfg = _load_config(args.config)
    config = SynthConfig.from_dict(cfg)
    if args.seed is not None:
        config = config.with_(seed=args.seed)
    csv_path, manifest_path = generate(config).write(args.out)
    print(f"wrote {csv_path} and {manifest_path}", file=sys.stderr)
    return 0


def _experiment(args) -> int:
    cfg = _load_config(args.config)
    settings = ExperimentSettings.from_dict(cfg, DEFAULT_BASES[args.name])
    if args.seeds:
        settings = replace(settings, seeds=tuple(int(s) for s in _split(args.seeds)))
    kwargs = {}
    if "utilities" in cfg and args.name != "e3":
        kwargs["utilities"] = tuple(float(u) for u in cfg["utilities"])
    if "signals" in cfg and args.name in ("e3", "e4"):
        kwargs["signals"] = tuple(float(s) for s in cfg["signals"])
    result = EXPERIMENTS[args.name](settings=settings, **kwargs)
    for path in result.write(args.out):
        print(f"wrote {path}", file=sys.stderr)
    json.dump(result.summary, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return 0


def _stat(args) -> int:
    cols = {args.x: "attribute", args.y: "attribute"}
    if args.kind == "cmi":
        if not args.given:
            raise ValueError("stat cmi needs --given")
        cols[args.given] = "label"
    else:
        cols[args.y] = "label"
    table = ingest_csv(args.input, {n: ColumnRole.parse(r) for n, r in cols.items()})
    x = table.codes[args.x]
    if args.kind == "mi":
        stat = adjusted_mi_codes(x, table.codes[args.y], args.normalizer)
    else:
        stat = adjusted_cmi_codes(x, table.codes[args.y], table.codes[args.given], args.normalizer)
    out = {"statistic": args.kind, "n_rows": table.n_rows, "dropped_rows": table.dropped, **stat.to_dict()}
    json.dump(out, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="attrscreen", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("audit", help="screen attributes of a CSV for shortcut risk")
    p.add_argument("--config", help="JSON file with any of the options below")
    p.add_argument("--input")
    p.add_argument("--label")
    p.add_argument("--attributes", action="append", help="comma-separated attribute columns")
    p.add_argument("--features", action="append", help="comma-separated numeric feature columns")
    p.add_argument("--predictions", help="sidecar CSV keyed by row_id")
    p.add_argument("--id-column", dest="id_column", help="row id column matching the sidecar")
    p.add_argument("--bin", action="append", help="continuous attribute to quantile-bin, as COL[:N_BINS]")
    p.add_argument("--exclude", action="append", help="attributes to skip (e.g. clinically relevant)")
    p.add_argument("--n-perm", dest="n_perm", type=int)
    p.add_argument("--n-boot", dest="n_boot", type=int)
    p.add_argument("--cutoff", type=float)
    p.add_argument("--level", type=float)
    p.add_argument("--folds", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--normalizer", choices=NORMALIZERS)
    p.add_argument("--out")
    p.add_argument("--format", choices=("json", "csv"))
    p.set_defaults(func=_audit)

    p = sub.add_parser("simulate", help="write a synthetic dataset and its manifest")
    p.add_argument("--config", help="JSON object of generator parameters")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_simulate)

    p = sub.add_parser("experiment", help="run a validation experiment")
    p.add_argument("name", choices=sorted(EXPERIMENTS))
    p.add_argument("--config", help="JSON settings (base, seeds, n_perm, n_boot, utilities, signals, ...)")
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_experiment)

    p = sub.add_parser("stat", help="one-off adjusted MI or CMI between CSV columns")
    p.add_argument("kind", choices=("mi", "cmi"))
    p.add_argument("--input", required=True)
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--given", help="conditioning column for cmi")
    p.add_argument("--normalizer", choices=NORMALIZERS, default="max")
    p.set_defaults(func=_stat)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError, KeyError) as exc:
        print(f"attrscreen {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
