import csv
import json
from pathlib import Path

import numpy as np
import pytest

from attrscreen.audit import (
    CSV_COLUMNS,
    PLOT_COLUMNS,
    AttributeRiskRecord,
    AuditParams,
    AuditReport,
    attribute_seed,
    audit,
    emit_report,
    load_report,
    rank_records,
)
from attrscreen.cli import main
from attrscreen.crossfit import CrossFitResult
from attrscreen.infotheo import AdjustedStatistic
from attrscreen.table import AuditTable, SchemaError, ingest_csv

from .audit_fixture import ATTRIBUTES, FEATURES, SCHEMA, write_audit_csv

GOLDEN = Path(__file__).parent / "data" / "golden_report.csv"
FAST = AuditParams(n_perm=200, n_boot=200, seed=3)


@pytest.fixture(scope="module")
def audit_csv(tmp_path_factory):
    return write_audit_csv(tmp_path_factory.mktemp("audit") / "input.csv")


@pytest.fixture(scope="module")
def report(audit_csv):
    return audit(ingest_csv(audit_csv, SCHEMA), list(ATTRIBUTES), params=FAST)


def _record(name, utility, detectability, detectable):
    stat = AdjustedStatistic(0.0, 0.0, 1.0, utility, False)
    det = AdjustedStatistic(0.0, 0.0, 1.0, detectability, False)
    return AttributeRiskRecord(name, 2, stat, None, det, None, None, detectable, "crossfit")


class TestRanking:
    def test_order(self, report):
        by_name = {r.attribute: r for r in report.records}
        assert [r.attribute for r in report.ranked()] == ["source", "site_hi", "site_lo", "noise"]
        assert by_name["source"].detectable
        assert not by_name["noise"].detectable
        assert abs(by_name["noise"].utility.adjusted) < 0.02

    def test_tautological_unranked(self, report):
        copy = next(r for r in report.records if r.attribute == "y_copy")
        assert copy.tautological and copy.rank is None
        assert copy.utility.adjusted == pytest.approx(1.0)

    def test_ranks_are_a_permutation(self, report):
        ranks = sorted(r.rank for r in report.records if r.rank is not None)
        assert ranks == list(range(1, len(ranks) + 1))

    def test_flag_matches_percentile(self, report):
        for r in report.records:
            if r.permutation is not None:
                assert r.detectable == (r.permutation.percentile >= FAST.cutoff)

    def test_equal_utility_prefers_detectability(self):
        records = [_record("b", 0.3, 0.1, True), _record("a", 0.3, 0.6, True)]
        rank_records(records)
        assert {r.attribute: r.rank for r in records} == {"a": 1, "b": 2}

    def test_flag_first_then_utility_then_name(self):
        records = [_record("z", 0.9, 0.9, False), _record("y", 0.1, 0.1, True),
                   _record("x", 0.1, 0.1, True), _record("w", 0.5, 0.0, True)]
        rank_records(records)
        assert sorted(records, key=lambda r: r.rank) == [records[3], records[2], records[1], records[0]]

    def test_attribute_seed_depends_on_name_only(self):
        assert attribute_seed(3, "a") == attribute_seed(3, "a")
        assert attribute_seed(3, "a") != attribute_seed(3, "b")
        assert attribute_seed(3, "a") != attribute_seed(4, "a")


class TestAuditInputs:
    def test_empty_attribute_list(self, audit_csv, tmp_path):
        rep = audit(ingest_csv(audit_csv, SCHEMA), [], params=FAST)
        assert rep.records == []
        paths = emit_report(rep, "json", tmp_path / "empty.json")
        assert load_report(paths[0]).records == []

    def test_given_predictions(self):
        rng = np.random.default_rng(0)
        y = rng.integers(0, 2, 300)
        a = rng.integers(0, 2, 300)
        table = AuditTable.from_arrays(y, attributes={"a": a})
        scores = np.eye(2)[a]
        pred = CrossFitResult(a.copy(), scores, np.full(300, -1), "external")
        rep = audit(table, ["a"], {"a": pred}, params=FAST)
        rec = rep.records[0]
        assert rec.prediction_source == "external"
        assert rec.detectability.adjusted == pytest.approx(1.0)
        assert rec.detectable

    def test_unknown_attribute(self, audit_csv):
        with pytest.raises(SchemaError):
            audit(ingest_csv(audit_csv, SCHEMA), ["f_src"], params=FAST)

    def test_duplicate_attributes(self, audit_csv):
        with pytest.raises(SchemaError):
            audit(ingest_csv(audit_csv, SCHEMA), ["noise", "noise"], params=FAST)

    def test_metadata(self, report):
        md = report.metadata
        assert md["params"]["seed"] == 3 and md["params"]["n_perm"] == 200
        assert md["input_digest"].startswith("sha256:")
        assert md["n_rows"] == 600 and md["label"] == "y"
        assert "created" in md and "created" not in report.canonical()["metadata"]


class TestEmit:
    def test_json_round_trip(self, report, tmp_path):
        path, plot = emit_report(report, "json", tmp_path / "r.json")
        again = load_report(path)
        assert again.to_dict() == json.loads(json.dumps(report.to_dict()))
        assert plot.name == "r.plot.csv"

    def test_csv_layout(self, report, tmp_path):
        path, plot = emit_report(report, "csv", tmp_path / "r.csv")
        with path.open() as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == CSV_COLUMNS
        assert [r[1] for r in rows[1:]] == ["source", "site_hi", "site_lo", "noise", "y_copy"]
        with plot.open() as fh:
            plot_rows = list(csv.reader(fh))
        assert tuple(plot_rows[0]) == PLOT_COLUMNS
        assert len(plot_rows) == 5

    def test_csv_matches_golden(self, audit_csv, tmp_path):
        first = emit_report(audit(ingest_csv(audit_csv, SCHEMA), list(ATTRIBUTES), params=FAST),
                            "csv", tmp_path / "a.csv")[0]
        second = emit_report(audit(ingest_csv(audit_csv, SCHEMA), list(ATTRIBUTES), params=FAST),
                             "csv", tmp_path / "b.csv")[0]
        assert first.read_bytes() == second.read_bytes()
        assert first.read_bytes() == GOLDEN.read_bytes()

    def test_unknown_format(self, report, tmp_path):
        with pytest.raises(ValueError):
            emit_report(report, "xml", tmp_path / "r.xml")

    def test_io_error_names_path(self, report, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(OSError, match="file"):
            emit_report(report, "json", blocker / "sub" / "r.json")

    def test_report_from_dict(self, report):
        again = AuditReport.from_dict(report.to_dict())
        assert again.canonical() == report.canonical()


class TestCLI:
    def _audit_args(self, path, out, *extra):
        return ["audit", "--input", str(path), "--label", "y", "--attributes", ",".join(ATTRIBUTES),
                "--features", ",".join(FEATURES), "--id-column", "row_id", "--n-perm", "200",
                "--n-boot", "200", "--seed", "3", "--out", str(out), *extra]

    def test_audit_json_matches_api(self, audit_csv, report, tmp_path):
        out = tmp_path / "cli.json"
        assert main(self._audit_args(audit_csv, out)) == 0
        got = load_report(out).canonical()
        want = json.loads(json.dumps(report.canonical()))
        # the API run used every feature column implicitly
        assert got["metadata"]["params"].pop("features") == list(FEATURES)
        want["metadata"]["params"].pop("features")
        assert got["metadata"]["params"] == want["metadata"]["params"]
        assert got["records"] == want["records"]

    def test_audit_csv_and_exclude(self, audit_csv, tmp_path):
        out = tmp_path / "cli.csv"
        assert main(self._audit_args(audit_csv, out, "--format", "csv", "--exclude", "noise,y_copy")) == 0
        with out.open() as fh:
            names = [r["attribute"] for r in csv.DictReader(fh)]
        assert names == ["source", "site_hi", "site_lo"]
        assert (tmp_path / "cli.plot.csv").exists()

    def test_audit_with_binning(self, audit_csv, tmp_path):
        out = tmp_path / "bin.json"
        args = ["audit", "--input", str(audit_csv), "--label", "y", "--attributes", "age",
                "--features", "f_y", "--bin", "age:4", "--n-perm", "100", "--n-boot", "100", "--out", str(out)]
        assert main(args) == 0
        rec = load_report(out).records[0]
        assert rec.attribute == "age" and rec.n_categories == 4

    def test_audit_config_file(self, audit_csv, tmp_path):
        cfg = tmp_path / "audit.json"
        cfg.write_text(json.dumps({"input": str(audit_csv), "label": "y", "attributes": ["noise"],
                                   "features": list(FEATURES), "n_perm": 100, "n_boot": 100,
                                   "out": str(tmp_path / "c.json")}))
        assert main(["audit", "--config", str(cfg)]) == 0
        assert load_report(tmp_path / "c.json").metadata["params"]["n_perm"] == 100

    def test_audit_sidecar(self, tmp_path):
        data = tmp_path / "d.csv"
        data.write_text("id,y,a\n" + "".join(f"{i},{i % 2},{(i // 2) % 2}\n" for i in range(40)))
        side = tmp_path / "s.csv"
        side.write_text("row_id,a_pred\n" + "".join(f"{i},{(i // 2) % 2}\n" for i in range(40)))
        out = tmp_path / "o.json"
        args = ["audit", "--input", str(data), "--label", "y", "--attributes", "a", "--id-column", "id",
                "--predictions", str(side), "--n-perm", "100", "--n-boot", "100", "--out", str(out)]
        assert main(args) == 0
        rec = load_report(out).records[0]
        assert rec.prediction_source.startswith("sidecar")
        assert rec.detectability.adjusted == pytest.approx(1.0)

    def test_audit_errors(self, audit_csv, tmp_path, capsys):
        assert main(["audit", "--input", str(tmp_path / "missing.csv"), "--label", "y",
                     "--attributes", "a", "--features", "f"]) != 0
        assert "error" in capsys.readouterr().err
        assert main(["audit", "--input", str(audit_csv), "--label", "nope", "--attributes", "noise",
                     "--features", "f_y"]) != 0
        assert main(["audit", "--input", str(audit_csv), "--label", "y", "--attributes", "noise"]) != 0
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"colour": 1}))
        assert main(["audit", "--config", str(bad)]) != 0

    def test_simulate(self, tmp_path):
        cfg = tmp_path / "sim.json"
        cfg.write_text(json.dumps({"n": 300, "n_artifact": 40, "utility": 0.3, "signal": 2.0, "d": 3}))
        assert main(["simulate", "--config", str(cfg), "--seed", "5", "--out", str(tmp_path / "sim")]) == 0
        manifest = json.loads((tmp_path / "sim" / "manifest.json").read_text())
        assert manifest["config"]["seed"] == 5
        table = ingest_csv(tmp_path / "sim" / "dataset.csv", manifest["schema"])
        assert table.n_rows == 300

    def test_simulate_infeasible(self, tmp_path, capsys):
        cfg = tmp_path / "sim.json"
        cfg.write_text(json.dumps({"utility": 0.95}))
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "x")]) != 0
        assert "feasible range" in capsys.readouterr().err

    def test_experiment(self, tmp_path, capsys):
        cfg = tmp_path / "e3.json"
        cfg.write_text(json.dumps({"base": {"n": 400, "n_artifact": 200}, "n_perm": 50,
                                   "signals": [3.0, 0.0]}))
        assert main(["experiment", "e3", "--config", str(cfg), "--seeds", "1", "--out", str(tmp_path / "e")]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert set(summary["table"]) == {"3.0", "0.0"}
        assert (tmp_path / "e" / "e3.csv").exists()

    def test_stat(self, audit_csv, capsys):
        assert main(["stat", "mi", "--input", str(audit_csv), "--x", "source", "--y", "y"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["statistic"] == "mi" and 0.4 < out["adjusted"] < 0.7
        assert main(["stat", "cmi", "--input", str(audit_csv), "--x", "source", "--y", "source",
                     "--given", "y"]) == 0
        assert json.loads(capsys.readouterr().out)["adjusted"] == pytest.approx(1.0)
        assert main(["stat", "cmi", "--input", str(audit_csv), "--x", "source", "--y", "noise"]) != 0

    def test_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["bogus"])
        assert exc.value.code != 0
