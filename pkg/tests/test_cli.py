import json

import pandas as pd
import pytest

from config import ENV_MAPPINGS
from data_persistence import ReportStore, validate_report
from run import EXIT_CONFIG, EXIT_MISMATCH, EXIT_OK, build_parser, main


@pytest.fixture(autouse=True)
def pinned_env(monkeypatch):
    for name in ENV_MAPPINGS:
        monkeypatch.delenv(name, raising=False)
    monkeypatch.setenv("DISPML_TIMESTAMP", "2024-01-01T00:00:00+00:00")


def _load(path):
    return json.loads(path.read_text(encoding="utf-8"))


def _check_reports(out_dir):
    """Every emitted report validates against its model."""
    kinds = {"certificate", "blocksystem", "tf_report", "summary", "fixedpoint"}
    for path in out_dir.glob("*.json"):
        if path.stem in kinds:
            ok, messages = validate_report(path.stem, _load(path))
            assert ok, messages
    manifest = ReportStore(out_dir).read_json("manifest.json")
    assert validate_report("manifest", manifest)[0]
    return manifest


@pytest.mark.parametrize("scenario,expect,code", [
    ("debye", None, EXIT_OK),
    ("lorentz", None, EXIT_OK),
    ("lorentz", "stable", EXIT_MISMATCH),
    ("debye", "unstable", EXIT_MISMATCH),
    ("cfs-vacuum", None, EXIT_OK),
    ("upml-vacuum", None, EXIT_OK),
])
def test_certify_verdicts(tmp_path, scenario, expect, code):
    argv = ["certify", "--scenario", scenario, "--out", str(tmp_path)]
    if expect:
        argv += ["--expect", expect]
    assert main(argv) == code
    certificate = _load(tmp_path / "certificate.json")
    assert certificate["scenario"] == scenario
    manifest = _check_reports(tmp_path)
    assert manifest["exit_code"] == code
    assert "certificate.json" in manifest["outputs"]


def test_certify_block_and_clauses(tmp_path):
    assert main(["certify", "--scenario", "cfs-vacuum", "--out", str(tmp_path)]) == EXIT_OK
    block = _load(tmp_path / "certificate.json")["block"]
    assert block["variant"] == "cfs-vacuum" and block["verdict"] == "Accretive"

    clauses_dir = tmp_path / "clauses"
    assert main(["certify", "--scenario", "debye", "--out", str(clauses_dir)]) == EXIT_OK
    clauses = _load(clauses_dir / "certificate.json")["clauses"]
    assert {c["name"] for c in clauses} >= {"M2", "M2'"}


def test_certify_reruns_are_byte_identical(tmp_path):
    argv = ["certify", "--scenario", "debye", "--out", str(tmp_path)]
    assert main(argv) == EXIT_OK
    first = {p.name: p.read_bytes() for p in tmp_path.iterdir()}
    assert main(argv) == EXIT_OK
    assert {p.name: p.read_bytes() for p in tmp_path.iterdir()} == first


def test_assemble_pass_and_literal_row(tmp_path):
    assert main(["assemble", "--scenario", "debye-cfs", "--out", str(tmp_path / "ok")]) == EXIT_OK
    report = _load(tmp_path / "ok" / "tf_report.json")
    assert report["status"] == "PASS" and not report["paper_literal_s3"]
    system = _load(tmp_path / "ok" / "blocksystem.json")
    assert system["labels"][:2] == ["E", "H"] and len(system["rows"]) == system["layout"]["dim"]
    _check_reports(tmp_path / "ok")

    literal = tmp_path / "literal"
    assert main(["assemble", "--scenario", "debye-cfs", "--paper-literal-s3", "--out", str(literal)]) == EXIT_MISMATCH
    assert _load(literal / "tf_report.json")["status"] == "FAIL"
    _check_reports(literal)


def test_config_errors_exit_two(tmp_path):
    assert main(["certify", "--scenario", "no-such-scenario", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["certify", "--config", str(tmp_path / "absent.toml"), "--out", str(tmp_path)]) == EXIT_CONFIG
    bad = tmp_path / "bad.toml"
    bad.write_text('[fixedpoint]\nkind = "instantaneous"\n', encoding="utf-8")
    assert main(["fixedpoint", "--config", str(bad), "--out", str(tmp_path / "fp")]) == EXIT_CONFIG


def test_decay_window_needs_energy(tmp_path):
    user = tmp_path / "user.toml"
    user.write_text("[simulate]\nrecord = []\n", encoding="utf-8")
    argv = ["simulate", "--scenario", "upml-decay", "--config", str(user), "--out", str(tmp_path / "run")]
    assert main(argv) == EXIT_CONFIG


def test_simulate_upml_decay(tmp_path):
    assert main(["simulate", "--scenario", "upml-decay", "--out", str(tmp_path)]) == EXIT_OK
    summary = _load(tmp_path / "summary.json")
    assert summary["decay_rate"] == pytest.approx(2.0, rel=0.02)
    assert summary["cfl_ratio"] == pytest.approx(0.9)
    series = pd.read_csv(tmp_path / "timeseries.csv")
    assert list(series.columns)[0] == "time"
    assert len(series) == 201
    assert "timeseries.csv" in summary["files"]
    _check_reports(tmp_path)


def test_simulate_probes_and_snapshot(tmp_path):
    assert main(["simulate", "--scenario", "vacuum-pulse", "--out", str(tmp_path)]) == EXIT_OK
    summary = _load(tmp_path / "summary.json")
    assert set(summary["probes"]) == {"E@2.5", "E@7.5"}
    assert (tmp_path / "probes.csv").exists() and (tmp_path / "snapshot.csv").exists()
    _check_reports(tmp_path)


def test_fixedpoint_saturable(tmp_path):
    assert main(["fixedpoint", "--scenario", "saturable", "--out", str(tmp_path)]) == EXIT_OK
    report = _load(tmp_path / "fixedpoint.json")
    assert report["converged"]
    assert report["predicted_ratio"] < 1.0
    assert report["compare_rel_diff"] <= 1e-6
    assert len(pd.read_csv(tmp_path / "iterations.csv")) == report["iterations"]
    _check_reports(tmp_path)


def test_default_output_layout(tmp_path, monkeypatch):
    monkeypatch.setenv("DISPML_OUT_DIR", str(tmp_path))
    assert main(["certify", "--scenario", "debye"]) == EXIT_OK
    assert (tmp_path / "debye" / "certify" / "certificate.json").exists()


def test_listing_commands(tmp_path, capsys):
    assert main(["scenarios"]) == EXIT_OK
    assert "lorentz-modified" in capsys.readouterr().out.split()
    assert main(["schemas", "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "certificate.schema.json").exists()


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
