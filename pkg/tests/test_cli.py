from __future__ import annotations

import json
import subprocess
import sys

import pytest

from attrisk.cli import main, parse_G, parse_records, resolve_seed


def run(*args):
    return main([str(a) for a in args])


def synthesize(data, plan, out, *extra):
    return run("synthesize", "--data", data, "--plan", plan, "--out", out, "--n-draws", 200, "--burn-in", 200, *extra)


def test_parse_records():
    assert parse_records("0-3,17,2") == [0, 1, 2, 3, 17]
    assert parse_records("") == []
    with pytest.raises(Exception):
        parse_records("5-2")


def test_parse_G():
    assert parse_G("11") == [11]
    assert parse_G("11,7") == [11, 7]


def test_seed_fallback(monkeypatch):
    monkeypatch.setenv("ATTRISK_SEED", "42")
    assert resolve_seed(None) == 42 and resolve_seed(3) == 3
    monkeypatch.delenv("ATTRISK_SEED")
    assert isinstance(resolve_seed(None), int)
    assert resolve_seed(None, generate=False) is None


def test_race_synthesis(ce_files, tmp_path, capsys):
    data, plans = ce_files
    out = tmp_path / "syn"
    assert synthesize(data, plans["race"], out, "--seed", 1) == 0
    assert sorted(p.name for p in out.iterdir()) == [
        "draws_step1.csv", "plan.json", "synthesis.json", "synthetic_1.csv",
    ]
    text = capsys.readouterr().out
    assert "acceptance" in text and "200 draws" in text
    meta = json.loads((out / "synthesis.json").read_text())
    assert meta["seed"] == 1 and meta["steps"][0]["draws"] == 200


def test_multiple_datasets(ce_files, tmp_path):
    data, plans = ce_files
    out = tmp_path / "syn"
    assert synthesize(data, plans["two-continuous"], out, "--m", 3, "--seed", 2) == 0
    assert {f"synthetic_{l}.csv" for l in (1, 2, 3)} <= {p.name for p in out.iterdir()}
    meta = json.loads((out / "synthesis.json").read_text())
    assert meta["steps"][0]["draw_rows"] == [189, 194, 199]


def test_malformed_plan_leaves_nothing(ce_files, tmp_path, capsys):
    data, _ = ce_files
    bad = tmp_path / "bad.json"
    bad.write_text('{"columns": [,]}')
    out = tmp_path / "never"
    assert synthesize(data, bad, out) == 2
    assert "line 1" in capsys.readouterr().err
    assert not out.exists()
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".attrisk-")]


def test_plan_type_error_exit_2(ce_files, tmp_path):
    data, plans = ce_files
    doc = json.loads(plans["race"].read_text())
    doc["steps"][0]["family"] = "normal"
    p = tmp_path / "p.json"
    p.write_text(json.dumps(doc))
    assert synthesize(data, p, tmp_path / "o") == 2


def test_fit_error_exit_3(ce_files, tmp_path):
    data, plans = ce_files
    doc = json.loads(plans["race"].read_text())
    doc["columns"][1]["levels"].append("Unseen")
    p = tmp_path / "p.json"
    p.write_text(json.dumps(doc))
    assert synthesize(data, p, tmp_path / "o") == 3
    assert not (tmp_path / "o").exists()


@pytest.fixture
def synthesized(ce_files, tmp_path):
    data, plans = ce_files
    out = tmp_path / "syn"
    assert synthesize(data, plans["two-continuous"], out, "--seed", 5) == 0
    return data, plans["two-continuous"], out


def test_risk_defaults(synthesized, tmp_path, capsys):
    data, plan, syn = synthesized
    out = tmp_path / "risk"
    assert run("risk", "--data", data, "--plan", plan, "--syndata", syn, "--draws", syn, "--out", out) == 0
    meta = json.loads((out / "risk_report.json").read_text())
    assert meta["G"] == [11, 11] and meta["H"] == 50 and meta["uniform_prior"] == 1 / 121
    assert "uniform prior" in capsys.readouterr().out
    assert len((out / "risk_report.csv").read_text().splitlines()) == 151


def test_risk_single_record_and_joint(synthesized, tmp_path):
    data, plan, syn = synthesized
    out = tmp_path / "risk"
    args = ["risk", "--data", data, "--plan", plan, "--syndata", syn / "synthetic_1.csv",
            "--draws", syn / "draws_step1.csv", syn / "draws_step2.csv",
            "--out", out, "--records", 17, "--dump-joint", "--G", "5,7", "--H", 20]
    assert run(*args) == 0
    lines = (out / "risk_report.csv").read_text().splitlines()
    assert len(lines) == 2 and lines[1].startswith("17,")
    joint = (out / "joint" / "record_000017.csv").read_text().splitlines()
    assert joint[0] == "LogExpenditure,LogIncome,is_truth,probability"
    assert len(joint) == 1 + 35
    assert sum(line.split(",")[2] == "1" for line in joint[1:]) == 1


def test_risk_h_too_large(synthesized, tmp_path, capsys):
    data, plan, syn = synthesized
    out = tmp_path / "risk"
    code = run("risk", "--data", data, "--plan", plan, "--syndata", syn, "--draws", syn, "--out", out, "--H", 5000)
    assert code == 2
    assert "H exceeds available draws" in capsys.readouterr().err
    assert not out.exists()


def test_risk_missing_draws_exit_2(synthesized, tmp_path):
    data, plan, syn = synthesized
    code = run("risk", "--data", data, "--plan", plan, "--syndata", syn,
               "--draws", syn / "draws_step1.csv", "--out", tmp_path / "r")
    assert code == 2


def test_report_and_plots(synthesized, tmp_path):
    data, plan, syn = synthesized
    risk = tmp_path / "risk"
    assert run("risk", "--data", data, "--plan", plan, "--syndata", syn, "--draws", syn, "--out", risk) == 0
    outs = []
    for k in range(2):
        out = tmp_path / f"rep{k}"
        assert run("report", "--report", risk, "--out", out, "--emit-plots",
                   "--data", data, "--plan", plan, "--syndata", syn) == 0
        outs.append(out)
    names = sorted(p.name for p in outs[0].iterdir())
    assert "summary.csv" in names and "rank_histogram.svg" in names
    assert "overlay_LogIncome.svg" in names and "marginal_LogExpenditure_density.svg" in names
    for n in names:
        assert (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes(), n
    svg = (outs[0] / "truth_prob_density.svg").read_text()
    assert "uniform prior" in svg


def test_report_empty_subset(synthesized, tmp_path):
    data, plan, syn = synthesized
    risk = tmp_path / "risk"
    assert run("risk", "--data", data, "--plan", plan, "--syndata", syn, "--draws", syn,
               "--out", risk, "--records", "") == 0
    assert run("report", "--report", risk, "--out", tmp_path / "rep") == 2
    assert not (tmp_path / "rep").exists()


def test_report_missing_or_corrupt(tmp_path):
    assert run("report", "--report", tmp_path / "none.csv", "--out", tmp_path / "o") == 2
    (tmp_path / "risk_report.csv").write_text("record,truth_prob\n0,abc\n")
    (tmp_path / "risk_report.json").write_text("{not json")
    assert run("report", "--report", tmp_path, "--out", tmp_path / "o") == 2


def test_race_report_rank_range(ce_files, tmp_path):
    data, plans = ce_files
    syn = tmp_path / "syn"
    assert synthesize(data, plans["race"], syn, "--seed", 3) == 0
    risk = tmp_path / "risk"
    assert run("risk", "--data", data, "--plan", plans["race"], "--syndata", syn, "--draws", syn, "--out", risk) == 0
    rep = tmp_path / "rep"
    assert run("report", "--report", risk, "--out", rep, "--emit-plots") == 0
    summary = json.loads((rep / "summary.json").read_text())
    assert set(int(k) for k in summary["rank_histogram"]) <= set(range(1, 7))
    assert summary["uniform_prior"] == 1 / 6


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "attrisk", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "synthesize" in res.stdout


def test_bad_flag_value_exit_2(ce_files, tmp_path):
    data, plans = ce_files
    with pytest.raises(SystemExit) as info:
        run("risk", "--data", data, "--plan", plans["race"], "--syndata", "x", "--draws", "y", "--H", 0)
    assert info.value.code == 2
