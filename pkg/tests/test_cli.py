import csv
import json

import pytest

from causalpipe.cli import main

SMALL = {"n_diag": 40, "n_presc": 20, "seed": 3}


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "config.json"
    p.write_text(json.dumps(SMALL))
    return p


def _run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def done(tmp_path_factory):
    """A full simulate -> diagnose -> prescribe -> report run on a small config."""
    root = tmp_path_factory.mktemp("cli")
    c = root / "config.json"
    c.write_text(json.dumps(SMALL))
    out = root / "run"
    assert _run("simulate", "--config", c, "--out", out) == 0
    assert _run("diagnose", "--out", out) == 0
    assert _run("prescribe", "--out", out, "--cascade") == 0
    return out


def test_simulate_default_config(tmp_path):
    c = tmp_path / "empty.json"
    c.write_text("{}")
    out = tmp_path / "run"
    assert _run("simulate", "--config", c, "--out", out) == 0
    for name in ("config.json", "tasks.jsonl", "splits.json", "episodes.jsonl", "oracle_cache.jsonl",
                 "manifest.json"):
        assert (out / name).is_file()
    splits = json.loads((out / "splits.json").read_text())
    assert (len(splits["diag"]), len(splits["presc"])) == (500, 200)
    assert not set(splits["diag"]) & set(splits["presc"])


def test_missing_config_names_path(tmp_path, capsys):
    assert _run("simulate", "--config", tmp_path / "nope.json", "--out", tmp_path / "r") != 0
    assert "nope.json" in capsys.readouterr().err


@pytest.mark.parametrize("body,where", [
    ({"agent": {"kappa": 2}}, "agent.kappa"),
    ({"agent": {"gamma": 0.1}}, "agent.gamma"),
    ({"n_diag": "ten"}, "n_diag"),
    ({"domain": "banking"}, "domain"),
    ({"colour": 1}, "colour"),
])
def test_bad_config_field_named(tmp_path, capsys, body, where):
    c = tmp_path / "c.json"
    c.write_text(json.dumps(body))
    assert _run("simulate", "--config", c, "--out", tmp_path / "r") == 2
    assert f"config error at {where}" in capsys.readouterr().err


def test_simulate_reproducible(tmp_path, cfg):
    hashes = []
    for name in ("a", "b"):
        assert _run("simulate", "--config", cfg, "--out", tmp_path / name) == 0
        m = json.loads((tmp_path / name / "manifest.json").read_text())
        hashes.append((m["run_id"], m["commands"][0]["outputs"]))
    assert hashes[0] == hashes[1]


def test_seed_override_changes_dataset(tmp_path, cfg):
    _run("simulate", "--config", cfg, "--out", tmp_path / "a")
    _run("simulate", "--config", cfg, "--out", tmp_path / "b", "--seed", 99)
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert mb["root_seed"] == 99 and ma["dataset_hashes"] != mb["dataset_hashes"]


def test_diagnose_outputs(done):
    census = json.loads((done / "census.json").read_text())
    assert census["pop_target"] in (1, 2, 3, 4)
    assert [c["tau"] for c in census["censuses"]] == [0.01, 0.05, 0.1, 0.2]
    assert (done / "oracle_cache.jsonl.seal").is_file()
    with open(done / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 40 * 4
    pools = json.loads((done / "pools.json").read_text())
    assert pools


def test_prescribe_outputs(done):
    summary = json.loads((done / "prescribe_summary.json").read_text())
    tags = [r["configuration_tag"] for r in summary["configurations"]]
    assert "baseline" in tags and "popccp@M3" in tags
    for tag in tags:
        assert (done / "results" / (tag.replace("@", "_at_") + ".csv")).is_file()
    assert (done / "cascade.json").is_file() and (done / "cascade.csv").is_file()
    manifest = json.loads((done / "manifest.json").read_text())
    assert [c["command"] for c in manifest["commands"]] == ["simulate", "diagnose", "prescribe"]


def test_table4_columns(done, capsys):
    assert _run("table4", "--out", done) == 0
    with open(done / "table4.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["comparison", "raw_p", "holm_p", "d_z", "n", "statistic", "mean_diff"]
    assert len(rows) == 5
    body = json.loads((done / "table4.json").read_text())
    assert all(r["holm_p"] >= r["raw_p"] for r in body["comparisons"])


def test_report_marks_missing(done, capsys):
    assert _run("report", "--out", done, "--configs", "baseline,popccp@M3,oracle@M3") == 0
    rep = json.loads((done / "report.json").read_text())
    assert "oracle@M3" in rep["missing_configurations"]
    assert "MISSING" in (done / "report.txt").read_text()


def test_report_judge_agreement(done):
    sev = done / "severities_presc.csv"
    assert _run("report", "--out", done, "--judge-a", sev, "--judge-b", sev) == 0
    agree = json.loads((done / "report.json").read_text())["judge_agreement"]
    assert agree["krippendorff_alpha"] == pytest.approx(1.0)
    assert agree["binary_agreement"] == 1.0


def test_report_judge_missing_file(done, capsys):
    assert _run("report", "--out", done, "--judge-a", done / "x.csv", "--judge-b", done / "y.csv") == 2
    assert "x.csv" in capsys.readouterr().err


def test_prescribe_unknown_tag(done, capsys):
    assert _run("prescribe", "--out", done, "--configs", "popccp@M9") == 2
    assert capsys.readouterr().err


def test_prescribe_requires_sealed_cache(tmp_path, cfg, capsys):
    out = tmp_path / "r"
    _run("simulate", "--config", cfg, "--out", out)
    (out / "pools.json").write_text("{}")
    (out / "census.json").write_text("{}")
    (out / "routing_stats.json").write_text("{}")
    assert _run("prescribe", "--out", out) == 2
    assert "not sealed" in capsys.readouterr().err


def test_diagnose_missing_inputs(tmp_path, capsys):
    assert _run("diagnose", "--out", tmp_path) == 2
    assert "missing inputs" in capsys.readouterr().err


def test_kappa_grid_and_paradox(tmp_path, cfg):
    assert _run("kappa-grid", "--config", cfg, "--out", tmp_path, "--kappas", "0,0.9") == 0
    grid = json.loads((tmp_path / "kappa_grid.json").read_text())
    assert [r["kappa"] for r in grid["rows"]] == [0.0, 0.9]
    assert _run("paradox", "--config", cfg, "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "paradox_report.json").read_text())
    assert "popccp@M3" in rep["mean_delta"]
