import csv
import json

import pytest

from dualrec.cli import ABLATION_GRID, RunSpec, main
from dualrec.dataio import load_dataset

TINY_ENGINE = {"population_total": 16, "t_max": 4, "coordination_interval": 2}
TINY_SYNTH = {"n_items": 60, "n_categories": 6, "n_sellers": 8, "n_users": 3, "seed": 2}


def write_spec(tmp_path, **extra):
    spec = {"engine": TINY_ENGINE, "single_population_total": 16, "synthetic": TINY_SYNTH, **extra}
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(spec))
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_synth_writes_reloadable_identical_files(tmp_path, capsys):
    cfg = tmp_path / "synth.json"
    cfg.write_text(json.dumps({"synthetic": TINY_SYNTH}))
    assert main(["synth", "--config", str(cfg), "--out-dir", str(tmp_path / "a")]) == 0
    summary = capsys.readouterr().out.splitlines()
    assert summary[1].split(",")[0] == str(TINY_SYNTH["n_items"])
    assert main(["synth", "--config", str(cfg), "--out-dir", str(tmp_path / "b")]) == 0
    for name in ("catalog.jsonl", "interactions.jsonl", "embeddings.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    data = load_dataset(tmp_path / "a/catalog.jsonl", tmp_path / "a/interactions.jsonl", tmp_path / "a/embeddings.jsonl")
    assert len(data.records) == TINY_SYNTH["n_items"]


def test_run_writes_trial_and_mean_rows(tmp_path):
    spec = write_spec(tmp_path, trials=3)
    out = tmp_path / "out"
    code = main(["run", "--config", str(spec), "--out-dir", str(out)])
    rows = read_csv(out / "metrics.csv")
    assert len([r for r in rows if r["seed"] != "mean"]) == 12
    assert sorted(r["mode"] for r in rows if r["seed"] == "mean") == sorted(
        ["dual", "no-llm", "single-population", "no-constraints"])
    traces = sorted((out / "traces").glob("*.csv"))
    assert len(traces) == 12
    assert all(len(p.read_text().splitlines()) == TINY_ENGINE["t_max"] + 2 for p in traces)
    constrained_ok = all(r["feasible"] == "True" for r in rows if r["mode"] != "no-constraints")
    assert code == (0 if constrained_ok else 1)


def test_run_is_byte_deterministic(tmp_path):
    spec = write_spec(tmp_path, seeds=[4])
    for name in ("r1", "r2"):
        main(["run", "--config", str(spec), "--out-dir", str(tmp_path / name), "--modes", "dual,no-llm"])
    assert (tmp_path / "r1/metrics.csv").read_bytes() == (tmp_path / "r2/metrics.csv").read_bytes()
    for trace in (tmp_path / "r1/traces").iterdir():
        assert trace.read_bytes() == (tmp_path / "r2/traces" / trace.name).read_bytes()


def test_run_with_mock_llm_and_gnuplot(tmp_path):
    script = tmp_path / "replies.json"
    script.write_text(json.dumps([{"alpha": 0.5, "rationale": "balanced"}]))
    spec = write_spec(tmp_path, seeds=[0])
    out = tmp_path / "out"
    main(["run", "--config", str(spec), "--out-dir", str(out), "--modes", "dual", "--mock-llm", str(script),
          "--gnuplot"])
    trace = read_csv(next((out / "traces").glob("*.csv")))
    assert trace[2]["alpha"] == "0.5" and trace[2]["rationale"] == "balanced"
    assert list((out / "traces").glob("*.dat"))


def test_exit_code_nonzero_on_infeasible_trial(tmp_path):
    spec = write_spec(tmp_path, seeds=[0])
    data = json.loads(spec.read_text())
    data["synthetic"]["recent_fraction"] = 0.0
    spec.write_text(json.dumps(data))
    assert main(["run", "--config", str(spec), "--out-dir", str(tmp_path / "o"), "--modes", "dual"]) == 1
    assert main(["run", "--config", str(spec), "--out-dir", str(tmp_path / "o"), "--modes", "no-constraints"]) == 0
    rows = read_csv(tmp_path / "o/metrics.csv")
    assert rows[0]["feasible"] == "True"


def test_ablate_grid(tmp_path):
    spec = write_spec(tmp_path, seeds=[0])
    out = tmp_path / "abl"
    main(["ablate", "--config", str(spec), "--out-dir", str(out)])
    rows = read_csv(out / "ablation.csv")
    assert len(rows) == len(ABLATION_GRID) == 12
    assert all(float(r["time_s"]) > 0 for r in rows)
    assert [r["setting"] for r in rows if r["parameter"] == "Constraints"] == [
        "Strict (theta=0.7)", "Normal (theta=0.6)", "Relaxed (theta=0.5)"]
    main(["ablate", "--config", str(spec), "--out-dir", str(out), "--with-baselines"])
    assert len(read_csv(out / "ablation.csv")) == 15


def test_report_reaggregates(tmp_path, capsys):
    spec = write_spec(tmp_path, seeds=[0, 1])
    main(["run", "--config", str(spec), "--out-dir", str(tmp_path / "r"), "--modes", "dual"])
    capsys.readouterr()
    assert main(["report", str(tmp_path / "r/metrics.csv"), "--out", str(tmp_path / "agg.csv")]) == 0
    rows = read_csv(tmp_path / "agg.csv")
    original = [r for r in read_csv(tmp_path / "r/metrics.csv") if r["seed"] == "mean"]
    assert rows == original


def test_spec_validation(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"seeds": [1, 1]}))
    with pytest.raises(ValueError, match="distinct"):
        RunSpec.load(bad)
    bad.write_text(json.dumps({"trials": 0}))
    with pytest.raises(ValueError):
        RunSpec.load(bad)
    bad.write_text(json.dumps({"modes": ["fancy"]}))
    with pytest.raises(ValueError):
        RunSpec.load(bad)
    bad.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(ValueError, match="unknown config keys"):
        RunSpec.load(bad)
