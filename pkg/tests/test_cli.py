import json
import math

import pytest

from coalkit import __version__
from coalkit.cli import main


def data_lines(text):
    return [line for line in text.splitlines() if line and not line.startswith("#")]


def test_bgw_pmf_to_stdout(capsys):
    assert main(["bgw-pmf", "--u", "1", "--lambda", "0.8", "--jump", "dirac:1", "--kmax", "50",
                 "--out", "-"]) == 0
    out = capsys.readouterr().out
    assert f"# version: \"{__version__}\"" in out
    rows = data_lines(out)
    assert rows[0].split(",")[:2] == ["k", "P(T=k)"]
    k1 = [r for r in rows[1:] if r.split(",")[0] == "1"][0]
    assert float(k1.split(",")[1]) == pytest.approx(math.exp(-0.8), abs=1e-15)
    assert float(k1.split(",")[1]) == pytest.approx(0.4493290, abs=5e-8)


def test_bgw_pmf_limiting_json(tmp_path):
    out = tmp_path / "p.json"
    assert main(["bgw-pmf", "--p", "dirac:2", "--t", "0.25", "--kmax", "20", "--format", "json",
                 "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["meta"]["rate"] == pytest.approx(0.5)
    assert data["records"][0] == {"k": 1, "P": pytest.approx(math.exp(-0.5))}
    assert data["summary"]["nonextinction"] == pytest.approx(0.0, abs=1e-12)


def test_simulate_until_coalescence(capsys, tmp_path):
    events = tmp_path / "ev.csv"
    assert main(["simulate", "--n", "2", "--p", "dirac:2", "--until-coalescence", "--seed", "7",
                 "--format", "json", "--events-out", str(events)]) == 0
    data = json.loads(capsys.readouterr().out)
    assert math.isfinite(data["summary"]["T_coal"])
    assert data["summary"]["final_block_count"] == 1
    assert data["meta"]["seed"] == 7 and data["meta"]["config"]["n"] == 2
    assert "# seed: 7" in events.read_text()


def test_simulate_is_seeded(capsys):
    argv = ["simulate", "--n", "30", "--p", "log:0.5", "--horizon", "20", "--seed", "3"]
    main(argv)
    first = capsys.readouterr().out
    main(argv)
    assert capsys.readouterr().out == first


def test_simulate_seed_from_environment(capsys, monkeypatch):
    monkeypatch.setenv("COALKIT_SEED", "41")
    assert main(["simulate", "--n", "5", "--p", "dirac:2", "--horizon", "1", "--format", "json"]) == 0
    assert json.loads(capsys.readouterr().out)["meta"]["seed"] == 41


def test_experiment_threshold_example(tmp_path, capsys):
    out = tmp_path / "r.json"
    assert main(["experiment", "threshold", "--n", "2000", "--p", "dirac:2", "--reps", "1000",
                 "--seed", "1", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert set(data) == {"meta", "records", "summary", "verdicts"}
    assert 0 <= data["summary"]["ks_T_s"]["statistic"] < 0.06
    assert data["meta"]["seed"] == 1 and len(data["records"]) == 1000
    err = capsys.readouterr().err
    assert "ks_T_s" in err and err.count("\n") == len(data["verdicts"])


def test_experiment_flags_override_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"experiment": "hydro", "n": 100, "t": 0.2, "reps": 2, "seed": 5,
                               "kmax": 3}))
    out = tmp_path / "r.json"
    assert main(["experiment", "hydro", "--config", str(cfg), "--reps", "3", "--out", str(out),
                 "--format", "json"]) == 0
    meta = json.loads(out.read_text())["meta"]
    assert meta["config"]["reps"] == 3 and meta["config"]["seed"] == 5
    again = tmp_path / "s.json"
    assert main(["experiment", "hydro", "--config", str(cfg), "--reps", "3", "--out", str(again),
                 "--format", "json"]) == 0
    assert json.loads(again.read_text())["records"] == json.loads(out.read_text())["records"]


def test_experiment_csv_output(tmp_path):
    out = tmp_path / "r.csv"
    assert main(["experiment", "hydro", "--n", "100,200", "--t", "0.2", "--reps", "2", "--seed",
                 "1", "--kmax", "3", "--out", str(out), "--format", "csv"]) == 0
    text = out.read_text()
    assert "# seed: 1" in text
    assert len(data_lines(text)) == 1 + 4


def test_coag_outputs(tmp_path, capsys):
    summary = tmp_path / "m.csv"
    assert main(["coag", "--p", "dirac:2", "--t-end", "0.05", "--kmax", "10", "--dt", "0.01",
                 "--record-every", "0.01", "--format", "json", "--summary-out", str(summary)]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["times"][0] == 0.0 and data["times"][-1] == pytest.approx(0.05)
    assert data["moments"][0]["m1"] == pytest.approx(1.0)
    assert "gelation" in data["meta"]
    assert data_lines(summary.read_text())[0] == "t,m1,m2,gel_mass"


def test_tuple_stats(capsys, tmp_path):
    trace = tmp_path / "trace.csv"
    assert main(["tuple-stats", "--n", "200", "--p", "dirac:2", "--t", "0.3", "--reps", "500",
                 "--seed", "2", "--forbidden", "3", "--format", "json",
                 "--trace-out", str(trace)]) == 0
    data = json.loads(capsys.readouterr().out)
    s = data["summary"]
    assert 0 <= s["tv_zeta_vs_cpois"] < 0.1 and 0 <= s["tv_neighbours_vs_limit"] < 0.1
    assert s["neighbour_tv_bound"] > 0
    assert sum(r["zeta_cpois"] for r in data["records"]) == pytest.approx(1.0, abs=1e-9)
    assert "step,x_k,xi" in trace.read_text()


@pytest.mark.parametrize("argv", [
    ["bgw-pmf", "--lambda", "0.8", "--jump", "nonsense:1"],
    ["simulate", "--n", "10", "--p", "dirac:2"],
    ["simulate", "--n", "10", "--p", "zipf", "--horizon", "1"],
    ["simulate", "--p", "dirac:2", "--horizon", "1"],
    ["experiment", "phase", "--regime", "subcritical", "--t", "0.8", "--n", "100", "--reps", "1"],
    ["experiment", "hydro", "--t", "0.1", "--reps", "0"],
    ["experiment", "hydro", "--config", "/nonexistent.json"],
    ["frobnicate"],
])
def test_config_errors_exit_2(argv, capsys):
    assert main(argv) == 2
    assert capsys.readouterr().err.strip()


def test_runtime_failure_exits_1(capsys):
    assert main(["coag", "--p", "dirac:2", "--t-end", "0.5", "--kmax", "2000", "--dt", "0.01"]) == 1
    assert "unstable" in capsys.readouterr().err


def test_version(capsys):
    assert main(["--version"]) == 0
    assert __version__ in capsys.readouterr().out
