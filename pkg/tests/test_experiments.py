import json
import math
import operator

import numpy as np
import pytest

from coalkit.experiments import (ConfigError, ExperimentConfig, blocksize_bound, gumbel_cdf,
                                 resolve_seed, run_experiment, stress_law, verdict)
from coalkit.dist import LengthDistribution, factorial_moment, pgf_eval

OPS = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge}


def config(**kw):
    return ExperimentConfig.from_dict(kw)


def assert_auditable(report):
    for v in report.verdicts:
        assert {"statistic", "comparison", "threshold", "passed", "gated"} <= set(v)
        assert v["passed"] == OPS[v["comparison"]](v["statistic"], v["threshold"])


# -- config ----------------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ConfigError, match="unknown config keys"):
        config(experiment="hydro", t=0.3, colour="red")
    with pytest.raises(ConfigError):
        config(experiment="hydro", t=0.3, reps=0)
    with pytest.raises(ConfigError):
        config(experiment="hydro", t=0.3, n=1)
    with pytest.raises(ConfigError):
        config(experiment="nope")
    with pytest.raises(ConfigError):
        config(experiment="hydro", t=0.3, p="bogus:1")
    with pytest.raises(ConfigError, match="needs t"):
        config(experiment="blocksize")


def test_regime_selection_is_checked():
    with pytest.raises(ConfigError, match="t\\*m2 < 1"):
        config(experiment="phase", regime="subcritical", t=0.6)
    with pytest.raises(ConfigError, match="t\\*m2 > 1"):
        config(experiment="phase", regime="supercritical", t=0.4)
    with pytest.raises(ConfigError, match="critical regime"):
        config(experiment="phase", regime="critical", t=0.7, theta=0.0, n=1000)
    with pytest.raises(ConfigError, match="regularly varying"):
        config(experiment="phase", regime="powerlaw", t=0.3)
    cfg = config(experiment="phase", regime="critical", theta=1.0, n=1000)
    assert cfg.time_for(1000) == pytest.approx(0.5 * 1.1)


def test_time_schedule_strings():
    p = LengthDistribution.power_law(3.5)
    cfg = config(experiment="hydro", p="powerlaw:3.5", t="0.8/m2")
    assert cfg.time_for(100) == pytest.approx(0.8 / factorial_moment(p, 2))
    with pytest.raises(ConfigError):
        config(experiment="hydro", t="soon").time_for(10)


def test_seed_resolution(monkeypatch):
    assert resolve_seed(5) == 5
    monkeypatch.setenv("COALKIT_SEED", "77")
    assert resolve_seed(None) == 77
    monkeypatch.setenv("COALKIT_SEED", "x")
    with pytest.raises(ConfigError):
        resolve_seed(None)
    monkeypatch.delenv("COALKIT_SEED")
    assert isinstance(resolve_seed(None), int)


def test_reference_values():
    assert float(gumbel_cdf(0.0)) == pytest.approx(math.exp(-1), abs=1e-15)
    assert float(gumbel_cdf(0.0)) == pytest.approx(0.3678794, abs=5e-8)
    law = stress_law()
    assert pgf_eval(law, 0.5) == pytest.approx(0.3862944, abs=5e-8)
    assert factorial_moment(law, 2) == math.inf
    v = verdict("x", 0.5, "<", 0.4)
    assert v["passed"] is False and v["gated"] is True


def test_blocksize_bound_is_zero_below_one():
    p = LengthDistribution.dirac(3)
    assert blocksize_bound(p, 0.1, 10_000, 0) == 0.0
    k = np.arange(1, 31)
    b = blocksize_bound(p, 0.1, 10_000, k)
    assert np.all(np.diff(b) > 0)
    assert b[0] == pytest.approx(0.1 / 20_000 * (36 * 0.1 + 6 * 5 + 6 + 1))


# -- runs ------------------------------------------------------------------------


def test_threshold_small_run():
    report = run_experiment(config(experiment="threshold", n=300, reps=60, seed=3))
    assert_auditable(report)
    assert {v["name"] for v in report.verdicts} >= {"ks_T_s", "ks_T_c", "singleton_tv_a0",
                                                   "one_block_fraction_a1"}
    assert "statistic" in report.summary["ks_T_s"]
    rec = report.records[0]
    assert rec["stat_s"] == pytest.approx(2 * rec["T_s"] / 300 - math.log(300))
    assert rec["T_c"] >= rec["T_s"]


def test_threshold_stress_is_reported_not_gated():
    report = run_experiment(config(experiment="threshold", n=200, reps=20, seed=4,
                                   include_stress=True))
    stress = [v for v in report.verdicts if v["name"].startswith("stress_")]
    assert stress and not any(v["gated"] for v in stress)
    assert "note" in report.summary["stress"]
    assert len(report.records) == 40


def test_records_are_reproducible(tmp_path):
    cfg = dict(experiment="blocksize", n=500, p="dirac:3", t=0.1, reps=40, seed=11)
    a = run_experiment(config(**cfg))
    b = run_experiment(config(**cfg))
    c = run_experiment(config(**cfg, threads=2))
    assert a.records == b.records == c.records
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    d = run_experiment(ExperimentConfig.from_dict(json.loads(path.read_text())))
    assert d.records == a.records


def test_blocksize_report():
    report = run_experiment(config(experiment="blocksize", n=2000, p="dirac:3", t=0.1, reps=500,
                                   seed=2))
    assert_auditable(report)
    s = report.summary
    allowed = np.asarray(s["allowed"])
    assert np.allclose(allowed, np.asarray(s["explicit_bound"]) + 3 * np.asarray(s["mc_error"]))
    excess = float(np.max(np.asarray(s["abs_diff"]) - allowed))
    assert report.verdict("cdf_within_bound_max_excess")["statistic"] == pytest.approx(excess)


def test_hydro_zero_time():
    report = run_experiment(config(experiment="hydro", n=100, t=0.0, reps=3, seed=1, kmax=5))
    per_n = report.summary["per_n"]["100"]
    assert per_n["mean_rho"][0] == 1.0 and report.summary["closed_form_rho"][0] == 1.0
    assert report.passed


def test_hydro_sweep():
    report = run_experiment(config(experiment="hydro", n=[1000, 20000], t=0.3, reps=10, seed=5,
                                   kmax=10))
    assert_auditable(report)
    assert len(report.verdicts) == 2 and report.passed


def test_phase_reports():
    sub = run_experiment(config(experiment="phase", regime="subcritical", t=0.25, n=5000,
                                reps=10, seed=1))
    assert sub.summary["cramer_rate"] == pytest.approx(0.5 - 1 - math.log(0.5), abs=1e-10)
    assert sub.summary["threshold"] == pytest.approx(2 / sub.summary["cramer_rate"] * math.log(5000))
    sup = run_experiment(config(experiment="phase", regime="supercritical", t=1.0, n=5000,
                                reps=10, seed=1))
    assert sup.summary["giant_target"] == pytest.approx(0.7968, abs=1e-4)
    for report in (sub, sup):
        assert_auditable(report)


def test_report_serialisation(tmp_path):
    report = run_experiment(config(experiment="hydro", n=200, t=0.2, reps=2, seed=9, kmax=4))
    data = json.loads(report.to_json())
    assert data["meta"]["seed"] == 9 and data["meta"]["config"]["t"] == 0.2
    assert "version" in data["meta"]
    text = report.to_csv()
    assert text.startswith("# version:")
    assert "# verdict:" in text
    header = [line for line in text.splitlines() if not line.startswith("#")][0]
    assert header.split(",")[:3] == ["rep", "n", "rho_1"]
    report.write(str(tmp_path / "r.csv"), "csv")
    assert (tmp_path / "r.csv").read_text() == text
