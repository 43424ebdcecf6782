import csv
import json
import re

import numpy as np
import pytest
import yaml

from aggregative_oco.engine import RunConfig, run
from aggregative_oco.harness import (
    ConfigError,
    ExperimentConfig,
    TraceFormatError,
    best_response_dynamics,
    experiment_example1,
    experiment_quadratic_synthetic,
    experiment_target_surrounding,
    load_config,
    nash_gap,
    read_trace,
    write_trace,
)
from aggregative_oco.harness.cli import main, parse_seeds
from aggregative_oco.harness.config import OUTPUT_ENV
from aggregative_oco.harness.io import trace_manifest
from aggregative_oco.network import make_q_cyclic_schedule
from aggregative_oco.problem import NoiseModel, make_example1, make_target_surrounding


def _write_cfg(path, cfg):
    doc = cfg.to_dict() if isinstance(cfg, ExperimentConfig) else cfg
    path.write_text(yaml.safe_dump(doc))
    return str(path)


# ---------------------------------------------------------------------------
# config


def test_defaults_fill_every_field():
    cfg = ExperimentConfig.from_dict({})
    assert cfg.problem.family == "example1"
    assert cfg.run.stepsize == "diminishing" and cfg.run.strict
    assert cfg.output.formats == ["csv", "jsonl"]


@pytest.mark.parametrize("doc", [
    {"problme": {}},
    {"problem": {"family": "example1", "Nn": 3}},
    {"run": {"steps": 10, "stepsize": "fast"}},
    {"run": {"algorithm": "sgd"}},
    {"schedule": {"kind": "ring"}},
    {"output": {"formats": ["parquet"]}},
])
def test_bad_configs_rejected(doc):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(doc)


def test_schedule_key_alias():
    cfg = ExperimentConfig.from_dict({"schedule": {"schedule": "static", "edges": [[0, 1]]}})
    assert cfg.schedule.kind == "static"


def test_json_config_loads(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"problem": {"family": "example1"}, "run": {"steps": 3}}))
    assert load_config(p).run.steps == 3


def test_unreadable_config(tmp_path):
    p = tmp_path / "broken.yaml"
    p.write_text("problem: [unclosed")
    with pytest.raises(ConfigError):
        load_config(p)


def test_output_dir_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "envout"))
    assert ExperimentConfig.from_dict({}).output_dir() == tmp_path / "envout"


# ---------------------------------------------------------------------------
# experiments


def test_target_surrounding_scales():
    full = experiment_target_surrounding("paper")
    spec = full.build_problem()
    assert spec.N == 50 and spec.agg_dim == 2 and set(spec.dims) == {2}
    sched = full.build_schedule()
    assert sched.Q == 4
    desk = experiment_target_surrounding("desk")
    assert desk.n_agents == 10 and desk.run.steps == 3000
    sto = experiment_target_surrounding("desk", algorithm="odgt-stochastic")
    assert sto.seeds == list(range(1, 11))
    assert sto.run.sigma1_sq == 0.1 and sto.run.sigma2_sq == 0.1
    with pytest.raises(ValueError):
        experiment_target_surrounding("huge")


def test_target_surrounding_initial_paths():
    losses = experiment_target_surrounding("desk").build_problem().losses
    z, x0 = losses._paths(0)
    np.testing.assert_allclose(x0, [11, 11])
    np.testing.assert_allclose(z, np.tile([11, 17], (10, 1)))


def test_example1_experiment():
    from aggregative_oco.metrics import solve_instantaneous_optimum

    cfg = experiment_example1()
    opt = solve_instantaneous_optimum(cfg.build_problem(), 0)
    np.testing.assert_allclose(opt.x, [-0.8, 1.2], atol=1e-12)


def test_synthetic_without_drift_is_time_invariant():
    spec = experiment_quadratic_synthetic(N=4, drift_rate=0.0).build_problem()
    assert spec.losses.time_invariant


def test_nash_equilibrium_differs_from_cooperative_optimum():
    spec = make_example1()
    res = best_response_dynamics(spec)
    assert res.converged
    np.testing.assert_allclose(res.x, [-2 / 3, 4 / 3], atol=1e-6)
    assert np.linalg.norm(res.x - [-0.8, 1.2]) > 0.1
    assert nash_gap(spec, res.x) <= 1e-9
    assert nash_gap(spec, [-0.8, 1.2]) > 1e-2


# ---------------------------------------------------------------------------
# trace files


def _traces():
    spec = make_target_surrounding(3, 3, horizon=25)
    sched = make_q_cyclic_schedule(3, 2)
    det = run(spec, sched, RunConfig(horizon=25))
    sto = run(spec, sched, RunConfig("odgt_stochastic", horizon=25, seed=4,
                                     noise=NoiseModel.from_variances(0.1, 0.1)))
    summ = run(spec, sched, RunConfig(horizon=25, record_level="summary"))
    return spec, {"det": det, "sto": sto, "summary": summ}


@pytest.mark.parametrize("fmt", ["csv", "jsonl"])
def test_trace_round_trip_is_lossless(tmp_path, fmt):
    spec, traces = _traces()
    for name, tr in traces.items():
        path = tmp_path / f"{name}.{fmt}"
        write_trace(path, tr, trace_manifest(tr, spec.N, spec.agg_dim, spec.n))
        back, manifest = read_trace(path)
        assert manifest["shape"]["T"] == 25
        for field in ("alpha", "loss", "nu_residual", "y_residual", "x_norm", "x", "nu", "y", "g2", "rng_keys"):
            a, b = getattr(tr, field), getattr(back, field)
            if a is None:
                assert b is None
            else:
                assert a.tobytes() == b.tobytes(), (name, field)
        assert back.config.stepsize == tr.config.stepsize
        assert back.config.noise == tr.config.noise


def test_csv_header_documents_columns(tmp_path):
    spec, traces = _traces()
    path = tmp_path / "t.csv"
    write_trace(path, traces["sto"], trace_manifest(traces["sto"], spec.N, spec.agg_dim, spec.n))
    rows = [r for r in csv.reader(line for line in path.read_text().splitlines() if not line.startswith("#"))]
    assert rows[0][:3] == ["t", "alpha", "loss"] and rows[0][-2:] == ["rng_seed", "rng_round"]
    assert [int(r[0]) for r in rows[1:]] == list(range(26))


@pytest.mark.parametrize("damage", ["truncate_row", "bad_number", "bad_header", "bad_manifest", "missing_rows"])
def test_corrupt_traces_detected(tmp_path, damage):
    spec, traces = _traces()
    path = tmp_path / "t.csv"
    write_trace(path, traces["det"], trace_manifest(traces["det"], spec.N, spec.agg_dim, spec.n))
    lines = path.read_text().splitlines()
    head = [i for i, ln in enumerate(lines) if not ln.startswith("#")][0]
    if damage == "truncate_row":
        lines[-1] = lines[-1][: len(lines[-1]) // 2].rsplit(",", 1)[0]
    elif damage == "bad_number":
        lines[-3] = lines[-3].replace(",", ",x", 1)
    elif damage == "bad_header":
        lines[head] = lines[head].replace("loss", "losses")
    elif damage == "bad_manifest":
        lines[1] = "# {{{"
    else:
        lines = lines[:-4]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(TraceFormatError):
        read_trace(path)


def test_corrupt_jsonl_detected(tmp_path):
    spec, traces = _traces()
    path = tmp_path / "t.jsonl"
    write_trace(path, traces["det"], trace_manifest(traces["det"], spec.N, spec.agg_dim, spec.n))
    lines = path.read_text().splitlines()
    lines[5] = lines[5][:-10]
    path.write_text("\n".join(lines))
    with pytest.raises(TraceFormatError):
        read_trace(path)


# ---------------------------------------------------------------------------
# command line


def test_parse_seeds():
    assert parse_seeds("1..4") == [1, 2, 3, 4]
    assert parse_seeds("3,5") == [3, 5]


def test_cli_run_writes_trace_and_is_deterministic(tmp_path, capsys):
    cfg = _write_cfg(tmp_path / "example1.cfg", experiment_example1())
    assert main(["run", "--config", cfg, "--steps", "1000", "--out", str(tmp_path / "a")]) == 0
    assert main(["run", "--config", cfg, "--steps", "1000", "--out", str(tmp_path / "b")]) == 0
    tr, _ = read_trace(tmp_path / "a" / "trace_seed0.csv")
    assert len(tr.loss) == 1001
    for name in ("manifest.json", "trace_seed0.csv", "trace_seed0.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert {"config", "constants", "schedule_audit", "version"} <= set(manifest)
    assert set(manifest["constants"]["bounds"]) == {"gamma", "xi", "B1"}


def test_cli_flags_override(tmp_path):
    cfg = _write_cfg(tmp_path / "c.yaml", experiment_example1())
    out = tmp_path / "o"
    assert main(["run", "--config", cfg, "--steps", "7", "--seed", "5", "--stepsize", "constant:0.1",
                 "--algorithm", "centralized", "--record", "summary", "--out", str(out)]) == 0
    tr, manifest = read_trace(out / "trace_seed5.csv")
    assert tr.T == 7 and tr.x is None
    assert manifest["run"]["algorithm"] == "centralized_pgd"
    np.testing.assert_array_equal(tr.alpha, 0.1)


def test_cli_manifest_rerun_reproduces(tmp_path):
    cfg = _write_cfg(tmp_path / "c.yaml", experiment_quadratic_synthetic(N=3, steps=40))
    main(["run", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["run", "--config", str(tmp_path / "a" / "manifest.json"), "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "trace_seed0.csv").read_bytes() == (tmp_path / "b" / "trace_seed0.csv").read_bytes()


def test_cli_stochastic_fan_out(tmp_path):
    cfg = experiment_target_surrounding("desk", steps=30, algorithm="odgt-stochastic")
    path = _write_cfg(tmp_path / "ts.yaml", cfg)
    out = tmp_path / "fan"
    assert main(["run", "--config", path, "--out", str(out), "--workers", "3"]) == 0
    assert len(list(out.glob("trace_seed*.csv"))) == 10
    agg = json.loads((out / "aggregate.json").read_text())
    assert agg["n_runs"] == 10 and agg["T"] == 30
    # worker count does not change results
    out1 = tmp_path / "fan1"
    assert main(["run", "--config", path, "--out", str(out1), "--workers", "1"]) == 0
    assert (out / "trace_seed7.csv").read_bytes() == (out1 / "trace_seed7.csv").read_bytes()


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == 2
    bad = _write_cfg(tmp_path / "bad.yaml", {"run": {"stepz": 3}})
    assert main(["run", "--config", bad]) == 2
    ident = _write_cfg(tmp_path / "ident.yaml", {"schedule": {"kind": "static", "matrices": [[1, 0], [0, 1]]},
                                                  "run": {"steps": 3}})
    assert main(["run", "--config", ident, "--out", str(tmp_path / "o")]) == 3
    assert main(["run", "--config", ident, "--no-strict", "--out", str(tmp_path / "o")]) == 0
    blow = _write_cfg(tmp_path / "blow.yaml", {
        "problem": {"family": "example1", "set": {"kind": "box", "lower": -1e308, "upper": 1e308}},
        "schedule": {"kind": "static", "edges": [[0, 1]]},
        "run": {"steps": 30, "stepsize": "constant:1e200"}})
    with np.errstate(all="ignore"):
        assert main(["run", "--config", blow, "--out", str(tmp_path / "o")]) == 4
    err = capsys.readouterr().err
    assert "non-finite" in err and '"round"' in err


def test_cli_validate(tmp_path, capsys):
    ok = _write_cfg(tmp_path / "ok.yaml", {"problem": {"family": "target_surrounding", "N": 50},
                                           "schedule": {"kind": "q_cyclic", "Q": 4}})
    assert main(["validate", "--config", ok]) == 0
    ident = _write_cfg(tmp_path / "ident.yaml", {"schedule": {"kind": "static", "matrices": [[1, 0], [0, 1]]}})
    assert main(["validate", "--config", ident]) == 3
    assert "connectivity" in capsys.readouterr().out
    rows = _write_cfg(tmp_path / "rows.yaml", {"schedule": {"kind": "static",
                                                            "matrices": [[0.6, 0.5], [0.4, 0.5]]}})
    assert main(["validate", "--config", rows]) == 3
    assert re.search(r"doubly stochastic\s+: FAIL", capsys.readouterr().out)
    sched = tmp_path / "s.yaml"
    sched.write_text(yaml.safe_dump({"kind": "q_cyclic", "N": 10, "Q": 2}))
    assert main(["validate", "--schedule", str(sched), "--window", "20"]) == 0


def test_cli_metrics_pinned_at_optimum(tmp_path, capsys):
    cfg = experiment_example1(steps=50, algorithm="centralized")
    cfg.run.initial_x = [-0.8, 1.2]
    path = _write_cfg(tmp_path / "c.yaml", cfg)
    main(["run", "--config", path, "--out", str(tmp_path / "r")])
    capsys.readouterr()
    assert main(["metrics", "--trace", str(tmp_path / "r" / "trace_seed0.csv")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert abs(report["regret_total"]) <= 1e-12
    assert report["path_variation_unit"] == 0 and report["grad_variation_unit"] == 0
    assert report["grad_variation_weighted"] == 0 and report["path_variation_weighted"] == 0


def test_cli_metrics_example1_decay(tmp_path, capsys):
    path = _write_cfg(tmp_path / "c.yaml", experiment_example1(steps=10_000))
    main(["run", "--config", path, "--out", str(tmp_path / "r")])
    assert main(["metrics", "--trace", str(tmp_path / "r" / "trace_seed0.jsonl"),
                 "--measures", "regret", "--out", str(tmp_path / "m")]) == 0
    with open(tmp_path / "m" / "metrics_series.csv") as fh:
        series = {int(r["t"]): float(r["regret_over_t"]) for r in csv.DictReader(fh)}
    assert series[10_000] < series[100]


def test_cli_metrics_expectation(tmp_path, capsys):
    cfg = experiment_target_surrounding("desk", steps=20, algorithm="odgt-stochastic")
    cfg.run.seeds = [1, 2, 3]
    path = _write_cfg(tmp_path / "c.yaml", cfg)
    main(["run", "--config", path, "--out", str(tmp_path / "r")])
    capsys.readouterr()
    assert main(["metrics", "--trace", str(tmp_path / "r"), "--expect-over-seeds",
                 "--measures", "regret,residuals"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["expected"]["n_runs"] == 3
    with open(tmp_path / "r" / "expected_regret.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 20 and float(rows[-1]["regret_over_t_stderr"]) > 0


def test_cli_metrics_corrupt_trace(tmp_path, capsys):
    p = tmp_path / "t.csv"
    p.write_text("# {}\nnot,a,trace\n")
    assert main(["metrics", "--trace", str(p)]) == 2
    assert main(["metrics", "--trace", str(tmp_path / "absent.csv")]) == 2


@pytest.mark.parametrize("name,build", [
    ("example1", experiment_example1),
    ("quadratic_synthetic", experiment_quadratic_synthetic),
    ("target_surrounding_desk", lambda: experiment_target_surrounding("desk")),
    ("target_surrounding_full", lambda: experiment_target_surrounding("paper")),
    ("target_surrounding_desk_stochastic",
     lambda: experiment_target_surrounding("desk", algorithm="odgt-stochastic")),
])
def test_shipped_configs_match_builders(name, build):
    from pathlib import Path

    path = Path(__file__).resolve().parents[1] / "configs" / f"{name}.yaml"
    assert load_config(path).to_dict() == build().to_dict()
