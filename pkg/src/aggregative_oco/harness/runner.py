"""
Run an :class:`ExperimentConfig` end to end and compute reports from traces.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..engine import RunTrace, StepsizeSchedule, run_seeds
from ..metrics import (
    EstimatorConfig,
    compute_bound_constants,
    dynamic_regret,
    expected_regret_over_t,
    gradient_variation,
    optimum_sequence,
    path_variation,
    averaging_identity_errors,
)
from ..network import graph_at, validate_schedule
from .config import ExperimentConfig, parse_stepsize
from .io import (
    LIBRARY,
    TraceFormatError,
    _jsonable,
    read_manifest,
    read_trace,
    trace_manifest,
    write_manifest,
    write_trace,
)

logger = logging.getLogger(__name__)


@dataclass
class RunOutput:
    config: ExperimentConfig
    traces: list
    manifest: dict
    files: list = field(default_factory=list)
    aggregate: dict | None = None


def resolve_stepsize(cfg: ExperimentConfig, spec, optima=None) -> StepsizeSchedule:
    """Parse ``run.stepsize``; a bare ``"constant"`` is derived from the variation measures."""
    step = parse_stepsize(cfg.run.stepsize)
    if step != "derived":
        return step
    T = cfg.run.steps
    if optima is None:
        optima = optimum_sequence(spec, T)
    vp = path_variation(optima, None, T)
    vg = gradient_variation(spec, T, "unit_sum", estimator=_estimator(cfg)).value
    return StepsizeSchedule.from_variations(vp, vg, T)


def _estimator(cfg):
    return EstimatorConfig(samples=cfg.metrics.grad_samples, z_box=cfg.metrics.z_box)


def _bound_constants(spec, schedule, trace: RunTrace, G):
    if schedule is None or not trace.full:
        return None
    y1 = trace.y[1] if trace.T >= 1 else trace.y[0]
    try:
        return compute_bound_constants(spec.N, schedule.a, schedule.Q, G, y1).to_dict()
    except ValueError as exc:
        logger.warning("bound constants unavailable: %s", exc)
        return None


def build_manifest(cfg: ExperimentConfig, spec, schedule, stepsize, audit) -> dict:
    declared = spec.declared_constants()
    out = {
        "library": LIBRARY,
        "version": __version__,
        "config": cfg.to_dict(),
        "problem": {"name": spec.name, "N": spec.N, "dims": spec.dims, "agg_dim": spec.agg_dim},
        "stepsize": stepsize.to_str(),
        "seeds": cfg.seeds,
        "constants": {"declared": declared},
        "schedule": schedule.to_dict() if schedule is not None else None,
        "schedule_audit": audit,
    }
    if schedule is not None and "matrices" not in out["schedule"]:
        # generated schedules: record the matrices of the first window for audit
        rounds = max(schedule.period or 0, schedule.Q)
        out["schedule"]["audit_matrices"] = [graph_at(schedule, t).weights.tolist() for t in range(rounds)]
    return _jsonable(out)


def run_experiment(cfg: ExperimentConfig, out_dir=None, workers: int = 1, write: bool = True) -> RunOutput:
    """
    Execute every seed of `cfg` and (optionally) write traces and the manifest.

    Raises
    ------
    ScheduleError, NonFiniteError
        Passed through from the engine.
    """
    spec = cfg.build_problem()
    distributed = cfg.run.algorithm != "centralized"
    schedule = cfg.build_schedule()
    audit = validate_schedule(schedule, cfg.metrics.validation_window).to_dict() if distributed else None
    stepsize = resolve_stepsize(cfg, spec)
    base = cfg.build_run_config(stepsize=stepsize)
    traces = run_seeds(spec, schedule if distributed else None, base, cfg.seeds, workers)
    manifest = build_manifest(cfg, spec, schedule if distributed else None, stepsize, audit)
    bounds = _bound_constants(spec, schedule if distributed else None, traces[0],
                              manifest["constants"]["declared"]["G"])
    manifest["constants"]["bounds"] = bounds
    out = RunOutput(cfg, traces, manifest)
    if not write:
        return out

    out_dir = Path(out_dir) if out_dir is not None else cfg.output_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    shape = (spec.N, spec.agg_dim, spec.n)
    names = []
    for seed, trace in zip(cfg.seeds, traces):
        header = trace_manifest(trace, *shape, extra={"config": cfg.to_dict(), "seed": seed,
                                                              "schedule_audit": audit})
        for fmt in cfg.output.formats:
            name = f"trace_seed{seed}.{fmt}"
            write_trace(out_dir / name, trace, header)
            names.append(name)
    manifest["traces"] = names
    write_manifest(out_dir / "manifest.json", manifest)
    out.files = [out_dir / "manifest.json"] + [out_dir / n for n in names]

    if len(traces) > 1 and "regret" in cfg.metrics.measures:
        optima = optimum_sequence(spec, cfg.run.steps)
        agg = aggregate_regret(traces, optima)
        write_manifest(out_dir / "aggregate.json", agg["summary"])
        _write_columns(out_dir / "aggregate_regret.csv", agg["columns"])
        out.aggregate = agg["summary"]
        out.files += [out_dir / "aggregate.json", out_dir / "aggregate_regret.csv"]
    return out


def _write_columns(path, columns: dict):
    keys = list(columns)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for row in zip(*(columns[k] for k in keys)):
            w.writerow([repr(float(v)) if not isinstance(v, (int, np.integer)) else str(v) for v in row])


def aggregate_regret(traces, optima) -> dict:
    """Mean and standard error of ``R_t / t`` across runs."""
    series = [dynamic_regret(tr, optima).over_t for tr in traces]
    exp = expected_regret_over_t(series)
    T = len(exp.mean)
    mean, se = exp.final
    return {
        "summary": {"n_runs": exp.n_runs, "T": T, "regret_over_T_mean": mean, "regret_over_T_stderr": se},
        "columns": {"t": list(range(1, T + 1)), "regret_over_t_mean": exp.mean,
                    "regret_over_t_stderr": exp.stderr},
        "expected": exp,
    }


# ---------------------------------------------------------------------------
# metrics from files


def _trace_files(path: Path):
    if path.is_dir():
        files = sorted(path.glob("trace_seed*.csv")) or sorted(path.glob("trace_seed*.jsonl"))
        if not files:
            raise TraceFormatError(f"no trace files in {path}")
        return files
    return [path]


def load_traces(path):
    """Read one trace file, or every ``trace_seed*`` file of a run directory."""
    path = Path(path)
    if not path.exists():
        raise TraceFormatError(f"{path} does not exist")
    loaded = [read_trace(f) for f in _trace_files(path)]
    return [t for t, _ in loaded], [m for _, m in loaded]


def trace_metrics(trace_path, measures=None, expect_over_seeds: bool = False,
                  out_dir=None) -> dict:
    """
    Recompute the problem from a trace's manifest and evaluate `measures`.

    Writes ``metrics.json`` and ``metrics_series.csv`` (plus
    ``expected_regret.csv`` with `expect_over_seeds`) to `out_dir`, which
    defaults to the directory holding the trace.
    """
    traces, manifests = load_traces(trace_path)
    if "config" not in manifests[0]:
        raise TraceFormatError("trace manifest carries no experiment config")
    try:
        cfg = ExperimentConfig.from_dict(manifests[0]["config"])
    except ValueError as exc:
        raise TraceFormatError(f"trace manifest has an invalid config: {exc}") from exc
    measures = list(measures or cfg.metrics.measures)
    spec = cfg.build_problem()
    trace = traces[0]
    T = trace.T
    report: dict = {"T": T, "n_traces": len(traces), "measures": measures}
    # series cover the decision rounds t = 1..T
    columns: dict = {"t": list(range(1, T + 1)), "loss": trace.loss[1:]}

    optima = None
    if "regret" in measures or "pathvar" in measures:
        optima = optimum_sequence(spec, T)
    if "regret" in measures:
        reg = dynamic_regret(trace, optima)
        report["regret_total"] = reg.total
        report["regret_over_T"] = float(reg.over_t[-1])
        report["optima_converged"] = optima.all_converged
        if not optima.all_converged:
            logger.warning("optimum solver did not converge for every round; regret is approximate")
        columns["optimum_value"] = optima.value[1 : T + 1]
        columns["regret_cumulative"] = reg.cumulative
        columns["regret_over_t"] = reg.over_t
    if "pathvar" in measures:
        report["path_variation_unit"] = path_variation(optima, None, T)
        report["path_variation_weighted"] = path_variation(optima, trace.config.stepsize, T)
    if "gradvar" in measures:
        est = _estimator(cfg)
        gv = gradient_variation(spec, T, "unit_sum", estimator=est)
        gw = gradient_variation(spec, T, "alpha_weighted_square", trace.config.stepsize, est)
        report["grad_variation_unit"] = gv.value
        report["grad_variation_weighted"] = gw.value
        report["grad_variation_estimated"] = gv.estimated
    if "residuals" in measures:
        report["nu_residual_max"] = float(np.max(trace.nu_residual))
        report["y_residual_max"] = float(np.max(trace.y_residual))
        report["nu_residual_final"] = float(trace.nu_residual[-1])
        report["y_residual_final"] = float(trace.y_residual[-1])
        columns["nu_residual"] = trace.nu_residual[1:]
        columns["y_residual"] = trace.y_residual[1:]
        if trace.full and trace.config.algorithm != "centralized_pgd":
            e_nu, e_y = averaging_identity_errors(spec, trace)
            report["nu_identity_error_max"] = float(np.max(e_nu))
            report["y_identity_error_max"] = float(np.max(e_y))
            b = _bound_constants(spec, cfg.build_schedule(), trace, spec.declared_constants()["G"])
            if b is not None:
                report["bound_constants"] = b
                report["y_residual_within_N_B1"] = bool(np.all(trace.y_residual <= spec.N * b["B1"]))

    if expect_over_seeds:
        if optima is None:
            optima = optimum_sequence(spec, T)
        agg = aggregate_regret(traces, optima)
        report["expected"] = agg["summary"]
    report = _jsonable(report)

    out = Path(out_dir) if out_dir is not None else (Path(trace_path) if Path(trace_path).is_dir()
                                                     else Path(trace_path).parent)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out / "metrics.json", report)
    _write_columns(out / "metrics_series.csv", columns)
    if expect_over_seeds:
        _write_columns(out / "expected_regret.csv", agg["columns"])
    return report


__all__ = ["run_experiment", "trace_metrics", "load_traces", "aggregate_regret", "resolve_stepsize",
           "build_manifest", "RunOutput", "read_manifest"]
