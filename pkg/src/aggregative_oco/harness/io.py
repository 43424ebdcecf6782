"""
Trace files and run manifests.

Two trace formats carry the same content:

* CSV: the manifest as JSON in ``"# "`` comment lines, then a header row and
  one row per round. Floats are written with ``repr``, which round-trips
  exactly.
* JSONL: the first line is ``{"manifest": ...}``, then one object per round.

Column layout and manifest keys are documented in ``docs/formats.md``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .. import __version__
from ..engine import RunConfig, RunTrace, StepsizeSchedule
from ..problem import NoiseModel

LIBRARY = "aggregative_oco"

SCALAR_COLUMNS = ("t", "alpha", "loss", "nu_residual", "y_residual", "x_norm")


class TraceFormatError(ValueError):
    """A trace file is truncated, malformed or inconsistent with its manifest."""


# ---------------------------------------------------------------------------
# run config <-> dict


def run_config_to_dict(cfg: RunConfig) -> dict:
    init = cfg.initial_x
    if not isinstance(init, str):
        init = [float(v) for v in np.asarray(init, float)]
    out = {
        "algorithm": cfg.algorithm,
        "stepsize": cfg.stepsize.to_str(),
        "seed": int(cfg.seed),
        "horizon": int(cfg.horizon),
        "sigma1": cfg.noise.sigma1,
        "sigma2": cfg.noise.sigma2,
        "record_level": cfg.record_level,
        "initial_x": init,
        "strict": bool(cfg.strict),
    }
    if cfg.stepsize.derived_from is not None:
        out["stepsize_derived_from"] = list(cfg.stepsize.derived_from)
    return out


def run_config_from_dict(doc: dict) -> RunConfig:
    step = doc["stepsize"]
    if step == "diminishing":
        stepsize = StepsizeSchedule.diminishing()
    else:
        derived = doc.get("stepsize_derived_from")
        stepsize = StepsizeSchedule("constant", float(step.split(":", 1)[1]),
                                    tuple(derived) if derived else None)
    init = doc["initial_x"]
    return RunConfig(
        algorithm=doc["algorithm"],
        stepsize=stepsize,
        seed=int(doc["seed"]),
        horizon=int(doc["horizon"]),
        noise=NoiseModel(float(doc["sigma1"]), float(doc["sigma2"])),
        record_level=doc["record_level"],
        initial_x=init if isinstance(init, str) else np.asarray(init, float),
        strict=bool(doc["strict"]),
    )


# ---------------------------------------------------------------------------
# columns


def trace_columns(N: int, d: int, n: int, full: bool, stochastic: bool) -> list:
    cols = list(SCALAR_COLUMNS)
    if full:
        cols += [f"x_{k}" for k in range(n)]
        for name in ("nu", "y", "g2"):
            cols += [f"{name}_{i}_{k}" for i in range(N) for k in range(d)]
        if stochastic:
            cols += ["rng_seed", "rng_round"]
    return cols


def _shape(manifest):
    try:
        sh = manifest["shape"]
        return int(sh["N"]), int(sh["d"]), int(sh["n"])
    except (KeyError, TypeError, ValueError) as exc:
        raise TraceFormatError(f"manifest lacks a valid shape record: {exc}") from exc


def trace_manifest(trace: RunTrace, N: int, d: int, n: int, extra: dict | None = None) -> dict:
    """The manifest record embedded in a trace file."""
    out = {
        "library": LIBRARY,
        "version": __version__,
        "run": run_config_to_dict(trace.config),
        "shape": {"N": N, "d": d, "n": n, "T": trace.T},
        "full": trace.full,
        "stochastic": trace.rng_keys is not None,
        "warnings": list(trace.warnings),
    }
    if extra:
        out.update(extra)
    return _jsonable(out)


def _row_arrays(trace: RunTrace):
    T = trace.T
    parts = [trace.alpha[: T + 1, None], trace.loss[:, None], trace.nu_residual[:, None],
             trace.y_residual[:, None], trace.x_norm[:, None]]
    if trace.full:
        parts += [trace.x, trace.nu.reshape(T + 1, -1), trace.y.reshape(T + 1, -1),
                  trace.g2.reshape(T + 1, -1)]
    return np.hstack(parts)


def _fmt(v: float) -> str:
    return repr(float(v))


# ---------------------------------------------------------------------------
# writers


def write_trace_csv(path, trace: RunTrace, manifest: dict):
    N, d, n = _shape(manifest)
    stochastic = trace.rng_keys is not None
    cols = trace_columns(N, d, n, trace.full, stochastic)
    body = _row_arrays(trace)
    buf = io.StringIO()
    for line in json.dumps(manifest, indent=1, sort_keys=True).splitlines():
        buf.write("# " + line + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for t in range(trace.T + 1):
        row = [str(t)] + [_fmt(v) for v in body[t]]
        if trace.full and stochastic:
            row += [str(int(k)) for k in trace.rng_keys[t]]
        writer.writerow(row)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def write_trace_jsonl(path, trace: RunTrace, manifest: dict):
    T = trace.T
    lines = [json.dumps({"manifest": manifest}, sort_keys=True)]
    for t in range(T + 1):
        rec = {
            "t": t,
            "alpha": float(trace.alpha[t]),
            "loss": float(trace.loss[t]),
            "nu_residual": float(trace.nu_residual[t]),
            "y_residual": float(trace.y_residual[t]),
            "x_norm": float(trace.x_norm[t]),
        }
        if trace.full:
            rec["x"] = trace.x[t].tolist()
            rec["nu"] = trace.nu[t].tolist()
            rec["y"] = trace.y[t].tolist()
            rec["g2"] = trace.g2[t].tolist()
            if trace.rng_keys is not None:
                rec["rng_key"] = [int(k) for k in trace.rng_keys[t]]
        lines.append(json.dumps(rec))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_trace(path, trace: RunTrace, manifest: dict):
    path = Path(path)
    if path.suffix == ".jsonl":
        write_trace_jsonl(path, trace, manifest)
    else:
        write_trace_csv(path, trace, manifest)


# ---------------------------------------------------------------------------
# readers


def _build_trace(manifest, scalars, x=None, nu=None, y=None, g2=None, keys=None) -> RunTrace:
    try:
        config = run_config_from_dict(manifest["run"])
    except (KeyError, TypeError, ValueError) as exc:
        raise TraceFormatError(f"manifest has no valid run record: {exc}") from exc
    if scalars.shape[0] != manifest["shape"].get("T", scalars.shape[0] - 1) + 1:
        raise TraceFormatError(
            f"trace has {scalars.shape[0]} rounds, manifest declares {manifest['shape']['T'] + 1}")
    return RunTrace(config=config, alpha=scalars[:, 0].copy(), loss=scalars[:, 1].copy(),
                    nu_residual=scalars[:, 2].copy(), y_residual=scalars[:, 3].copy(),
                    x_norm=scalars[:, 4].copy(), x=x, nu=nu, y=y, g2=g2, rng_keys=keys,
                    warnings=list(manifest.get("warnings", [])))


def read_trace_csv(path):
    """
    Returns
    -------
    (RunTrace, dict)
        The trace and its manifest.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise TraceFormatError(f"cannot read trace {path}: {exc}") from exc
    lines = text.splitlines()
    head = [ln[2:] for ln in lines if ln.startswith("# ")]
    body = [ln for ln in lines if not ln.startswith("#") and ln.strip()]
    try:
        manifest = json.loads("\n".join(head))
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"corrupt manifest header in {path}: {exc}") from exc
    N, d, n = _shape(manifest)
    full, stochastic = bool(manifest.get("full")), bool(manifest.get("stochastic"))
    cols = trace_columns(N, d, n, full, stochastic)
    rows = list(csv.reader(body))
    if not rows or rows[0] != cols:
        raise TraceFormatError(f"{path}: header row does not match the manifest")
    rows = rows[1:]
    n_float = len(cols) - 1 - (2 if full and stochastic else 0)
    data = np.empty((len(rows), n_float))
    keys = np.empty((len(rows), 2), dtype=np.int64) if full and stochastic else None
    for r, row in enumerate(rows):
        if len(row) != len(cols):
            raise TraceFormatError(f"{path}: row {r} has {len(row)} fields, expected {len(cols)}")
        try:
            if int(row[0]) != r:
                raise TraceFormatError(f"{path}: row {r} is labelled round {row[0]}")
            data[r] = [float(v) for v in row[1 : 1 + n_float]]
            if keys is not None:
                keys[r] = [int(v) for v in row[1 + n_float :]]
        except ValueError as exc:
            raise TraceFormatError(f"{path}: unparsable value in row {r}: {exc}") from exc
    T1 = len(rows)
    state = {}
    if full:
        k = 5
        state["x"] = data[:, k : k + n].copy()
        k += n
        for name in ("nu", "y", "g2"):
            state[name] = data[:, k : k + N * d].reshape(T1, N, d).copy()
            k += N * d
    return _build_trace(manifest, data[:, :5], keys=keys, **state), manifest


def read_trace_jsonl(path):
    try:
        lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
        records = [json.loads(ln) for ln in lines]
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TraceFormatError(f"cannot parse trace {path}: {exc}") from exc
    if not records or "manifest" not in records[0]:
        raise TraceFormatError(f"{path}: first line is not a manifest")
    manifest = records[0]["manifest"]
    N, d, n = _shape(manifest)
    full, stochastic = bool(manifest.get("full")), bool(manifest.get("stochastic"))
    rows = records[1:]
    T1 = len(rows)
    scalars = np.empty((T1, 5))
    if full:
        x, nu, y, g2 = (np.empty((T1, n)), np.empty((T1, N, d)), np.empty((T1, N, d)),
                        np.empty((T1, N, d)))
    keys = np.empty((T1, 2), dtype=np.int64) if full and stochastic else None
    try:
        for r, rec in enumerate(rows):
            if rec["t"] != r:
                raise TraceFormatError(f"{path}: record {r} is labelled round {rec['t']}")
            scalars[r] = [rec[c] for c in SCALAR_COLUMNS[1:]]
            if full:
                x[r], nu[r], y[r], g2[r] = rec["x"], rec["nu"], rec["y"], rec["g2"]
                if keys is not None:
                    keys[r] = rec["rng_key"]
    except (KeyError, TypeError, ValueError) as exc:
        raise TraceFormatError(f"{path}: malformed record: {exc!r}") from exc
    if full:
        return _build_trace(manifest, scalars, x, nu, y, g2, keys), manifest
    return _build_trace(manifest, scalars), manifest


def read_trace(path):
    path = Path(path)
    if path.suffix == ".jsonl":
        return read_trace_jsonl(path)
    return read_trace_csv(path)


# ---------------------------------------------------------------------------
# manifests


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def write_manifest(path, manifest: dict):
    Path(path).write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def read_manifest(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise TraceFormatError(f"cannot read manifest {path}: {exc}") from exc
