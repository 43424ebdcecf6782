"""
Experiment configuration: a YAML (or JSON) document with the sections
``problem``, ``schedule``, ``run``, ``metrics`` and ``output``.

Every field has a default and unknown keys are rejected. The full schema is
documented in ``docs/formats.md``.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from ..engine import RunConfig, StepsizeSchedule
from ..geometry import set_from_dict
from ..network import GraphSchedule, schedule_from_dict
from ..problem import (
    NoiseModel,
    ProblemSpec,
    make_example1,
    make_quadratic_synthetic,
    make_random_quadratic,
    make_target_surrounding,
)

OUTPUT_ENV = "AGGOCO_OUT_DIR"

FAMILIES = ("example1", "target_surrounding", "quadratic_synthetic", "random_quadratic")

# CLI spellings and their internal names
ALGORITHM_NAMES = {
    "odgt": "odgt",
    "odgt-stochastic": "odgt_stochastic",
    "odgt_stochastic": "odgt_stochastic",
    "centralized": "centralized_pgd",
    "centralized_pgd": "centralized_pgd",
}


class ConfigError(ValueError):
    pass


@dataclass
class ProblemConfig:
    family: str = "example1"
    N: int | None = None
    M: int | None = None
    seed: int = 0
    drift_rate: float = 1.0
    dim: int = 2
    cap: float | None = None
    radius: float = 2.0
    smoothing: str = "huber"
    epsilon: float = 1e-3
    linear_psi: bool = False
    time_varying: bool = True
    #: set description applied to every agent, overriding the family default
    set: dict | None = None


@dataclass
class ScheduleConfig:
    kind: str = "q_cyclic"
    N: int | None = None
    Q: int | None = None
    a: float | None = None
    seed: int = 0
    p_extra: float = 0.2
    extra_edges: int = 0
    edges: list | None = None
    matrices: list | None = None


@dataclass
class RunSection:
    algorithm: str = "odgt"
    steps: int = 1000
    stepsize: str = "diminishing"
    seed: int = 0
    seeds: list | None = None
    record: str = "full"
    strict: bool = True
    initial_x: object = "zeros"
    sigma1_sq: float = 0.1
    sigma2_sq: float = 0.1


@dataclass
class MetricsSection:
    measures: list = field(default_factory=lambda: ["regret", "pathvar", "gradvar", "residuals"])
    grad_samples: int = 1000
    z_box: float = 100.0
    validation_window: int | None = None


@dataclass
class OutputSection:
    dir: str | None = None
    formats: list = field(default_factory=lambda: ["csv", "jsonl"])


@dataclass
class ExperimentConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    run: RunSection = field(default_factory=RunSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    output: OutputSection = field(default_factory=OutputSection)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("configuration must be a mapping")
        sections = {f.name: f for f in fields(cls)}
        unknown = set(doc) - set(sections)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for name, f in sections.items():
            sub_cls = f.default_factory().__class__
            kwargs[name] = _section(sub_cls, doc.get(name) or {}, name)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def validate(self):
        p, s, r = self.problem, self.schedule, self.run
        if p.family not in FAMILIES:
            raise ConfigError(f"problem.family must be one of {FAMILIES}")
        if r.algorithm not in ALGORITHM_NAMES:
            raise ConfigError(f"run.algorithm must be one of {sorted(ALGORITHM_NAMES)}")
        if r.record not in ("full", "summary"):
            raise ConfigError("run.record must be 'full' or 'summary'")
        if r.steps < 0:
            raise ConfigError("run.steps must be nonnegative")
        if s.kind not in ("static", "cyclic", "q_cyclic", "generated"):
            raise ConfigError(f"unknown schedule.kind {s.kind!r}")
        parse_stepsize(r.stepsize)
        for fmt in self.output.formats:
            if fmt not in ("csv", "jsonl"):
                raise ConfigError(f"unknown output format {fmt!r}")

    # ------------------------------------------------------------------
    # builders

    @property
    def n_agents(self) -> int:
        if self.problem.family == "example1":
            return 2
        if self.problem.N is None:
            raise ConfigError(f"problem.N is required for family {self.problem.family}")
        return int(self.problem.N)

    def build_problem(self) -> ProblemSpec:
        p = self.problem
        T = self.run.steps
        if p.family == "example1":
            spec = make_example1(horizon=T)
        elif p.family == "target_surrounding":
            spec = make_target_surrounding(self.n_agents, p.M if p.M is not None else self.n_agents,
                                           smoothing=p.smoothing, epsilon=p.epsilon,
                                           cap=p.cap if p.cap is not None else 50.0, horizon=T)
        elif p.family == "quadratic_synthetic":
            spec = make_quadratic_synthetic(self.n_agents, p.seed, p.drift_rate, p.dim,
                                            p.cap if p.cap is not None else 10.0, p.radius, horizon=T)
        else:
            spec = make_random_quadratic(self.n_agents, p.seed, p.dim,
                                         p.cap if p.cap is not None else 5.0,
                                         p.linear_psi, p.time_varying, horizon=T)
        if p.set is not None:
            sets = [set_from_dict(p.set, n) for n in spec.dims]
            spec = ProblemSpec(spec.dims, spec.agg_dim, sets, spec.psi, spec.losses,
                               horizon=T, name=spec.name, meta=spec.meta)
        return spec

    def build_schedule(self) -> GraphSchedule:
        s = self.schedule
        desc = {"kind": s.kind, "N": s.N if s.N is not None else self.n_agents}
        extra = {
            "q_cyclic": ("Q", "a", "seed", "extra_edges"),
            "generated": ("Q", "a", "seed", "p_extra", "extra_edges"),
            "static": ("Q", "a", "edges", "matrices"),
            "cyclic": ("Q", "a", "edges", "matrices"),
        }[s.kind]
        for key in extra:
            value = getattr(s, key)
            if value is not None:
                desc[key] = value
        try:
            sched = schedule_from_dict(desc)
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(f"bad schedule: {exc}") from exc
        if sched.N != self.n_agents:
            raise ConfigError(f"schedule has {sched.N} nodes, problem has {self.n_agents} agents")
        return sched

    def build_run_config(self, seed: int | None = None, stepsize: StepsizeSchedule | None = None) -> RunConfig:
        r = self.run
        initial = r.initial_x
        if isinstance(initial, list):
            initial = np.asarray(initial, float)
        return RunConfig(
            algorithm=ALGORITHM_NAMES[r.algorithm],
            stepsize=stepsize if stepsize is not None else parse_stepsize(r.stepsize),
            seed=int(r.seed if seed is None else seed),
            horizon=int(r.steps),
            noise=NoiseModel.from_variances(r.sigma1_sq, r.sigma2_sq),
            record_level=r.record,
            initial_x=initial,
            strict=r.strict,
        )

    @property
    def seeds(self) -> list:
        return [int(s) for s in self.run.seeds] if self.run.seeds else [int(self.run.seed)]

    def output_dir(self) -> Path:
        return Path(self.output.dir or os.environ.get(OUTPUT_ENV, "out"))


def _section(cls, doc, name):
    if not isinstance(doc, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    doc = dict(doc)
    if cls is ScheduleConfig and "schedule" in doc:
        doc["kind"] = doc.pop("schedule")
    names = {f.name for f in fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise ConfigError(f"unknown keys in section {name!r}: {sorted(unknown)}")
    return cls(**doc)


def parse_stepsize(text) -> StepsizeSchedule | str:
    """
    ``"diminishing"``, ``"constant:ALPHA"`` or ``"constant"``. The bare
    ``"constant"`` is returned as the marker string ``"derived"``: the
    stepsize is then computed from the variation measures of the problem.
    """
    text = str(text)
    if text == "diminishing":
        return StepsizeSchedule.diminishing()
    if text == "constant":
        return "derived"
    if text.startswith("constant:"):
        try:
            alpha = float(text.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad stepsize {text!r}") from None
        if alpha <= 0:
            raise ConfigError("constant stepsize must be positive")
        return StepsizeSchedule.constant(alpha)
    raise ConfigError(f"bad stepsize {text!r}; expected diminishing, constant or constant:ALPHA")


def load_config(path) -> ExperimentConfig:
    """
    Read a config file. A run manifest is accepted too: its resolved
    ``config`` block is used, so re-running a manifest reproduces the run.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
        doc = yaml.safe_load(text)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if isinstance(doc, dict) and "library" in doc and "config" in doc:
        doc = doc["config"]
    return ExperimentConfig.from_dict(doc or {})
