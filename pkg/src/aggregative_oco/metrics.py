"""
Dynamic regret, regularity measures and tracking diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .engine import RunTrace, StepsizeSchedule, stepsizes
from .problem import ProblemSpec, _sample_set, full_gradient, global_loss


@dataclass
class SolverConfig:
    tol: float = 1e-8
    max_iter: int = 100_000
    residual_tol: float = 1e-6
    initial_step: float = 1.0


@dataclass
class Optimum:
    x: np.ndarray
    value: float
    converged: bool
    iterations: int
    residual: float
    method: str


@dataclass
class OptimaSequence:
    """Instantaneous optima ``x_t^*`` and ``f_t(x_t^*)`` for ``t = 0..T+1``."""

    x: np.ndarray
    value: np.ndarray
    converged: np.ndarray
    methods: list = field(default_factory=list)

    @property
    def T(self) -> int:
        return len(self.value) - 2

    @property
    def all_converged(self) -> bool:
        return bool(np.all(self.converged))


def _projected_residual(spec, t, x):
    return float(np.linalg.norm(x - spec.project(x - full_gradient(spec, t, x))))


def solve_instantaneous_optimum(spec: ProblemSpec, t: int, solver_config: SolverConfig | None = None,
                                x0=None) -> Optimum:
    """
    Minimize ``f_t`` over ``X``.

    Closed-form minimizers supplied by the loss family are used directly;
    otherwise projected gradient descent with backtracking runs until
    successive iterates move less than ``tol`` or ``max_iter`` is hit.
    """
    cfg = solver_config or SolverConfig()
    x_cf = spec.losses.optimum(spec, t)
    if x_cf is not None:
        res = _projected_residual(spec, t, x_cf) if spec.losses.smooth else 0.0
        return Optimum(x_cf, global_loss(spec, t, x_cf), True, 0, res, "closed_form")

    x = spec.project(np.zeros(spec.n) if x0 is None else np.asarray(x0, float))
    fx = global_loss(spec, t, x)
    step = cfg.initial_step
    it = 0
    for it in range(1, cfg.max_iter + 1):
        g = full_gradient(spec, t, x)
        while True:
            x_new = spec.project(x - step * g)
            dx = x_new - x
            f_new = global_loss(spec, t, x_new)
            if f_new <= fx + g @ dx + (dx @ dx) / (2 * step) + 1e-15 * abs(fx) or step < 1e-14:
                break
            step *= 0.5
        moved = float(np.linalg.norm(dx))
        x, fx = x_new, f_new
        if moved <= cfg.tol:
            break
        step *= 2.0
    res = _projected_residual(spec, t, x)
    converged = res <= cfg.residual_tol or (moved <= cfg.tol and not spec.losses.smooth)
    return Optimum(x, fx, bool(converged), it, res, "projected_gradient")


def optimum_sequence(spec: ProblemSpec, T: int, solver_config: SolverConfig | None = None) -> OptimaSequence:
    """Optima for ``t = 0..T+1``, solved once for time-invariant families."""
    xs = np.empty((T + 2, spec.n))
    vals = np.empty(T + 2)
    conv = np.empty(T + 2, dtype=bool)
    methods = []
    prev = None
    for t in range(T + 2):
        if prev is not None and spec.losses.time_invariant:
            opt = prev
        else:
            opt = solve_instantaneous_optimum(spec, t, solver_config, x0=None if prev is None else prev.x)
        xs[t], vals[t], conv[t] = opt.x, opt.value, opt.converged
        methods.append(opt.method)
        prev = opt
    return OptimaSequence(xs, vals, conv, methods)


# ---------------------------------------------------------------------------
# regret


@dataclass
class RegretSeries:
    total: float
    cumulative: np.ndarray
    over_t: np.ndarray

    @property
    def T(self):
        return len(self.cumulative)


def dynamic_regret(trace_or_losses, optima) -> RegretSeries:
    """
    ``R_T = sum_{t=1}^T f_t(x_t) - f_t(x_t^*)`` with its running series.

    `trace_or_losses` is a :class:`RunTrace` or the losses ``f_t(x_t)`` for
    ``t = 0..T``; `optima` an :class:`OptimaSequence` or optimal values
    indexed the same way (entries past ``T`` are ignored).
    """
    loss = trace_or_losses.loss if isinstance(trace_or_losses, RunTrace) else np.asarray(trace_or_losses, float)
    best = optima.value if isinstance(optima, OptimaSequence) else np.asarray(optima, float)
    T = len(loss) - 1
    if len(best) < T + 1:
        raise ValueError(f"optima cover {len(best) - 1} rounds, trace has {T}")
    inst = loss[1:] - best[1:T + 1]
    cum = np.cumsum(inst)
    return RegretSeries(float(cum[-1]) if T else 0.0, cum, cum / np.arange(1, T + 1))


def path_variation(optima, stepsize: StepsizeSchedule | None = None, T: int | None = None) -> float:
    """
    ``sum_{t=1}^T w_t ||x_{t+1}^* - x_t^*||`` with ``w_t = 1/alpha_t`` (or 1
    when `stepsize` is None).

    `optima` rows are ``x_t^*`` for ``t = 0, 1, ...``; by default
    ``T = len(optima) - 2``.
    """
    xs = optima.x if isinstance(optima, OptimaSequence) else np.asarray(optima, float)
    if xs.ndim == 1:
        xs = xs[:, None]
    if len(xs) < 2:
        raise ValueError("need at least two optima")
    T = len(xs) - 2 if T is None else T
    if T <= 0:
        return 0.0
    steps = np.linalg.norm(xs[2:T + 2] - xs[1:T + 1], axis=1)
    if stepsize is None:
        return float(steps.sum())
    alpha = stepsizes(stepsize, T)[1:T + 1]
    return float(np.sum(steps / alpha))


@dataclass
class EstimatorConfig:
    samples: int = 1000
    seed: int = 0
    #: half-width of the box ``z`` is sampled from, centered at the origin
    z_box: float = 100.0


@dataclass
class GradientVariation:
    value: float
    per_round: np.ndarray
    estimated: bool
    restricted: bool


def grad2_variation_sup(spec: ProblemSpec, i: int, t: int, estimator: EstimatorConfig | None = None):
    """
    ``max ||grad2 f_{i,t+1}(x, z) - grad2 f_{i,t}(x, z)||`` over ``x in X_i``
    and ``z``; returns ``(value, estimated)``.

    Closed forms come from the loss family; otherwise the max is taken over
    ``estimator.samples`` points of ``X_i`` times the z-box, which is a lower
    bound of the true value. Samples for a budget ``k`` are the first ``k``
    of any larger budget.
    """
    exact = spec.losses.grad2_variation_sup(i, t)
    if exact is not None:
        return float(exact), False
    est = estimator or EstimatorConfig()
    rng = np.random.default_rng(np.random.SeedSequence([est.seed, t, i]))
    d = spec.agg_dim
    best = 0.0
    for _ in range(est.samples):
        xi = _sample_set(spec.sets[i], rng)
        z = rng.uniform(-est.z_box, est.z_box, d)
        diff = spec.losses.grad2(i, t + 1, xi, z) - spec.losses.grad2(i, t, xi, z)
        best = max(best, float(np.linalg.norm(diff)))
    return best, True


def gradient_variation(spec: ProblemSpec, T: int, weighting: str = "unit_sum",
                       stepsize: StepsizeSchedule | None = None,
                       estimator: EstimatorConfig | None = None) -> GradientVariation:
    """
    Gradient variation of the ``grad2`` family over rounds ``1..T``.

    ``weighting="unit_sum"`` gives ``sum_t sum_i sup_{i,t}``;
    ``"alpha_weighted_square"`` gives ``sum_t alpha_t (sum_i sup_{i,t})^2``
    with unit weights when `stepsize` is None.
    """
    if weighting not in ("unit_sum", "alpha_weighted_square"):
        raise ValueError(f"unknown weighting {weighting!r}")
    per_round = np.zeros(T)
    estimated = False
    if not spec.losses.time_invariant:
        for k, t in enumerate(range(1, T + 1)):
            for i in range(spec.N):
                v, e = grad2_variation_sup(spec, i, t, estimator)
                per_round[k] += v
                estimated |= e
    if weighting == "unit_sum":
        value = float(per_round.sum())
    else:
        alpha = np.ones(T) if stepsize is None else stepsizes(stepsize, T)[1:T + 1]
        value = float(np.sum(alpha * per_round ** 2))
    return GradientVariation(value, per_round, estimated, estimated)


# ---------------------------------------------------------------------------
# tracking and bound constants


def tracking_residuals(trace: RunTrace):
    """Per-round ``||nu_t - 1 (x) mean(nu_t)||`` and ``||y_t - 1 (x) mean(y_t)||``."""
    if not trace.full:
        raise ValueError("tracking residuals need a full-level trace")
    nu_dev = trace.nu - trace.nu.mean(axis=1, keepdims=True)
    y_dev = trace.y - trace.y.mean(axis=1, keepdims=True)
    return (np.sqrt(np.sum(nu_dev ** 2, axis=(1, 2))), np.sqrt(np.sum(y_dev ** 2, axis=(1, 2))))


def averaging_identity_errors(spec: ProblemSpec, trace: RunTrace):
    """
    Per-round deviations ``max|mean_i nu_{i,t} - nu(x_t)|`` and
    ``max|mean_i y_{i,t} - mean_i g2_{i,t}|`` where ``g2`` are the recorded
    gradients (or noisy samples) that entered the tracker.
    """
    if not trace.full:
        raise ValueError("identity checks need a full-level trace")
    T = trace.T
    nu_true = np.stack([spec.psi_all(trace.x[t]).mean(axis=0) for t in range(T + 1)])
    e_nu = np.abs(trace.nu.mean(axis=1) - nu_true).max(axis=1)
    e_y = np.abs(trace.y.mean(axis=1) - trace.g2.mean(axis=1)).max(axis=1)
    return e_nu, e_y


@dataclass
class BoundConstants:
    gamma: float
    xi: float
    B1: float

    def to_dict(self):
        return {"gamma": self.gamma, "xi": self.xi, "B1": self.B1}


def compute_bound_constants(N: int, a: float, Q: int, G: float, y_first_round) -> BoundConstants:
    """
    Graph-dependent constants of the tracking analysis::

        gamma = (1 - a / (2 N^2))^-2
        xi    = (1 - a / (2 N^2))^(1/Q)
        B1    = N gamma max_i ||y_{i,1}|| + 2 N G gamma xi / (1 - xi) + 4 G
    """
    if not 0 < a < 1 or Q < 1:
        raise ValueError("need a in (0, 1) and Q >= 1")
    base = 1.0 - a / (2.0 * N * N)
    gamma = base ** -2
    xi = base ** (1.0 / Q)
    y1 = np.atleast_2d(np.asarray(y_first_round, float))
    ymax = float(np.max(np.linalg.norm(y1, axis=1))) if y1.size else 0.0
    B1 = N * gamma * ymax + 2 * N * G * gamma * xi / (1 - xi) + 4 * G
    return BoundConstants(gamma, xi, B1)


# ---------------------------------------------------------------------------
# reports


@dataclass
class RegretReport:
    regret_total: float
    regret_over_T: np.ndarray
    regret_cumulative: np.ndarray
    path_variation_weighted: float
    path_variation_unit: float
    grad_variation: float
    grad_variation_weighted: float
    optima: OptimaSequence
    grad_variation_estimated: bool = False
    optima_converged: bool = True
    constants: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "regret_total": self.regret_total,
            "regret_over_T_final": float(self.regret_over_T[-1]) if len(self.regret_over_T) else 0.0,
            "path_variation_weighted": self.path_variation_weighted,
            "path_variation_unit": self.path_variation_unit,
            "grad_variation": self.grad_variation,
            "grad_variation_weighted": self.grad_variation_weighted,
            "grad_variation_estimated": self.grad_variation_estimated,
            "optima_converged": self.optima_converged,
            "optima_methods": sorted(set(self.optima.methods)),
            "constants": self.constants,
        }


def regret_report(spec: ProblemSpec, trace: RunTrace, optima: OptimaSequence | None = None,
                  solver_config: SolverConfig | None = None,
                  estimator: EstimatorConfig | None = None) -> RegretReport:
    T = trace.T
    if optima is None:
        optima = optimum_sequence(spec, T, solver_config)
    reg = dynamic_regret(trace, optima)
    step = trace.config.stepsize
    gv = gradient_variation(spec, T, "unit_sum", estimator=estimator)
    gvw = gradient_variation(spec, T, "alpha_weighted_square", step, estimator)
    return RegretReport(
        regret_total=reg.total,
        regret_over_T=reg.over_t,
        regret_cumulative=reg.cumulative,
        path_variation_weighted=path_variation(optima, step, T),
        path_variation_unit=path_variation(optima, None, T),
        grad_variation=gv.value,
        grad_variation_weighted=gvw.value,
        optima=optima,
        grad_variation_estimated=gv.estimated,
        optima_converged=optima.all_converged,
    )


@dataclass
class ExpectedRegret:
    mean: np.ndarray
    stderr: np.ndarray
    n_runs: int

    @property
    def final(self):
        return float(self.mean[-1]), float(self.stderr[-1])


def expected_regret_over_t(series) -> ExpectedRegret:
    """Mean and standard error across runs of ``R_t / t`` series of equal length."""
    arr = np.stack([np.asarray(s, float) for s in series])
    R = arr.shape[0]
    se = arr.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.zeros(arr.shape[1])
    return ExpectedRegret(arr.mean(axis=0), se, R)
