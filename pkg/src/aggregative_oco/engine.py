"""
Online distributed gradient tracking and its centralized baseline.

Round ``t`` of O-DGT, for every agent ``i`` with the graph ``A_t``::

    x_{i,t+1}  = P_{X_i}[x_{i,t} - alpha_t (g1_{i,t} + J_{i,t}^T y_{i,t})]
    nu_{i,t+1} = sum_j a_ij nu_{j,t} + psi_i(x_{i,t+1}) - psi_i(x_{i,t})
    y_{i,t+1}  = sum_j a_ij y_{j,t} + g2_{i,t+1} - g2_{i,t}

where ``g1_{i,t} = grad1 f_{i,t}(x_{i,t}, nu_{i,t})``, ``J`` is the Jacobian
of ``psi_i`` and ``g2_{i,t} = grad2 f_{i,t}(x_{i,t}, nu_{i,t})``. In the
stochastic variant every gradient is a noisy sample; ``g2_{i,t}`` is drawn
once and reused by the next round, which keeps ``mean_i y_{i,t}`` equal to
the mean of the drawn samples.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .network import GraphSchedule, graph_at, validate_schedule
from .problem import NoiseModel, ProblemSpec, rng_for, sample_feasible

logger = logging.getLogger(__name__)

ALGORITHMS = ("odgt", "odgt_stochastic", "centralized_pgd")

# rng draw slots within a round
SLOT_GRAD1, SLOT_GRAD_PSI, SLOT_GRAD2 = 0, 1, 2


class NonFiniteError(FloatingPointError):
    """A NaN or infinity appeared; carries the round, agent and quantity."""

    def __init__(self, t, agent, quantity):
        self.t, self.agent, self.quantity = t, agent, quantity
        super().__init__(f"non-finite {quantity} at round {t}, agent {agent}")

    def to_dict(self):
        return {"round": self.t, "agent": self.agent, "quantity": self.quantity}


class ScheduleError(ValueError):
    """The communication schedule fails validation in strict mode."""

    def __init__(self, report):
        self.report = report
        super().__init__(f"schedule validation failed: {report.first_violation}")


@dataclass
class SwarmState:
    """
    Per-agent iterates at round ``t``.

    ``x`` is stacked (length ``n``); ``nu``, ``y`` and ``g2`` are ``(N, d)``.
    ``g2`` holds the ``grad2`` values (or samples) at ``(x_t, nu_t)`` that
    entered ``y_t``.
    """

    t: int
    x: np.ndarray
    nu: np.ndarray
    y: np.ndarray
    g2: np.ndarray


# ---------------------------------------------------------------------------
# stepsizes


@dataclass(frozen=True)
class StepsizeSchedule:
    """``kind="diminishing"``: 1 then ``1/sqrt(t)``; ``kind="constant"``: ``alpha``."""

    kind: str = "diminishing"
    alpha: float | None = None
    derived_from: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("diminishing", "constant"):
            raise ValueError(f"unknown stepsize kind {self.kind!r}")
        if self.kind == "constant" and not (self.alpha is not None and self.alpha > 0):
            raise ValueError("constant stepsize needs alpha > 0")

    @classmethod
    def diminishing(cls):
        return cls("diminishing")

    @classmethod
    def constant(cls, alpha):
        return cls("constant", float(alpha))

    @classmethod
    def from_variations(cls, path_variation, grad_variation, T):
        """``alpha = sqrt((1 + V^p_{T,1}) / (T + V^g_{T,1}))``."""
        alpha = math.sqrt((1.0 + path_variation) / (T + grad_variation))
        return cls("constant", alpha, (float(path_variation), float(grad_variation), int(T)))

    def to_str(self):
        return "diminishing" if self.kind == "diminishing" else f"constant:{self.alpha!r}"


def stepsize_at(schedule: StepsizeSchedule, t: int) -> float:
    if t < 0:
        raise ValueError("t must be nonnegative")
    if schedule.kind == "constant":
        return schedule.alpha
    return 1.0 if t == 0 else 1.0 / math.sqrt(t)


def stepsizes(schedule: StepsizeSchedule, T: int) -> np.ndarray:
    """``alpha_t`` for ``t = 0..T``."""
    if schedule.kind == "constant":
        return np.full(T + 1, schedule.alpha)
    t = np.arange(T + 1, dtype=float)
    t[0] = 1.0
    return 1.0 / np.sqrt(t)


# ---------------------------------------------------------------------------
# configuration and trace


@dataclass
class RunConfig:
    algorithm: str = "odgt"
    stepsize: StepsizeSchedule = field(default_factory=StepsizeSchedule)
    seed: int = 0
    horizon: int = 100
    noise: NoiseModel = field(default_factory=NoiseModel)
    record_level: str = "full"
    initial_x: object = "zeros"
    strict: bool = True

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.record_level not in ("full", "summary"):
            raise ValueError("record_level must be 'full' or 'summary'")
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")


@dataclass
class RunTrace:
    """
    Per-round records ``t = 0..T``.

    ``alpha[t]`` is the stepsize of the step from ``t`` to ``t + 1``; ``loss[t]``
    is ``f_t(x_t)``. State arrays are None for summary-level traces.
    """

    config: RunConfig
    alpha: np.ndarray
    loss: np.ndarray
    nu_residual: np.ndarray
    y_residual: np.ndarray
    x_norm: np.ndarray
    x: np.ndarray | None = None
    nu: np.ndarray | None = None
    y: np.ndarray | None = None
    g2: np.ndarray | None = None
    rng_keys: np.ndarray | None = None
    warnings: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return len(self.loss) - 1

    @property
    def full(self) -> bool:
        return self.x is not None

    def state(self, t) -> SwarmState:
        if not self.full:
            raise ValueError("summary-level trace has no states")
        return SwarmState(t, self.x[t], self.nu[t], self.y[t], self.g2[t])

    def truncated(self, T):
        """The same run viewed up to round `T`."""
        cut = lambda a: None if a is None else a[: T + 1]
        return replace(self, alpha=cut(self.alpha), loss=cut(self.loss),
                       nu_residual=cut(self.nu_residual), y_residual=cut(self.y_residual),
                       x_norm=cut(self.x_norm), x=cut(self.x), nu=cut(self.nu), y=cut(self.y),
                       g2=cut(self.g2), rng_keys=cut(self.rng_keys))


# ---------------------------------------------------------------------------
# single steps


def _noisy_blocks(rng_key, sigma, blocks_scale, g):
    """Add noise to `g` where entries of agent ``i`` have std ``sigma * scale_i``."""
    if sigma == 0.0:
        return g
    delta = rng_for(rng_key).standard_normal(g.shape)
    return g + sigma * blocks_scale * delta


def _sample_g2(spec, t, x, nu, noise, seed):
    g2 = spec.losses.grad2_all(t, x, nu)
    if noise is not None and noise.sigma2 > 0:
        g2 = _noisy_blocks((seed, t, SLOT_GRAD2), noise.sigma2, 1.0 / math.sqrt(spec.agg_dim), g2)
    return g2


def _initial_x(spec, initial_x):
    if isinstance(initial_x, str):
        if initial_x == "zeros":
            x = np.zeros(spec.n)
        elif initial_x.startswith("random"):
            _, _, seed = initial_x.partition(":")
            x = sample_feasible(spec, np.random.default_rng(int(seed or 0)))
        else:
            raise ValueError(f"unknown initial_x {initial_x!r}")
    else:
        x = np.asarray(initial_x, float).ravel()
    x = spec.check_x(x)
    return spec.project(x)


def init_state(spec: ProblemSpec, initial_x="zeros", noise: NoiseModel | None = None,
               seed: int = 0) -> SwarmState:
    """
    Round-0 state: ``nu_{i,0} = psi_i(x_{i,0})`` and ``y_{i,0} = g2_{i,0}``.

    `initial_x` is a stacked vector, ``"zeros"`` or ``"random:<seed>"``;
    infeasible points are projected. Passing `noise` draws ``y_{i,0}`` from
    the noisy oracle keyed by `seed`.
    """
    x = _initial_x(spec, initial_x)
    nu = spec.psi_all(x)
    g2 = _sample_g2(spec, 0, x, nu, noise, seed)
    return SwarmState(0, x, nu, g2.copy(), g2)


def _check_finite(t, **arrays):
    for name, arr in arrays.items():
        bad = ~np.isfinite(arr)
        if bad.any():
            idx = np.argwhere(bad)[0]
            raise NonFiniteError(t, int(idx[0]), name)


def _check_x_finite(spec, t, x):
    bad = np.flatnonzero(~np.isfinite(x))
    if bad.size:
        raise NonFiniteError(t, int(np.searchsorted(spec.offsets, bad[0], side="right") - 1), "x")


def odgt_step(spec: ProblemSpec, schedule: GraphSchedule, state: SwarmState, alpha_t: float,
              noise: NoiseModel | None = None, seed: int = 0) -> SwarmState:
    """
    One synchronous O-DGT round from ``state.t`` to ``state.t + 1``.

    With `noise`, the gradients are replaced by samples from the noisy
    oracle; draws are keyed by ``(seed, round, slot)`` so a run is
    reproducible bit for bit.
    """
    t, x, nu, y = state.t, state.x, state.nu, state.y
    N, d = spec.N, spec.agg_dim
    g1 = spec.losses.grad1_all(t, x, nu)
    stochastic = noise is not None and (noise.sigma1 > 0 or noise.sigma2 > 0)
    if stochastic and noise.sigma1 > 0:
        scale1 = np.repeat(1.0 / np.sqrt(spec.dims), spec.dims)
        g1 = _noisy_blocks((seed, t, SLOT_GRAD1), noise.sigma1, scale1, g1)
        rng = rng_for((seed, t, SLOT_GRAD_PSI))
        jac = []
        for J in spec.psi_jacobians(x):
            jac.append(J + noise.sigma1 / math.sqrt(J.size) * rng.standard_normal(J.shape))
        direction = g1 + spec.psi_vjp_all(x, y, jac)
    else:
        direction = g1 + spec.psi_vjp_all(x, y)
    x_new = spec.project(x - alpha_t * direction)
    W = graph_at(schedule, t).weights
    psi_old = spec.psi_all(x)
    nu_new = W @ nu + (spec.psi_all(x_new) - psi_old)
    g2_new = _sample_g2(spec, t + 1, x_new, nu_new, noise if stochastic else None, seed)
    y_new = W @ y + (g2_new - state.g2)
    _check_x_finite(spec, t + 1, x_new)
    _check_finite(t + 1, nu=nu_new, y=y_new)
    return SwarmState(t + 1, x_new, nu_new, y_new, g2_new)


def centralized_pgd_step(spec: ProblemSpec, x_t, alpha_t: float, t: int = 0) -> np.ndarray:
    """
    ``x_{t+1} = P_X(x_t - alpha_t grad f_t(x_t))`` with the exact global
    aggregate and the exact mean of ``grad2``.
    """
    from .problem import full_gradient

    x_t = spec.check_x(x_t)
    return spec.project(x_t - alpha_t * full_gradient(spec, t, x_t))


# ---------------------------------------------------------------------------
# full runs


def _residual(v):
    return float(np.linalg.norm(v - v.mean(axis=0)))


def run(spec: ProblemSpec, schedule: GraphSchedule | None, config: RunConfig) -> RunTrace:
    """
    Execute ``config.horizon`` rounds and record the trajectory.

    Raises
    ------
    ScheduleError
        Strict mode and the schedule fails validation.
    NonFiniteError
        A NaN or infinity appeared in an iterate.
    """
    T = config.horizon
    warnings = []
    if config.algorithm != "centralized_pgd":
        if schedule is None:
            raise ValueError("distributed algorithms need a graph schedule")
        if schedule.N != spec.N:
            raise ValueError(f"schedule has {schedule.N} nodes, problem has {spec.N} agents")
        report = validate_schedule(schedule)
        if not report.ok:
            if config.strict:
                raise ScheduleError(report)
            warnings.append(f"schedule validation failed: {report.first_violation}")
            logger.warning(warnings[-1])
    noise = config.noise if config.algorithm == "odgt_stochastic" else None
    alphas = stepsizes(config.stepsize, T)
    full = config.record_level == "full"
    N, d, n = spec.N, spec.agg_dim, spec.n

    loss = np.empty(T + 1)
    nu_res = np.empty(T + 1)
    y_res = np.empty(T + 1)
    x_norm = np.empty(T + 1)
    if full:
        xs, nus, ys, g2s = (np.empty((T + 1, n)), np.empty((T + 1, N, d)),
                            np.empty((T + 1, N, d)), np.empty((T + 1, N, d)))

    if config.algorithm == "centralized_pgd":
        x = _initial_x(spec, config.initial_x)
        state = None
    else:
        state = init_state(spec, config.initial_x, noise, config.seed)
        x = state.x

    for t in range(T + 1):
        if state is not None:
            x = state.x
            nu, y, g2 = state.nu, state.y, state.g2
        else:
            nu = np.tile(spec.psi_all(x).mean(axis=0), (N, 1))
            g2 = spec.losses.grad2_all(t, x, nu)
            y = np.tile(g2.mean(axis=0), (N, 1))
        nu_true = np.tile(spec.psi_all(x).mean(axis=0), (N, 1))
        loss[t] = float(np.sum(spec.losses.values(t, x, nu_true)))
        nu_res[t], y_res[t] = _residual(nu), _residual(y)
        x_norm[t] = float(np.linalg.norm(x))
        if full:
            xs[t], nus[t], ys[t], g2s[t] = x, nu, y, g2
        if t == T:
            break
        if state is not None:
            state = odgt_step(spec, schedule, state, alphas[t], noise, config.seed)
        else:
            x = centralized_pgd_step(spec, x, alphas[t], t)
            _check_x_finite(spec, t + 1, x)

    trace = RunTrace(config=config, alpha=alphas, loss=loss, nu_residual=nu_res,
                     y_residual=y_res, x_norm=x_norm, warnings=warnings)
    if full:
        trace.x, trace.nu, trace.y, trace.g2 = xs, nus, ys, g2s
        if noise is not None:
            trace.rng_keys = np.column_stack([np.full(T + 1, config.seed), np.arange(T + 1)])
    return trace


def run_seeds(spec, schedule, config: RunConfig, seeds, workers: int = 1):
    """
    Independent runs differing only in the seed.

    Runs are keyed by their own seed, so the result does not depend on
    `workers`.
    """
    configs = [replace(config, seed=int(s)) for s in seeds]
    if workers <= 1:
        return [run(spec, schedule, c) for c in configs]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(lambda c: run(spec, schedule, c), configs))
