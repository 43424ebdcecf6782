"""
Ready-made experiment configurations and the best-response fixture.

The configurations are ordinary :class:`ExperimentConfig` objects; dump one
with ``yaml.safe_dump(cfg.to_dict())`` to get an editable starting point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import project
from ..problem import ProblemSpec
from .config import ExperimentConfig


def experiment_example1(steps: int = 10_000, algorithm: str = "odgt") -> ExperimentConfig:
    """Two scalar agents on a single edge, diminishing stepsize, zero start."""
    return ExperimentConfig.from_dict({
        "problem": {"family": "example1"},
        "schedule": {"kind": "static", "edges": [[0, 1]]},
        "run": {"algorithm": algorithm, "steps": steps, "stepsize": "diminishing"},
    })


def experiment_target_surrounding(scale: str = "desk", steps: int = 3000,
                                  algorithm: str = "odgt") -> ExperimentConfig:
    """
    The target-surrounding swarm.

    Parameters
    ----------
    scale : {"paper", "desk"}
        ``"paper"`` is the full-scale swarm of 50 agents, ``"desk"`` uses 10. Both use a 4-cyclic
        schedule, Huber smoothing with ``epsilon = 1e-3``, noise variances
        ``0.1`` and the seeds ``1..10`` when run stochastically.
    """
    if scale not in ("paper", "desk"):
        raise ValueError("scale must be 'paper' or 'desk'")
    N = 50 if scale == "paper" else 10
    return ExperimentConfig.from_dict({
        "problem": {"family": "target_surrounding", "N": N, "smoothing": "huber", "epsilon": 1e-3},
        "schedule": {"kind": "q_cyclic", "Q": 4, "seed": 0},
        "run": {"algorithm": algorithm, "steps": steps, "stepsize": "diminishing",
                "seeds": list(range(1, 11)) if algorithm == "odgt-stochastic" else None,
                "sigma1_sq": 0.1, "sigma2_sq": 0.1},
    })


def experiment_quadratic_synthetic(N: int = 10, seed: int = 0, drift_rate: float = 1.0,
                                   steps: int = 5000, stepsize: str = "diminishing",
                                   Q: int = 2) -> ExperimentConfig:
    """Quadratic agents whose optimum drifts by ``drift_rate / sqrt(t)`` per round."""
    return ExperimentConfig.from_dict({
        "problem": {"family": "quadratic_synthetic", "N": N, "seed": seed, "drift_rate": drift_rate},
        "schedule": {"kind": "q_cyclic", "Q": Q, "seed": seed},
        "run": {"algorithm": "odgt", "steps": steps, "stepsize": stepsize},
    })


# ---------------------------------------------------------------------------
# Nash equilibrium by best responses


@dataclass
class BestResponseResult:
    x: np.ndarray
    iterations: int
    converged: bool
    step_size: float


def _best_response(spec, t, i, x, tol, max_iter):
    """Minimize ``f_i(x_i, nu(x_i, x_-i))`` over ``X_i`` by projected gradient."""
    N = spec.N
    lo, hi = spec.offsets[i], spec.offsets[i + 1]
    others = spec.psi_all(x).sum(axis=0) - spec.psi[i].value(x[lo:hi])

    def grad(xi):
        nu = (others + spec.psi[i].value(xi)) / N
        J = spec.psi[i].jacobian(xi)
        return spec.losses.grad1(i, t, xi, nu) + J.T @ spec.losses.grad2(i, t, xi, nu) / N

    # the step is accepted when the local gradient Lipschitz estimate is at
    # most 1/step; unlike a function-value test this stays accurate near the
    # minimizer
    xi = x[lo:hi].copy()
    g = grad(xi)
    step = 1.0
    for _ in range(max_iter):
        while True:
            cand = project(spec.sets[i], xi - step * g)
            d = cand - xi
            g_new = grad(cand)
            if np.linalg.norm(g_new - g) * step <= np.linalg.norm(d) or step < 1e-14:
                break
            step *= 0.5
        if np.linalg.norm(d) <= tol:
            return cand
        xi, g = cand, g_new
        step *= 2.0
    return xi


def best_response_dynamics(spec: ProblemSpec, t: int = 0, x0=None, tol: float = 1e-12,
                           max_iter: int = 10_000, damping: float = 0.5) -> BestResponseResult:
    """
    Damped Jacobi best-response iteration for the game in which agent ``i``
    minimizes its own ``f_{i,t}`` while taking the other agents as given.

    ``x <- (1 - damping) x + damping BR(x)`` until the change falls below
    `tol`. A fixed point is a Nash equilibrium.
    """
    x = np.zeros(spec.n) if x0 is None else spec.project(np.asarray(x0, float))
    for k in range(1, max_iter + 1):
        br = np.concatenate([_best_response(spec, t, i, x, tol * 1e-2, 10_000) for i in range(spec.N)])
        new = (1 - damping) * x + damping * br
        if np.linalg.norm(new - x) <= tol:
            return BestResponseResult(new, k, True, damping)
        x = new
    return BestResponseResult(x, max_iter, False, damping)


def nash_gap(spec: ProblemSpec, x, t: int = 0) -> float:
    """``max_i ||BR_i(x) - x_i||``; zero exactly at a Nash equilibrium."""
    x = np.asarray(x, float)
    gaps = []
    for i in range(spec.N):
        lo, hi = spec.offsets[i], spec.offsets[i + 1]
        gaps.append(np.linalg.norm(_best_response(spec, t, i, x, 1e-14, 10_000) - x[lo:hi]))
    return float(max(gaps))


__all__ = [
    "experiment_example1",
    "experiment_target_surrounding",
    "experiment_quadratic_synthetic",
    "best_response_dynamics",
    "nash_gap",
    "BestResponseResult",
]
