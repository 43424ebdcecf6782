"""
Separable time-varying objectives with an aggregative variable.

A problem couples ``N`` agents through ``nu(x) = mean_i psi_i(x_i)``; agent
``i`` owns the local loss ``f_{i,t}(x_i, nu)``. Decision vectors are handled
stacked, ``x = col(x_1, ..., x_N)``, while per-agent ``d``-vectors (local
aggregate estimates, trackers, ``grad2`` values) are ``(N, d)`` arrays.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import Box, ConvexSet, DimensionError, FullSpaceWithCap, Product, contains, diameter_bound

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# aggregation maps


class AggregationMap:
    """Base class for ``psi_i : R^{n_i} -> R^d``."""

    input_dim: int
    output_dim: int
    #: declared bound on the Jacobian norm
    G: float
    #: declared Lipschitz constant of the Jacobian
    L2: float

    def value(self, x):
        raise NotImplementedError

    def jacobian(self, x):
        """Jacobian as a ``(d, n_i)`` matrix."""
        raise NotImplementedError

    def bound(self, set_):
        """A bound on ``||psi(x)||`` over `set_`."""
        raise NotImplementedError


class Identity(AggregationMap):
    def __init__(self, dim: int):
        self.input_dim = self.output_dim = int(dim)
        self.G, self.L2 = 1.0, 0.0

    def value(self, x):
        return np.asarray(x, float)

    def jacobian(self, x):
        return np.eye(self.input_dim)

    def bound(self, set_):
        return diameter_bound(set_)

    def __repr__(self):
        return f"Identity({self.input_dim})"


class Linear(AggregationMap):
    def __init__(self, matrix):
        self.matrix = np.atleast_2d(np.asarray(matrix, float))
        self.output_dim, self.input_dim = self.matrix.shape
        self.G, self.L2 = float(np.linalg.norm(self.matrix, 2)), 0.0

    def value(self, x):
        return self.matrix @ x

    def jacobian(self, x):
        return self.matrix

    def bound(self, set_):
        return self.G * diameter_bound(set_)


class Smooth(AggregationMap):
    """User-supplied smooth map with declared constants ``G`` and ``L2``."""

    def __init__(self, value, jacobian, input_dim, output_dim, G, L2, value_bound=None):
        self._value, self._jacobian = value, jacobian
        self.input_dim, self.output_dim = int(input_dim), int(output_dim)
        self.G, self.L2 = float(G), float(L2)
        self.value_bound = value_bound

    def value(self, x):
        return np.asarray(self._value(x), float)

    def jacobian(self, x):
        return np.asarray(self._jacobian(x), float).reshape(self.output_dim, self.input_dim)

    def bound(self, set_):
        if self.value_bound is not None:
            return float(self.value_bound)
        # psi(x) = psi(0) + int J, and ||J|| <= G
        return float(np.linalg.norm(self.value(np.zeros(self.input_dim)))) + self.G * diameter_bound(set_)


# ---------------------------------------------------------------------------
# loss families


class LossFamily:
    """
    Time-indexed family of local losses ``f_{i,t}(x_i, nu)``.

    Subclasses implement the per-agent methods; the stacked ``*_all``
    variants loop over agents unless overridden with vectorized code.
    """

    kind = "custom"
    smooth = True
    time_invariant = False

    def __init__(self, dims: Sequence[int], agg_dim: int):
        self.dims = [int(n) for n in dims]
        self.agg_dim = int(agg_dim)
        self.offsets = np.cumsum([0] + self.dims)

    @property
    def N(self) -> int:
        return len(self.dims)

    def block(self, x, i):
        return x[self.offsets[i]:self.offsets[i + 1]]

    # per-agent interface
    def value(self, i, t, xi, nu):
        raise NotImplementedError

    def grad1(self, i, t, xi, nu):
        raise NotImplementedError

    def grad2(self, i, t, xi, nu):
        raise NotImplementedError

    # stacked interface
    def values(self, t, x, nu):
        return np.array([self.value(i, t, self.block(x, i), nu[i]) for i in range(self.N)])

    def grad1_all(self, t, x, nu):
        return np.concatenate([self.grad1(i, t, self.block(x, i), nu[i]) for i in range(self.N)])

    def grad2_all(self, t, x, nu):
        return np.stack([self.grad2(i, t, self.block(x, i), nu[i]) for i in range(self.N)])

    def grad2_variation_sup(self, i, t):
        """
        ``max_{x_i, z} ||grad2 f_{i,t+1}(x_i, z) - grad2 f_{i,t}(x_i, z)||`` if
        known in closed form, else None.
        """
        if self.time_invariant:
            return 0.0
        return None

    def optimum(self, spec, t):
        """Closed-form minimizer of ``f_t`` over ``X`` when available, else None."""
        return None

    def declared_constants(self, spec, horizon):
        """
        Bounds on the stacked gradients.

        Returns a dict with ``G1`` (sup of ``||grad_1 f_t||``), ``G2`` (sup of
        ``||grad_2 f_t||``), ``L1`` and ``estimated``.
        """
        return _sampled_constants(spec, horizon)

    def to_dict(self):
        return {"family": self.kind}


def _sampled_constants(spec, horizon, n_points=200, seed=0, safety=1.2):
    """Estimate gradient bounds by sampling feasible points, inflated by `safety`."""
    rng = np.random.default_rng(seed)
    ts = np.unique(np.linspace(0, max(horizon, 0), min(horizon + 1, 20)).astype(int))
    g1 = g2 = 0.0
    lip = 0.0
    for t in ts:
        for _ in range(max(n_points // len(ts), 1)):
            x = sample_feasible(spec, rng)
            nu = np.tile(aggregate(spec, x), (spec.N, 1))
            a1 = spec.losses.grad1_all(t, x, nu)
            a2 = spec.losses.grad2_all(t, x, nu)
            g1, g2 = max(g1, np.linalg.norm(a1)), max(g2, np.linalg.norm(a2))
            xp = sample_feasible(spec, rng)
            nup = np.tile(aggregate(spec, xp), (spec.N, 1))
            dist = np.linalg.norm(x - xp) + np.linalg.norm(nu - nup)
            if dist > 0:
                num = max(np.linalg.norm(a1 - spec.losses.grad1_all(t, xp, nup)),
                          np.linalg.norm(a2 - spec.losses.grad2_all(t, xp, nup)))
                lip = max(lip, num / dist)
    return {"G1": safety * g1, "G2": safety * g2, "L1": safety * lip, "estimated": True}


def _as_path(value, shape):
    """Wrap a constant array or a callable ``t -> array`` as a callable."""
    if callable(value):
        return value, False
    arr = np.broadcast_to(np.asarray(value, float), shape).copy()
    return (lambda t: arr), True


class QuadraticAggregative(LossFamily):
    """
    ``f_{i,t}(x_i, nu) = q_i/2 ||x_i - c_i(t)||^2 + r_i/2 ||nu - e_i(t)||^2``.

    `centers` gives the stacked ``c(t)`` (length ``n``) and `nu_targets` the
    ``(N, d)`` array ``e(t)``; either may be a constant or a callable of ``t``.
    """

    kind = "quadratic"

    def __init__(self, dims, agg_dim, q, r, centers=0.0, nu_targets=0.0):
        super().__init__(dims, agg_dim)
        self.q = np.broadcast_to(np.asarray(q, float), (self.N,)).copy()
        self.r = np.broadcast_to(np.asarray(r, float), (self.N,)).copy()
        if np.any(self.q <= 0) or np.any(self.r < 0):
            raise ValueError("quadratic family needs q > 0 and r >= 0")
        self._q_rep = np.repeat(self.q, self.dims)
        self.centers, c_const = _as_path(centers, (int(self.offsets[-1]),))
        self.nu_targets, e_const = _as_path(nu_targets, (self.N, self.agg_dim))
        self.time_invariant = c_const and e_const
        self._H_cache = {}

    def value(self, i, t, xi, nu):
        ci = self.block(self.centers(t), i)
        ei = self.nu_targets(t)[i]
        return 0.5 * self.q[i] * float(np.sum((xi - ci) ** 2)) + 0.5 * self.r[i] * float(np.sum((nu - ei) ** 2))

    def grad1(self, i, t, xi, nu):
        return self.q[i] * (xi - self.block(self.centers(t), i))

    def grad2(self, i, t, xi, nu):
        return self.r[i] * (nu - self.nu_targets(t)[i])

    def values(self, t, x, nu):
        sq = (x - self.centers(t)) ** 2
        own = np.add.reduceat(sq, self.offsets[:-1]) if len(sq) else np.zeros(self.N)
        agg = np.sum((nu - self.nu_targets(t)) ** 2, axis=1)
        return 0.5 * self.q * own + 0.5 * self.r * agg

    def grad1_all(self, t, x, nu):
        return self._q_rep * (x - self.centers(t))

    def grad2_all(self, t, x, nu):
        return self.r[:, None] * (nu - self.nu_targets(t))

    def grad2_variation_sup(self, i, t):
        # the nu-dependence cancels in the difference
        de = self.nu_targets(t + 1)[i] - self.nu_targets(t)[i]
        return float(self.r[i] * np.linalg.norm(de))

    def _normal_equations(self, spec):
        key = id(spec)
        if key not in self._H_cache:
            Psi = np.hstack([p.jacobian(np.zeros(p.input_dim)) for p in spec.psi]) / spec.N
            H = np.diag(self._q_rep) + self.r.sum() * Psi.T @ Psi
            self._H_cache[key] = (Psi, np.linalg.inv(H))
        return self._H_cache[key]

    def optimum(self, spec, t):
        if not all(isinstance(p, (Identity, Linear)) for p in spec.psi):
            return None
        Psi, Hinv = self._normal_equations(spec)
        rhs = self._q_rep * self.centers(t) + Psi.T @ (self.r @ self.nu_targets(t))
        x = Hinv @ rhs
        # the unconstrained stationary point is only the answer when feasible
        if not all(contains(s, xi, 1e-12) for s, xi in zip(spec.sets, spec.split(x))):
            return None
        return x

    def declared_constants(self, spec, horizon):
        ts = range(0, horizon + 2)
        c_max = np.zeros(self.N)
        e_max = np.zeros(self.N)
        for t in ([0] if self.time_invariant else ts):
            c = self.centers(t)
            c_max = np.maximum(c_max, [np.linalg.norm(self.block(c, i)) for i in range(self.N)])
            e_max = np.maximum(e_max, np.linalg.norm(self.nu_targets(t), axis=1))
        B = np.array([diameter_bound(s) for s in spec.sets])
        B_nu = max(p.bound(s) for p, s in zip(spec.psi, spec.sets))
        return {
            "G1": float(np.linalg.norm(self.q * (B + c_max))),
            "G2": float(np.linalg.norm(self.r * (B_nu + e_max))),
            "L1": float(max(self.q.max(), self.r.max())),
            "estimated": False,
        }

    def to_dict(self):
        return {"family": self.kind, "q": self.q.tolist(), "r": self.r.tolist()}


def _huber_grad(r, eps):
    """Gradient of the Huber function, row-wise on a ``(k, m)`` array."""
    nrm = np.linalg.norm(r, axis=-1, keepdims=True)
    return r / np.maximum(nrm, eps)


def _huber(r, eps):
    nrm = np.linalg.norm(r, axis=-1)
    return np.where(nrm <= eps, nrm ** 2 / (2 * eps), nrm - eps / 2)


def _norm_grad(r):
    nrm = np.linalg.norm(r, axis=-1, keepdims=True)
    # subgradient 0 at the kink
    return np.divide(r, nrm, out=np.zeros_like(r), where=nrm > 0)


def settling_target_path(t):
    """``x_0(t) = (10, 10) + (1, 1) / (t + 1)``."""
    return np.array([10.0, 10.0]) + np.ones(2) / (t + 1)


def circling_intruder_path(t):
    """``z(t) = (10, 10) + 6 (sin t, cos t) + (1, 1) / (t + 1)``."""
    return np.array([10.0, 10.0]) + 6.0 * np.array([math.sin(t), math.cos(t)]) + np.ones(2) / (t + 1)


class TargetSurrounding(LossFamily):
    """
    ``f_{i,t}(x_i, nu) = rho(x_i - z_i(t)) + rho(nu - x_0(t))`` in the plane.

    ``rho`` is the Euclidean norm (``smoothing="none"``) or the Huber function
    with width `epsilon`.
    """

    kind = "target_surrounding"

    def __init__(self, target_path, intruder_paths, smoothing="huber", epsilon=1e-3):
        N = len(intruder_paths)
        super().__init__([2] * N, 2)
        if smoothing not in ("none", "huber"):
            raise ValueError(f"unknown smoothing {smoothing!r}")
        self.target_path = target_path
        self.intruder_paths = list(intruder_paths)
        self.smoothing = smoothing
        self.epsilon = float(epsilon)
        self.smooth = smoothing == "huber"
        self._cache = {}

    def _paths(self, t):
        hit = self._cache.get(t)
        if hit is None:
            z = np.stack([np.asarray(p(t), float) for p in self.intruder_paths])
            hit = (z, np.asarray(self.target_path(t), float))
            if len(self._cache) > 64:
                self._cache.clear()
            self._cache[t] = hit
        return hit

    def _rho(self, r):
        return _huber(r, self.epsilon) if self.smooth else np.linalg.norm(r, axis=-1)

    def _drho(self, r):
        return _huber_grad(r, self.epsilon) if self.smooth else _norm_grad(r)

    def value(self, i, t, xi, nu):
        return float(self.values_single(i, t, xi, nu))

    def values_single(self, i, t, xi, nu):
        z, x0 = self._paths(t)
        return self._rho(xi - z[i]) + self._rho(nu - x0)

    def grad1(self, i, t, xi, nu):
        z, _ = self._paths(t)
        return self._drho(np.asarray(xi - z[i])[None])[0]

    def grad2(self, i, t, xi, nu):
        _, x0 = self._paths(t)
        return self._drho(np.asarray(nu - x0)[None])[0]

    def values(self, t, x, nu):
        z, x0 = self._paths(t)
        return self._rho(x.reshape(-1, 2) - z) + self._rho(nu - x0)

    def grad1_all(self, t, x, nu):
        z, _ = self._paths(t)
        return self._drho(x.reshape(-1, 2) - z).ravel()

    def grad2_all(self, t, x, nu):
        _, x0 = self._paths(t)
        return self._drho(nu - x0)

    def grad2_variation_sup(self, i, t):
        # sup_z ||g(z - a) - g(z - b)|| for g the (smoothed) unit-vector map,
        # attained at z = (a + b) / 2
        step = float(np.linalg.norm(self._paths(t + 1)[1] - self._paths(t)[1]))
        if step == 0.0:
            return 0.0
        if not self.smooth:
            return 2.0
        return min(2.0, step / self.epsilon)

    def optimum(self, spec, t):
        z, x0 = self._paths(t)
        if not np.all(z == z[0]):
            return None
        gap = float(np.linalg.norm(z[0] - x0))
        # with a common intruder every point of the segment [z, x0] (away from
        # the smoothing zone) attains the lower bound; take the midpoint
        if gap > 0 and self.smooth and gap < 2 * self.epsilon:
            return None
        x = np.tile(0.5 * (z[0] + x0), spec.N)
        if not all(contains(s, xi, 0.0) for s, xi in zip(spec.sets, spec.split(x))):
            return None
        return x

    def declared_constants(self, spec, horizon):
        N = self.N
        return {
            "G1": math.sqrt(N),
            "G2": math.sqrt(N),
            "L1": 1.0 / self.epsilon if self.smooth else math.inf,
            "estimated": False,
        }

    def to_dict(self):
        return {"family": self.kind, "smoothing": self.smoothing, "epsilon": self.epsilon}


class CustomLoss(LossFamily):
    """Losses from user callables ``value/grad1/grad2(i, t, x_i, nu)``."""

    def __init__(self, dims, agg_dim, value, grad1, grad2, time_invariant=False, constants=None):
        super().__init__(dims, agg_dim)
        self._value, self._grad1, self._grad2 = value, grad1, grad2
        self.time_invariant = time_invariant
        self._constants = constants

    def value(self, i, t, xi, nu):
        return float(self._value(i, t, xi, nu))

    def grad1(self, i, t, xi, nu):
        return np.asarray(self._grad1(i, t, xi, nu), float)

    def grad2(self, i, t, xi, nu):
        return np.asarray(self._grad2(i, t, xi, nu), float)

    def declared_constants(self, spec, horizon):
        if self._constants is not None:
            return dict(self._constants, estimated=False)
        return _sampled_constants(spec, horizon)


# ---------------------------------------------------------------------------
# problem


@dataclass(eq=False)
class ProblemSpec:
    """
    A complete problem instance.

    ``horizon`` is the number of decision rounds ``T``; losses are queried for
    ``0 <= t <= T + 1`` (one step past the horizon for the tracking update
    and the variation measures). ``horizon=None`` leaves ``t`` unbounded.
    """

    dims: list
    agg_dim: int
    sets: list
    psi: list
    losses: LossFamily
    horizon: int | None = None
    name: str = "custom"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.dims = [int(n) for n in self.dims]
        N = len(self.dims)
        if not (len(self.sets) == len(self.psi) == N):
            raise DimensionError("dims, sets and psi must all have length N")
        for i, (n, s, p) in enumerate(zip(self.dims, self.sets, self.psi)):
            if s.dim != n or p.input_dim != n or p.output_dim != self.agg_dim:
                raise DimensionError(f"agent {i}: inconsistent dimensions")
            if isinstance(p, Identity) and n != self.agg_dim:
                raise DimensionError("identity aggregation needs n_i = d")
        if self.losses.dims != self.dims or self.losses.agg_dim != self.agg_dim:
            raise DimensionError("loss family dimensions do not match the problem")
        self.offsets = np.cumsum([0] + self.dims)
        self.all_identity = all(isinstance(p, Identity) for p in self.psi)
        self.uniform = len(set(self.dims)) == 1
        if all(isinstance(s, Box) for s in self.sets):
            self._lower = np.concatenate([s.lower for s in self.sets])
            self._upper = np.concatenate([s.upper for s in self.sets])
        else:
            self._lower = self._upper = None

    @property
    def N(self) -> int:
        return len(self.dims)

    @property
    def n(self) -> int:
        return int(self.offsets[-1])

    @property
    def X(self) -> Product:
        return Product(self.sets)

    def split(self, x):
        return np.split(np.asarray(x, float), self.offsets[1:-1])

    def stack(self, blocks):
        return np.concatenate([np.atleast_1d(np.asarray(b, float)) for b in blocks])

    def check_time(self, t):
        if t < 0 or (self.horizon is not None and t > self.horizon + 1):
            raise IndexError(f"time index {t} outside [0, {self.horizon} + 1]")

    def check_x(self, x):
        x = np.asarray(x, float)
        if x.shape != (self.n,):
            raise DimensionError(f"stacked decision of shape {x.shape}, expected ({self.n},)")
        return x

    def project(self, x):
        """Projection onto ``X``, blockwise."""
        if self._lower is not None:
            return np.clip(x, self._lower, self._upper)
        return np.concatenate([s._project(xi) for s, xi in zip(self.sets, self.split(x))])

    def feasible(self, x, tol=1e-9) -> bool:
        return all(contains(s, xi, tol) for s, xi in zip(self.sets, self.split(x)))

    def psi_all(self, x):
        """``psi_i(x_i)`` for all agents, shape ``(N, d)``."""
        if self.all_identity:
            return x.reshape(self.N, self.agg_dim).copy()
        return np.stack([p.value(xi) for p, xi in zip(self.psi, self.split(x))])

    def psi_jacobians(self, x):
        return [p.jacobian(xi) for p, xi in zip(self.psi, self.split(x))]

    def psi_vjp_all(self, x, y, jacobians=None):
        """Stacked ``grad psi_i(x_i)^T y_i``."""
        if jacobians is None and self.all_identity:
            return y.reshape(-1).copy()
        if jacobians is None:
            jacobians = self.psi_jacobians(x)
        return np.concatenate([J.T @ yi for J, yi in zip(jacobians, y)])

    def declared_constants(self):
        """Declared ``G``, ``L1``, ``L2``, ``B`` for Assumption-style audits."""
        horizon = self.horizon if self.horizon is not None else 0
        c = self.losses.declared_constants(self, horizon)
        G_psi = max(p.G for p in self.psi)
        return {
            "G": float(max(c["G1"], c["G2"], G_psi)),
            "G1": float(c["G1"]),
            "G2": float(c["G2"]),
            "G_psi": float(G_psi),
            "L1": float(c["L1"]),
            "L2": float(max(p.L2 for p in self.psi)),
            "B": float(max(diameter_bound(s) for s in self.sets)),
            "estimated": bool(c["estimated"]),
        }


def aggregate(spec: ProblemSpec, x) -> np.ndarray:
    """``nu(x) = (1/N) sum_i psi_i(x_i)``."""
    x = spec.check_x(x)
    return spec.psi_all(x).mean(axis=0)


def global_loss(spec: ProblemSpec, t: int, x) -> float:
    """``f_t(x) = sum_i f_{i,t}(x_i, nu(x))``."""
    spec.check_time(t)
    x = spec.check_x(x)
    nu = np.tile(aggregate(spec, x), (spec.N, 1))
    return float(np.sum(spec.losses.values(t, x, nu)))


def grad1(spec: ProblemSpec, i: int, t: int, xi, nu) -> np.ndarray:
    """Partial gradient of ``f_{i,t}`` in the agent's own decision."""
    spec.check_time(t)
    if not 0 <= i < spec.N:
        raise IndexError(f"agent index {i} out of range")
    return spec.losses.grad1(i, t, np.asarray(xi, float), np.asarray(nu, float))


def grad2(spec: ProblemSpec, i: int, t: int, xi, nu) -> np.ndarray:
    """Partial gradient of ``f_{i,t}`` in the aggregative argument."""
    spec.check_time(t)
    if not 0 <= i < spec.N:
        raise IndexError(f"agent index {i} out of range")
    return spec.losses.grad2(i, t, np.asarray(xi, float), np.asarray(nu, float))


def full_gradient(spec: ProblemSpec, t: int, x) -> np.ndarray:
    """
    Gradient of ``f_t`` at the stacked point `x`.

    Block ``i`` is ``grad1 f_{i,t}(x_i, nu(x)) + grad psi_i(x_i)^T mean_j
    grad2 f_{j,t}(x_j, nu(x))``.
    """
    x = spec.check_x(x)
    nu = np.tile(spec.psi_all(x).mean(axis=0), (spec.N, 1))
    g2 = spec.losses.grad2_all(t, x, nu).mean(axis=0)
    return spec.losses.grad1_all(t, x, nu) + spec.psi_vjp_all(x, np.tile(g2, (spec.N, 1)))


# ---------------------------------------------------------------------------
# noise


@dataclass(frozen=True)
class NoiseModel:
    """
    Isotropic Gaussian gradient noise.

    `sigma1` applies to ``grad1`` and ``grad psi``, `sigma2` to ``grad2``. A
    gradient of dimension ``m`` gets i.i.d. components of variance
    ``sigma**2 / m``, so the expected squared noise norm is ``sigma**2``.
    """

    sigma1: float = 0.0
    sigma2: float = 0.0

    def __post_init__(self):
        if self.sigma1 < 0 or self.sigma2 < 0:
            raise ValueError("noise levels must be nonnegative")

    @classmethod
    def from_variances(cls, var1, var2):
        return cls(math.sqrt(var1), math.sqrt(var2))

    def sigma(self, which):
        if which in ("grad1", "grad_psi"):
            return self.sigma1
        if which == "grad2":
            return self.sigma2
        raise ValueError(f"unknown gradient kind {which!r}")


def rng_for(key) -> np.random.Generator:
    """Generator determined entirely by an integer key or tuple of integers."""
    if isinstance(key, np.random.Generator):
        return key
    if isinstance(key, (int, np.integer)):
        key = (int(key),)
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def noisy_gradient(rng_key, noise: NoiseModel, which: str, true_grad) -> np.ndarray:
    """Return ``true_grad + delta`` with zero-mean ``delta``, ``E||delta||^2 = sigma**2``."""
    g = np.asarray(true_grad, float)
    sigma = noise.sigma(which)
    if sigma == 0.0 or g.size == 0:
        return g.copy()
    delta = rng_for(rng_key).standard_normal(g.shape) * (sigma / math.sqrt(g.size))
    return g + delta


# ---------------------------------------------------------------------------
# built-in problems


def make_example1(set_: ConvexSet | None = None, horizon: int | None = None) -> ProblemSpec:
    """
    Two scalar agents, ``f_1 = x_1^2 + 4 nu^2`` and ``f_2 = (x_2 - 2)^2 + 4 nu^2``
    with ``nu = (x_1 + x_2) / 2``.
    """
    if set_ is None:
        set_ = Box([-10.0], [10.0])
    losses = QuadraticAggregative([1, 1], 1, q=[2.0, 2.0], r=[8.0, 8.0],
                                  centers=[0.0, 2.0], nu_targets=0.0)
    return ProblemSpec([1, 1], 1, [set_, set_], [Identity(1), Identity(1)], losses,
                       horizon=horizon, name="example1")


def make_target_surrounding(N, M, target_path=settling_target_path, intruder_paths=None,
                            smoothing="huber", epsilon=1e-3, cap=50.0, horizon=None) -> ProblemSpec:
    """
    Planar target surrounding: agent ``i`` watches intruder ``i`` while the
    swarm's mean position guards the target.

    `intruder_paths` is a list of ``M`` callables ``t -> R^2``; by default all
    intruders follow :func:`circling_intruder_path`.
    """
    if N != M:
        raise ValueError(f"target surrounding needs N == M, got N={N}, M={M}")
    if intruder_paths is None:
        intruder_paths = [circling_intruder_path] * M
    if len(intruder_paths) != M:
        raise ValueError("need one intruder path per intruder")
    losses = TargetSurrounding(target_path, intruder_paths, smoothing, epsilon)
    sets = [FullSpaceWithCap(2, cap) for _ in range(N)]
    return ProblemSpec([2] * N, 2, sets, [Identity(2) for _ in range(N)], losses,
                       horizon=horizon, name="target_surrounding",
                       meta={"smoothing": smoothing, "epsilon": epsilon, "cap": cap})


class _CircularDrift:
    """
    Shift ``w(t)`` on a circle of radius `radius` whose chord steps have
    length ``rate / sqrt(max(t, 1))``.
    """

    def __init__(self, rate, radius, dim):
        self.rate, self.radius, self.dim = float(rate), float(radius), int(dim)
        self._theta = np.zeros(1)

    def step_length(self, t):
        return self.rate / math.sqrt(max(t, 1))

    def _extend(self, t):
        k = len(self._theta)
        if t < k:
            return
        steps = np.array([self.step_length(s) for s in range(k - 1, t)])
        angles = 2 * np.arcsin(np.minimum(steps / (2 * self.radius), 1.0))
        self._theta = np.concatenate([self._theta, self._theta[-1] + np.cumsum(angles)])

    def __call__(self, t):
        self._extend(t)
        w = np.zeros(self.dim)
        th = self._theta[t]
        w[0] = self.radius * (math.cos(th) - 1.0)
        if self.dim > 1:
            w[1] = self.radius * math.sin(th)
        return w


def make_quadratic_synthetic(N, seed=0, drift_rate=1.0, dim=2, cap=10.0, radius=2.0,
                             horizon=None) -> ProblemSpec:
    """
    Quadratic problem whose minimizer drifts with stacked step length
    ``drift_rate / sqrt(t)``.

    Every target is translated by a common planar shift ``w(t)``; the loss is
    translation-equivariant, so ``x_t^* = x_0^* + 1 (x) w(t)``.
    """
    rng = np.random.default_rng(seed)
    q = rng.uniform(1.0, 2.0, N)
    r = rng.uniform(0.5, 1.5, N)
    c0 = rng.uniform(-2.0, 2.0, N * dim)
    e0 = rng.uniform(-1.0, 1.0, (N, dim))
    drift = _CircularDrift(drift_rate / math.sqrt(N), radius, dim)
    if drift_rate == 0:
        centers, targets = c0, e0
    else:
        centers = lambda t: c0 + np.tile(drift(t), N)
        targets = lambda t: e0 + drift(t)
    losses = QuadraticAggregative([dim] * N, dim, q, r, centers, targets)
    sets = [Box(np.full(dim, -cap), np.full(dim, cap)) for _ in range(N)]
    return ProblemSpec([dim] * N, dim, sets, [Identity(dim) for _ in range(N)], losses,
                       horizon=horizon, name="quadratic_synthetic",
                       meta={"seed": seed, "drift_rate": drift_rate, "cap": cap, "radius": radius})


def make_random_quadratic(N, seed=0, dim=2, cap=5.0, linear_psi=False, time_varying=True,
                          horizon=None) -> ProblemSpec:
    """Random quadratic instance, optionally with linear aggregation maps."""
    rng = np.random.default_rng(seed)
    q = rng.uniform(0.5, 2.0, N)
    r = rng.uniform(0.0, 2.0, N)
    c0 = rng.uniform(-3.0, 3.0, N * dim)
    e0 = rng.uniform(-2.0, 2.0, (N, dim))
    if time_varying:
        freq = rng.uniform(0.01, 0.2)
        centers = lambda t: c0 + math.sin(freq * t)
        targets = lambda t: e0 * math.cos(freq * t)
    else:
        centers, targets = c0, e0
    psi = [Linear(rng.uniform(-1, 1, (dim, dim))) if linear_psi else Identity(dim) for _ in range(N)]
    losses = QuadraticAggregative([dim] * N, dim, q, r, centers, targets)
    sets = [Box(np.full(dim, -cap), np.full(dim, cap)) for _ in range(N)]
    return ProblemSpec([dim] * N, dim, sets, psi, losses, horizon=horizon, name="random_quadratic")


# ---------------------------------------------------------------------------
# audits


def sample_feasible(spec: ProblemSpec, rng) -> np.ndarray:
    """A random feasible stacked point (uniform on boxes, radial on balls)."""
    blocks = []
    for s in spec.sets:
        blocks.append(_sample_set(s, rng))
    return np.concatenate(blocks)


def _sample_set(s, rng):
    if isinstance(s, Box):
        return rng.uniform(s.lower, s.upper)
    if isinstance(s, Product):
        return np.concatenate([_sample_set(c, rng) for c in s.components])
    u = rng.standard_normal(s.dim)
    u /= max(np.linalg.norm(u), 1e-300)
    return s.center + s.radius * rng.uniform() ** (1.0 / s.dim) * u


def check_gradients(spec: ProblemSpec, t: int = 0, n_points: int = 100, seed: int = 0,
                    h: float = 1e-6, rtol: float = 1e-5) -> float:
    """
    Compare analytic ``grad1``, ``grad2`` and ``psi`` Jacobians to central
    differences at random feasible points.

    Returns the worst relative error; raises AssertionError above `rtol`.
    Relative errors are taken against ``max(1, ||analytic||)``.
    """
    rng = np.random.default_rng(seed)
    losses = spec.losses
    worst = 0.0
    for _ in range(n_points):
        x = sample_feasible(spec, rng)
        nu_all = spec.psi_all(x) + rng.normal(0.0, 0.5, (spec.N, spec.agg_dim))
        for i, xi in enumerate(spec.split(x)):
            nu = nu_all[i]
            checks = [
                (losses.grad1(i, t, xi, nu), lambda v: losses.value(i, t, v, nu), xi),
                (losses.grad2(i, t, xi, nu), lambda v: losses.value(i, t, xi, v), nu),
            ]
            for analytic, f, at in checks:
                fd = np.array([(f(at + h * e) - f(at - h * e)) / (2 * h) for e in np.eye(len(at))])
                worst = max(worst, np.linalg.norm(analytic - fd) / max(1.0, np.linalg.norm(analytic)))
            J = spec.psi[i].jacobian(xi)
            fd = np.column_stack([(spec.psi[i].value(xi + h * e) - spec.psi[i].value(xi - h * e)) / (2 * h)
                                  for e in np.eye(len(xi))])
            worst = max(worst, np.linalg.norm(J - fd) / max(1.0, np.linalg.norm(J)))
    if worst > rtol:
        raise AssertionError(f"finite-difference mismatch {worst:.3e} exceeds {rtol:.1e}")
    return float(worst)


def audit_gradient_bounds(spec: ProblemSpec, n_points: int = 200, times: Sequence[int] = (0,),
                          seed: int = 0, G: float | None = None) -> dict:
    """
    Sample stacked gradient norms at feasible points and compare them with
    the declared ``G``. ``ok`` is False (and a warning logged) on any excess.
    """
    rng = np.random.default_rng(seed)
    if G is None:
        G = spec.declared_constants()["G"]
    seen = {"grad1": 0.0, "grad2": 0.0, "grad_psi": 0.0}
    for t in times:
        for _ in range(n_points):
            x = sample_feasible(spec, rng)
            nu = np.tile(spec.psi_all(x).mean(axis=0), (spec.N, 1))
            seen["grad1"] = max(seen["grad1"], float(np.linalg.norm(spec.losses.grad1_all(t, x, nu))))
            seen["grad2"] = max(seen["grad2"], float(np.linalg.norm(spec.losses.grad2_all(t, x, nu))))
            seen["grad_psi"] = max(seen["grad_psi"],
                                   max(float(np.linalg.norm(J, 2)) for J in spec.psi_jacobians(x)))
    ok = all(v <= G * (1 + 1e-12) for v in seen.values())
    if not ok:
        logger.warning("gradient bound audit failed: observed %s > declared G=%g", seen, G)
    return {"ok": ok, "G": G, "observed": seen}
