"""
Time-varying communication graphs.

A weight matrix ``A`` has ``A[i, j] > 0`` iff agent ``i`` receives from agent
``j`` (or ``i == j``). Schedules map a round ``t`` to the matrix used for the
mixing steps of that round.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

STOCHASTIC_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class WeightedDigraph:
    weights: np.ndarray

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.weights, float))
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ValueError("weight matrix must be square")
        W = W.copy()
        W.setflags(write=False)
        object.__setattr__(self, "weights", W)

    @property
    def N(self) -> int:
        return self.weights.shape[0]

    def edges(self):
        """Directed edges ``(j, i)`` meaning ``j`` sends to ``i``, excluding self-loops."""
        rows, cols = np.nonzero(self.weights > 0)
        return [(int(j), int(i)) for i, j in zip(rows, cols) if i != j]

    def min_positive(self) -> float:
        W = self.weights
        return float(W[W > 0].min()) if np.any(W > 0) else 0.0


class GraphSchedule:
    """Base schedule. ``a`` and ``Q`` are the declared constants being claimed."""

    a: float
    Q: int
    period: int | None = None

    def graph_at(self, t: int) -> WeightedDigraph:
        raise NotImplementedError

    @property
    def N(self) -> int:
        return self.graph_at(0).N

    def to_dict(self) -> dict:
        raise NotImplementedError


class StaticSchedule(GraphSchedule):
    def __init__(self, graph: WeightedDigraph, a: float | None = None, Q: int = 1):
        self.graph = graph if isinstance(graph, WeightedDigraph) else WeightedDigraph(graph)
        self.a = float(a) if a is not None else _default_a(self.graph.min_positive())
        self.Q = int(Q)
        self.period = 1

    def graph_at(self, t):
        return self.graph

    def to_dict(self):
        return {"schedule": "static", "a": self.a, "Q": self.Q,
                "matrices": [self.graph.weights.tolist()]}


class CyclicSchedule(GraphSchedule):
    def __init__(self, graphs: Sequence, a: float | None = None, Q: int | None = None):
        if len(graphs) == 0:
            raise ValueError("cyclic schedule needs at least one graph")
        self.graphs = [g if isinstance(g, WeightedDigraph) else WeightedDigraph(g) for g in graphs]
        if len({g.N for g in self.graphs}) != 1:
            raise ValueError("all graphs in a schedule must have the same node count")
        self.period = len(self.graphs)
        self.a = float(a) if a is not None else _default_a(min(g.min_positive() for g in self.graphs))
        self.Q = int(Q) if Q is not None else self.period

    def graph_at(self, t):
        return self.graphs[t % self.period]

    def to_dict(self):
        return {"schedule": "cyclic", "a": self.a, "Q": self.Q,
                "matrices": [g.weights.tolist() for g in self.graphs]}


class GeneratedSchedule(GraphSchedule):
    """
    Random schedule re-derived from ``(seed, t)``.

    A connected base graph is drawn from `seed` and its edges split into `Q`
    groups; round ``t`` activates group ``t mod Q`` plus every other base
    edge independently with probability `p_extra`. Weights are Metropolis
    weights, so ``a = 1/N`` is always valid.
    """

    def __init__(self, N: int, Q: int, seed: int, p_extra: float = 0.2, extra_edges: int = 0):
        self.N_, self.Q, self.seed, self.p_extra = int(N), int(Q), int(seed), float(p_extra)
        self.extra_edges = int(extra_edges)
        base = _random_connected_edges(self.N_, self.seed, self.extra_edges)
        self.groups = _split_edges(base, self.Q, self.seed)
        self.base = base
        self.a = 1.0 / self.N_

    @property
    def N(self):
        return self.N_

    def graph_at(self, t):
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, int(t)]))
        active = set(self.groups[t % self.Q])
        coin = rng.uniform(size=len(self.base))
        active.update(e for e, c in zip(self.base, coin) if c < self.p_extra)
        return metropolis_weights(sorted(active), self.N_)

    def to_dict(self):
        return {"schedule": "generated", "N": self.N_, "Q": self.Q, "seed": self.seed,
                "p_extra": self.p_extra, "a": self.a}


def _default_a(min_positive):
    # a must lie in (0, 1); any value below the smallest weight is valid
    return min_positive if min_positive < 1 else 0.5


def graph_at(schedule: GraphSchedule, t: int) -> WeightedDigraph:
    """Graph used in round `t`."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    return schedule.graph_at(int(t))


# ---------------------------------------------------------------------------
# construction


def metropolis_weights(edges: Iterable, N: int, min_self_weight: float = 0.0) -> WeightedDigraph:
    """
    Metropolis-Hastings weights on an undirected graph.

    Parameters
    ----------
    edges : iterable of (i, j)
        Undirected edges; each pair may be listed once or in both directions.
        Self-loops are not allowed.
    N : int
        Number of nodes.
    min_self_weight : float, optional
        Construction fails if some diagonal weight falls below this value.

    Returns
    -------
    WeightedDigraph
        Symmetric, doubly stochastic weights.
    """
    und = set()
    for i, j in edges:
        i, j = int(i), int(j)
        if i == j:
            raise ValueError("self-loops must not be listed")
        if not (0 <= i < N and 0 <= j < N):
            raise ValueError(f"edge ({i}, {j}) out of range for N={N}")
        und.add((min(i, j), max(i, j)))
    deg = np.zeros(N, dtype=int)
    for i, j in und:
        deg[i] += 1
        deg[j] += 1
    W = np.zeros((N, N))
    for i, j in und:
        W[i, j] = W[j, i] = 1.0 / (1 + max(deg[i], deg[j]))
    W[np.diag_indices(N)] = 1.0 - W.sum(axis=1)
    if np.any(np.diag(W) < min_self_weight):
        raise ValueError(f"self weight {np.diag(W).min():.3g} below required {min_self_weight:.3g}")
    return WeightedDigraph(W)


def _random_connected_edges(N, seed, extra=0):
    """Random spanning tree on ``N`` nodes plus `extra` random chords."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EED]))
    order = rng.permutation(N)
    edges = set()
    for k in range(1, N):
        parent = order[rng.integers(0, k)]
        a, b = int(order[k]), int(parent)
        edges.add((min(a, b), max(a, b)))
    tries = 0
    while extra > 0 and tries < 100 * (extra + 1) and N > 2:
        a, b = (int(v) for v in rng.choice(N, 2, replace=False))
        e = (min(a, b), max(a, b))
        tries += 1
        if e not in edges:
            edges.add(e)
            extra -= 1
    return sorted(edges)


def _split_edges(edges, Q, seed):
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x9A47]))
    shuffled = [edges[k] for k in rng.permutation(len(edges))]
    return [shuffled[k::Q] for k in range(Q)]


def make_q_cyclic_schedule(N: int, Q: int, seed: int = 0, extra_edges: int = 0) -> CyclicSchedule:
    """
    Period-`Q` schedule that is Q-strongly connected by construction.

    The edges of a random connected graph are dealt into `Q` groups; round
    ``t`` uses the Metropolis weights of group ``t mod Q``.
    """
    if N < 1 or Q < 1:
        raise ValueError("need N >= 1 and Q >= 1")
    groups = _split_edges(_random_connected_edges(N, seed, extra_edges), Q, seed)
    graphs = [metropolis_weights(g, N) for g in groups]
    return CyclicSchedule(graphs, Q=Q)


def complete_graph(N: int) -> WeightedDigraph:
    return WeightedDigraph(np.full((N, N), 1.0 / N))


def path_edges(N: int):
    return [(i, i + 1) for i in range(N - 1)]


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    doubly_stochastic: bool = True
    min_weight: bool = True
    connectivity: bool = True
    #: ``(t, category, detail)`` of the first violation found
    first_violation: tuple | None = None
    checked_rounds: int = 0
    a: float = 0.0
    Q: int = 1
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.doubly_stochastic and self.min_weight and self.connectivity

    def _fail(self, t, category, detail):
        setattr(self, category, False)
        self.violations.append((t, category, detail))
        if self.first_violation is None:
            self.first_violation = (t, category, detail)

    def to_dict(self):
        return {
            "ok": self.ok,
            "doubly_stochastic": self.doubly_stochastic,
            "min_weight": self.min_weight,
            "connectivity": self.connectivity,
            "first_violation": list(self.first_violation) if self.first_violation else None,
            "checked_rounds": self.checked_rounds,
            "a": self.a,
            "Q": self.Q,
        }

    def __str__(self):
        mark = lambda b: "pass" if b else "FAIL"
        rows = [
            ("doubly stochastic", mark(self.doubly_stochastic)),
            (f"minimum weight a={self.a:.6g}", mark(self.min_weight)),
            (f"{self.Q}-strong connectivity", mark(self.connectivity)),
            ("rounds checked", str(self.checked_rounds)),
        ]
        if self.first_violation:
            t, cat, detail = self.first_violation
            rows.append(("first violation", f"t={t} [{cat}] {detail}"))
        width = max(len(k) for k, _ in rows)
        lines = [f"{k:<{width}} : {v}" for k, v in rows]
        return "\n".join(lines)


def strongly_connected(adjacency) -> bool:
    """True iff the directed graph with boolean `adjacency` has one SCC."""
    n = adjacency.shape[0]
    if n <= 1:
        return True
    ncomp, _ = connected_components(np.asarray(adjacency, dtype=np.int8), directed=True,
                                    connection="strong")
    return ncomp == 1


def validate_schedule(schedule: GraphSchedule, window: int | None = None) -> ValidationReport:
    """
    Check the schedule against the graph assumptions.

    Parameters
    ----------
    schedule : GraphSchedule
    window : int, optional
        Number of window start times ``k`` probed for Q-strong connectivity.
        Defaults to one full period for periodic schedules and 100 rounds
        for generated ones; never less than one period.

    Returns
    -------
    ValidationReport
        Violations are report content, not exceptions.
    """
    Q, a = int(schedule.Q), float(schedule.a)
    if window is None:
        window = schedule.period if schedule.period else 100
    if window < 1:
        raise ValueError("window must be >= 1")
    if schedule.period:
        window = max(window, schedule.period)
    rep = ValidationReport(a=a, Q=Q)
    if not 0 < a < 1 and schedule.N > 1:
        rep._fail(0, "min_weight", f"declared a={a} not in (0, 1)")
    horizon = window + Q - 1
    graphs = [graph_at(schedule, t) for t in range(horizon)]
    rep.checked_rounds = horizon
    for t, g in enumerate(graphs):
        W = g.weights
        if np.any(W < 0) or np.any(W > 1 + STOCHASTIC_TOL):
            rep._fail(t, "doubly_stochastic", "entries outside [0, 1]")
        rows, cols = W.sum(axis=1), W.sum(axis=0)
        bad_r = np.flatnonzero(np.abs(rows - 1) > STOCHASTIC_TOL)
        bad_c = np.flatnonzero(np.abs(cols - 1) > STOCHASTIC_TOL)
        if bad_r.size:
            rep._fail(t, "doubly_stochastic", f"row {bad_r[0]} sums to {rows[bad_r[0]]:.12g}")
        if bad_c.size:
            rep._fail(t, "doubly_stochastic", f"column {bad_c[0]} sums to {cols[bad_c[0]]:.12g}")
        diag = np.diag(W)
        pos = W[W > 0]
        if np.any(diag < a):
            i = int(np.argmin(diag))
            rep._fail(t, "min_weight", f"self weight a_{i}{i}={diag[i]:.6g} < a={a:.6g}")
        elif pos.size and pos.min() < a:
            rep._fail(t, "min_weight", f"positive weight {pos.min():.6g} < a={a:.6g}")
    for k in range(window):
        union = np.zeros((schedule.N, schedule.N), dtype=bool)
        for g in graphs[k:k + Q]:
            union |= g.weights > 0
        if not strongly_connected(union):
            rep._fail(k, "connectivity", f"union of rounds {k}..{k + Q - 1} not strongly connected")
            break
    return rep


# ---------------------------------------------------------------------------
# mixing


def mix(graph: WeightedDigraph, values) -> np.ndarray:
    """
    One consensus step: block ``i`` of the output is ``sum_j a_ij values_j``.

    `values` is an ``(N, d)`` array (or length-``N`` vector).
    """
    values = np.asarray(values, float)
    if values.shape[0] != graph.N:
        raise ValueError(f"{values.shape[0]} blocks for a graph on {graph.N} nodes")
    return graph.weights @ values


def schedule_from_dict(desc: dict) -> GraphSchedule:
    """Build a schedule from its config record (see docs/formats.md)."""
    desc = dict(desc)
    kind = desc.pop("schedule", desc.pop("kind", None))
    a = desc.pop("a", None)
    if kind == "q_cyclic":
        out = make_q_cyclic_schedule(int(desc.pop("N")), int(desc.pop("Q", 1)), int(desc.pop("seed", 0)),
                                     int(desc.pop("extra_edges", 0)))
        if a is not None:
            out.a = float(a)
    elif kind == "generated":
        out = GeneratedSchedule(int(desc.pop("N")), int(desc.pop("Q", 1)), int(desc.pop("seed", 0)),
                                float(desc.pop("p_extra", 0.2)), int(desc.pop("extra_edges", 0)))
        if a is not None:
            out.a = float(a)
    elif kind in ("static", "cyclic"):
        N = desc.pop("N", None)
        matrices = desc.pop("matrices", None)
        edges = desc.pop("edges", None)
        Q = desc.pop("Q", None)
        if matrices is None:
            if N is None:
                raise ValueError(f"{kind} schedule needs N with edges, or matrices")
            edges = edges if edges is not None else path_edges(int(N))
            # an edge list for a cyclic schedule is one list per round
            if kind == "cyclic":
                matrices = [metropolis_weights(e, int(N)).weights for e in edges]
            else:
                matrices = [metropolis_weights(edges, int(N)).weights]
        if kind == "static":
            if len(matrices) != 1 and np.asarray(matrices).ndim == 3:
                raise ValueError("static schedule takes exactly one matrix")
            mat = matrices[0] if np.asarray(matrices).ndim == 3 else matrices
            out = StaticSchedule(WeightedDigraph(mat), a=a, Q=int(Q) if Q is not None else 1)
        else:
            out = CyclicSchedule([WeightedDigraph(m) for m in matrices], a=a, Q=Q)
        if N is not None and out.N != int(N):
            raise ValueError(f"matrices are {out.N}x{out.N} but N={N}")
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    if desc:
        raise ValueError(f"unknown schedule keys: {sorted(desc)}")
    return out
