"""
Closed convex sets and Euclidean projections.

Every set here is nonempty, convex and bounded, so projections are unique
and the norm bound returned by :func:`diameter_bound` is finite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np


class DimensionError(ValueError):
    """Raised when a point does not match the dimension of a set."""


def _check_dim(set_, point):
    point = np.asarray(point, dtype=float)
    if point.ndim != 1 or point.shape[0] != set_.dim:
        raise DimensionError(
            f"point of shape {point.shape} does not match set dimension {set_.dim}"
        )
    return point


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned box ``{x : lower <= x <= upper}``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("lower and upper must be 1-D arrays of equal length")
        if np.any(lower > upper):
            raise ValueError("box requires lower <= upper componentwise")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def _project(self, x):
        return np.clip(x, self.lower, self.upper)

    def _violation(self, x):
        return float(np.linalg.norm(np.maximum(self.lower - x, 0) + np.maximum(x - self.upper, 0)))

    def _bound(self):
        return float(np.linalg.norm(np.maximum(np.abs(self.lower), np.abs(self.upper))))

    def to_dict(self):
        return {"kind": "box", "lower": self.lower.tolist(), "upper": self.upper.tolist()}


class FullSpaceWithCap(Box):
    """Stand-in for an unconstrained ``R^dim``: the box ``[-cap, cap]^dim``."""

    def __init__(self, dim: int = 1, cap: float = 50.0):
        if cap <= 0:
            raise ValueError("cap must be positive")
        super().__init__(np.full(int(dim), -float(cap)), np.full(int(dim), float(cap)))
        object.__setattr__(self, "cap", float(cap))

    def __repr__(self):
        return f"FullSpaceWithCap(dim={self.dim}, cap={self.cap})"

    def to_dict(self):
        return {"kind": "cap", "dim": self.dim, "cap": self.cap}


@dataclass(frozen=True, eq=False)
class Ball:
    """Closed Euclidean ball."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        center = np.atleast_1d(np.asarray(self.center, dtype=float))
        if center.ndim != 1:
            raise ValueError("center must be a 1-D array")
        if self.radius < 0:
            raise ValueError("radius must be nonnegative")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def _project(self, x):
        r = x - self.center
        dist = np.linalg.norm(r)
        if dist <= self.radius:
            return x.copy()
        return self.center + r * (self.radius / dist)

    def _violation(self, x):
        return max(float(np.linalg.norm(x - self.center)) - self.radius, 0.0)

    def _bound(self):
        return float(np.linalg.norm(self.center)) + self.radius

    def to_dict(self):
        return {"kind": "ball", "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class Product:
    """Cartesian product; points are the concatenation of component points."""

    components: tuple

    def __init__(self, components: Sequence["ConvexSet"]):
        if len(components) == 0:
            raise ValueError("product of zero sets")
        object.__setattr__(self, "components", tuple(components))

    @property
    def dim(self) -> int:
        return sum(c.dim for c in self.components)

    @property
    def offsets(self) -> np.ndarray:
        return np.cumsum([0] + [c.dim for c in self.components])

    def _split(self, x):
        return np.split(x, self.offsets[1:-1])

    def _project(self, x):
        return np.concatenate([c._project(xi) for c, xi in zip(self.components, self._split(x))])

    def _violation(self, x):
        # per-constraint: the worst component violation
        return max(c._violation(xi) for c, xi in zip(self.components, self._split(x)))

    def _bound(self):
        return float(np.sqrt(sum(c._bound() ** 2 for c in self.components)))

    def to_dict(self):
        return {"kind": "product", "components": [c.to_dict() for c in self.components]}


ConvexSet = Union[Box, FullSpaceWithCap, Ball, Product]


def project(set_: ConvexSet, point) -> np.ndarray:
    """
    Euclidean projection of `point` onto `set_`.

    Parameters
    ----------
    set_ : ConvexSet
        Target set.
    point : array_like
        Point of dimension ``set_.dim``.

    Returns
    -------
    ndarray
        The unique nearest point of the set.
    """
    return set_._project(_check_dim(set_, point))


def contains(set_: ConvexSet, point, tol: float = 1e-9) -> bool:
    """True iff `point` violates the set description by at most `tol`."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    return set_._violation(_check_dim(set_, point)) <= tol


def diameter_bound(set_: ConvexSet) -> float:
    """A constant ``B`` with ``||x|| <= B`` for every ``x`` in the set."""
    return set_._bound()


def set_from_dict(desc: dict, dim: int | None = None) -> ConvexSet:
    """
    Build a set from its tagged-record description.

    ``{"kind": "box", "lower": [...], "upper": [...]}``,
    ``{"kind": "ball", "center": [...], "radius": r}``,
    ``{"kind": "product", "components": [...]}`` or
    ``{"kind": "cap", "cap": c, "dim": k}``. Scalar ``lower``/``upper`` and a
    missing ``dim`` are broadcast to `dim` when it is given.
    """
    desc = dict(desc)
    kind = desc.pop("kind", None)
    if kind == "box":
        lower, upper = desc.pop("lower"), desc.pop("upper")
        if dim is not None:
            lower = np.broadcast_to(np.asarray(lower, float), (dim,))
            upper = np.broadcast_to(np.asarray(upper, float), (dim,))
        out = Box(lower, upper)
    elif kind == "ball":
        center = desc.pop("center", None)
        if center is None:
            center = np.zeros(dim or 1)
        out = Ball(np.asarray(center, float), desc.pop("radius"))
    elif kind == "cap":
        out = FullSpaceWithCap(desc.pop("dim", dim or 1), desc.pop("cap", 50.0))
    elif kind == "product":
        out = Product([set_from_dict(c) for c in desc.pop("components")])
    else:
        raise ValueError(f"unknown set kind {kind!r}")
    if desc:
        raise ValueError(f"unknown keys for {kind} set: {sorted(desc)}")
    if dim is not None and out.dim != dim:
        raise DimensionError(f"set has dimension {out.dim}, expected {dim}")
    return out
