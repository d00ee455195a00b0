"""Closed convex feasible sets with closed-form Euclidean projections."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError


_BOUNDARY_ULPS = 8


def _as_point(x, d: int | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ParameterError(f"expected a 1-D point, got shape {x.shape}")
    if d is not None and x.shape[0] != d:
        raise ParameterError(f"dimension mismatch: expected {d}, got {x.shape[0]}")
    return x


class ConvexSet:
    """Base class. Subclasses implement ``project`` and ``project_batch``."""

    kind = "abstract"
    d: int | None = None

    def project(self, x) -> np.ndarray:
        raise NotImplementedError

    def project_batch(self, X: np.ndarray) -> np.ndarray:
        """Project every row of an ``(m, d)`` array."""
        raise NotImplementedError

    def diameter(self) -> float:
        raise NotImplementedError

    def contains(self, x, tol: float = 1e-12) -> bool:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, m: int) -> np.ndarray:
        """Draw ``m`` points uniformly from the set."""
        raise ParameterError(f"cannot sample uniformly from {self.kind}")

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class FullSpace(ConvexSet):
    d: int | None = None
    kind = "full_space"

    def project(self, x):
        return _as_point(x, self.d)

    def project_batch(self, X):
        return np.asarray(X, dtype=float)

    def diameter(self):
        return math.inf

    def contains(self, x, tol=1e-12):
        return bool(np.all(np.isfinite(_as_point(x, self.d))))

    def to_dict(self):
        return {"kind": "full_space"}


@dataclass(frozen=True, eq=False)
class Ball(ConvexSet):
    center: np.ndarray = field(default=None)
    radius: float = 1.0
    kind = "ball"

    def __post_init__(self):
        if not self.radius > 0 or not math.isfinite(self.radius):
            raise ParameterError(f"ball radius must be positive and finite, got {self.radius}")
        if self.center is None:
            raise ParameterError("ball needs a center; use Ball.centered(d, radius)")
        c = _as_point(self.center).copy()
        c.setflags(write=False)
        object.__setattr__(self, "center", c)

    @classmethod
    def centered(cls, d: int, radius: float) -> Ball:
        return cls(np.zeros(d), float(radius))

    @property
    def d(self):
        return self.center.shape[0]

    @property
    def _boundary(self):
        # a rescaled point can land a few ulps outside r; treating those as members keeps
        # projection exactly idempotent
        return self.radius * (1.0 + _BOUNDARY_ULPS * np.finfo(float).eps)

    def project(self, x):
        x = _as_point(x, self.d)
        v = x - self.center
        nrm = np.sqrt(np.sum(v * v))
        if nrm <= self._boundary:
            return x
        return self.center + v * (self.radius / nrm)

    def project_batch(self, X):
        X = np.asarray(X, dtype=float)
        V = X - self.center
        nrm = np.sqrt(np.sum(V * V, axis=1))
        out = X.copy()
        outside = nrm > self._boundary
        if np.any(outside):
            out[outside] = self.center + V[outside] * (self.radius / nrm[outside])[:, None]
        return out

    def diameter(self):
        return 2.0 * self.radius

    def contains(self, x, tol=1e-12):
        v = _as_point(x, self.d) - self.center
        return float(np.linalg.norm(v)) <= self.radius * (1.0 + tol)

    def sample(self, rng, m):
        d = self.d
        g = rng.standard_normal((m, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        u = rng.random(m) ** (1.0 / d)
        return self.center + g * (self.radius * u)[:, None]

    def to_dict(self):
        out = {"kind": "ball", "radius": self.radius}
        if np.any(self.center != 0):
            out["center"] = self.center.tolist()
        return out


@dataclass(frozen=True, eq=False)
class Box(ConvexSet):
    lower: np.ndarray = field(default=None)
    upper: np.ndarray = field(default=None)
    kind = "box"

    def __post_init__(self):
        lo = _as_point(self.lower).copy()
        hi = _as_point(self.upper, lo.shape[0]).copy()
        if np.any(lo > hi) or not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ParameterError("box requires finite bounds with lower <= upper coordinatewise")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def d(self):
        return self.lower.shape[0]

    def project(self, x):
        return np.clip(_as_point(x, self.d), self.lower, self.upper)

    def project_batch(self, X):
        return np.clip(np.asarray(X, dtype=float), self.lower, self.upper)

    def diameter(self):
        return float(np.linalg.norm(self.upper - self.lower))

    def contains(self, x, tol=1e-12):
        x = _as_point(x, self.d)
        slack = tol * (1.0 + np.abs(self.upper - self.lower))
        return bool(np.all(x >= self.lower - slack) and np.all(x <= self.upper + slack))

    def sample(self, rng, m):
        return self.lower + (self.upper - self.lower) * rng.random((m, self.d))

    def to_dict(self):
        return {"kind": "box", "lower": self.lower.tolist(), "upper": self.upper.tolist()}


def project(s: ConvexSet, x) -> np.ndarray:
    return s.project(x)


def diameter(s: ConvexSet) -> float:
    """Diameter of ``s``; ``math.inf`` when unbounded."""
    return s.diameter()


def set_from_dict(desc: dict, d: int) -> ConvexSet:
    """Build a set from a config descriptor such as ``{"kind": "ball", "radius": 5}``."""
    kind = desc.get("kind")
    if kind == "full_space":
        return FullSpace(d)
    if kind == "ball":
        center = desc.get("center")
        center = np.zeros(d) if center is None else np.asarray(center, dtype=float)
        return Ball(_as_point(center, d), float(desc["radius"]))
    if kind == "box":
        lower = desc["lower"]
        upper = desc["upper"]
        if np.isscalar(lower):
            lower = [lower] * d
        if np.isscalar(upper):
            upper = [upper] * d
        return Box(_as_point(lower, d), _as_point(upper, d))
    raise ParameterError(f"unknown set kind {kind!r}")
