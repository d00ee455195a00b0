"""Finite-sum objectives ``F(x) = (1/n) sum_i f(x; i)`` with certified constants.

Each problem carries

* ``G``  -- bound on every component gradient over the feasible ball,
* ``L``  -- smoothness of every component,
* ``mu`` -- strong convexity of ``F`` (0 when absent),

together with its minimiser ``x_star`` over the feasible ball and ``F_star``.
Component indices are 1-based throughout the public API.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ParameterError, RankDeficiencyError, UnsupportedQueryError
from .geometry import Ball, ConvexSet, FullSpace, _as_point
from .sampler import RandomStream


@dataclass(frozen=True)
class SuboptimalityRecord:
    value: float
    distance_sq: float


class FiniteSumProblem:
    """Base class for a finite sum of smooth convex components.

    Subclasses supply the per-component oracles ``_value``/``_grad`` (0-based,
    unchecked) and their row-batched versions. Instances are immutable once
    built; evaluation is read-only and safe to share between threads.
    """

    kind = "abstract"

    n: int
    d: int
    G: float
    L: float
    mu: float
    radius: float
    x_star: np.ndarray | None = None
    F_star: float | None = None
    seed: int | None = None

    # -- oracles to implement -------------------------------------------------
    def _value(self, j: int, x: np.ndarray) -> float:
        raise NotImplementedError

    def _grad(self, j: int, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def values_batch(self, idx: np.ndarray, X: np.ndarray) -> np.ndarray:
        """``f(X[s]; idx[s])`` for each row ``s``; ``idx`` is 1-based."""
        raise NotImplementedError

    def grads_batch(self, idx: np.ndarray, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def full_values_batch(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def full_grads_batch(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # -- public scalar API ----------------------------------------------------
    @property
    def kappa(self) -> float:
        return self.L / self.mu if self.mu > 0 else math.inf

    @property
    def feasible_set(self) -> ConvexSet:
        if math.isinf(self.radius):
            return FullSpace(self.d)
        return Ball.centered(self.d, self.radius)

    def _check_index(self, i: int) -> int:
        if not 1 <= i <= self.n:
            raise ParameterError(f"component index {i} outside 1..{self.n}")
        return i - 1

    def component_value(self, i: int, x) -> float:
        return self._value(self._check_index(i), _as_point(x, self.d))

    def grad_component(self, i: int, x) -> np.ndarray:
        return self._grad(self._check_index(i), _as_point(x, self.d))

    def _full_value(self, x: np.ndarray) -> float:
        return float(self.full_values_batch(x[None, :])[0])

    def _full_grad(self, x: np.ndarray) -> np.ndarray:
        return self.full_grads_batch(x[None, :])[0]

    def value(self, x) -> float:
        return self._full_value(_as_point(x, self.d))

    def full_grad(self, x) -> np.ndarray:
        return self._full_grad(_as_point(x, self.d))

    # -- serialisation --------------------------------------------------------
    def params(self) -> dict:
        return {}

    def descriptor(self) -> dict:
        return {
            "kind": self.kind,
            "n": self.n,
            "d": self.d,
            "seed": self.seed,
            "constants": {"G": self.G, "L": self.L, "mu": self.mu, "kappa": self.kappa},
            "radius": self.radius,
            **self.params(),
        }

    def __repr__(self):
        return (f"{type(self).__name__}(n={self.n}, d={self.d}, G={self.G:.4g}, "
                f"L={self.L:.4g}, mu={self.mu:.4g})")


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def projected_gradient_norm(problem: FiniteSumProblem, x, feasible: ConvexSet | None = None) -> float:
    """Norm of the gradient mapping ``L (x - P(x - grad F(x) / L))``."""
    feasible = problem.feasible_set if feasible is None else feasible
    x = _as_point(x, problem.d)
    g = problem.full_grad(x)
    return float(np.linalg.norm(x - feasible.project(x - g / problem.L)) * problem.L)


def _minimize_over(problem: FiniteSumProblem, feasible: ConvexSet, x0: np.ndarray,
                   tol: float, max_iter: int = 500_000) -> np.ndarray:
    # projected gradient with step 1/L; L bounds the smoothness of F
    x = feasible.project(x0)
    step = 1.0 / problem.L
    for _ in range(max_iter):
        x_new = feasible.project(x - step * problem.full_grad(x))
        if np.linalg.norm(x_new - x) * problem.L <= tol:
            return x_new
        x = x_new
    return x


# ---------------------------------------------------------------------------
# least squares
# ---------------------------------------------------------------------------

class LeastSquaresProblem(FiniteSumProblem):
    """Components ``f(x; i) = 0.5 * (<a_i, x> - b_i)^2``."""

    kind = "least_squares"

    def __init__(self, A, b, radius: float, *, seed=None, kappa_target=None, noise=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).ravel()
        if A.shape[0] != b.shape[0]:
            raise ParameterError(f"A has {A.shape[0]} rows but b has {b.shape[0]} entries")
        if not radius > 0:
            raise ParameterError(f"radius must be positive, got {radius}")
        self._A = _readonly(A)
        self._b = _readonly(b)
        self.n, self.d = A.shape
        self.radius = float(radius)
        self.seed = seed
        self.kappa_target = kappa_target
        self.noise = noise

        row_norms = np.linalg.norm(A, axis=1)
        gram = A.T @ A / self.n
        eig = np.linalg.eigvalsh(gram)
        self.gram_eigenvalues = _readonly(eig)
        self.L = float(np.max(row_norms ** 2))
        self.mu = max(float(eig[0]), 0.0)
        if self.mu <= 1e-13 * max(float(eig[-1]), 1e-300):
            self.mu = 0.0
        if math.isinf(self.radius):
            self.G = math.inf
        else:
            self.G = float(np.max(row_norms * (self.radius * row_norms + np.abs(b))))
        if not self.L > 0:
            raise ParameterError("all rows are zero; smoothness constant would be 0")

        if self.mu > 0:
            x_unc = np.linalg.solve(A.T @ A, A.T @ b)
        else:
            x_unc = np.linalg.lstsq(A, b, rcond=None)[0]
        feasible = self.feasible_set
        if feasible.contains(x_unc, tol=0.0):
            x_star = x_unc
        else:
            x_star = _minimize_over(self, feasible, x_unc, tol=1e-13 * max(self.G, 1.0))
        self.x_star = _readonly(x_star)
        self.F_star = self.value(self.x_star)

    @property
    def A(self):
        return self._A

    @property
    def b(self):
        return self._b

    @property
    def gram_condition(self) -> float:
        """``lambda_max / lambda_min`` of the averaged Gram matrix."""
        lo = self.gram_eigenvalues[0]
        return float(self.gram_eigenvalues[-1] / lo) if lo > 0 else math.inf

    def _value(self, j, x):
        r = self._A[j] @ x - self._b[j]
        return 0.5 * r * r

    def _grad(self, j, x):
        a = self._A[j]
        return a * (a @ x - self._b[j])

    def values_batch(self, idx, X):
        rows = self._A[np.asarray(idx) - 1]
        r = np.sum(rows * X, axis=1) - self._b[np.asarray(idx) - 1]
        return 0.5 * r * r

    def grads_batch(self, idx, X):
        idx0 = np.asarray(idx) - 1
        rows = self._A[idx0]
        r = np.sum(rows * X, axis=1) - self._b[idx0]
        return rows * r[:, None]

    def full_values_batch(self, X):
        R = np.atleast_2d(X) @ self._A.T - self._b
        return 0.5 * np.mean(R * R, axis=1)

    def full_grads_batch(self, X):
        R = np.atleast_2d(X) @ self._A.T - self._b
        return R @ self._A / self.n

    def params(self):
        out = {}
        if self.kappa_target is not None:
            out["kappa_target"] = self.kappa_target
        if self.noise is not None:
            out["noise"] = self.noise
        if getattr(self, "rank", None) is not None:
            out["rank"] = self.rank
        out["gram_condition"] = self.gram_condition
        return out


def make_least_squares(n: int, d: int, kappa_target: float, radius: float, seed: int,
                       noise: float = 0.1, rank: int | None = None) -> LeastSquaresProblem:
    """Random least squares whose averaged Gram matrix has condition ``kappa_target``.

    Gaussian rows are re-spectralised so the Gram eigenvalues are geometrically
    spaced on ``[1, kappa_target]``. Targets are ``b = A x_true + noise * z``
    with ``||x_true|| = radius / 2``, which keeps the optimum inside the ball for
    moderate noise.

    ``rank < d`` zeroes the trailing ``d - rank`` eigenvalues, giving a convex
    but not strongly convex problem (``mu = 0``); ``kappa_target`` then spans
    the nonzero part of the spectrum.
    """
    if n < 1 or d < 1:
        raise ParameterError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    if not kappa_target >= 1 or not math.isfinite(kappa_target):
        raise ParameterError(f"kappa_target must be finite and >= 1, got {kappa_target}")
    rank = d if rank is None else int(rank)
    if not 1 <= rank <= d:
        raise ParameterError(f"rank must be in 1..{d}, got {rank}")
    if rank == 1 and kappa_target != 1:
        raise ParameterError("a 1-D Gram spectrum always has condition 1")
    if rank > n:
        raise RankDeficiencyError(f"rank {rank} > n={n}: averaged Gram matrix is singular")
    if not radius > 0:
        raise ParameterError(f"radius must be positive, got {radius}")

    rng = RandomStream(seed, 0).generator()
    A0 = rng.standard_normal((n, d))
    U, _, Vt = np.linalg.svd(A0, full_matrices=False)
    lam = np.zeros(min(n, d))
    lam[:rank] = np.geomspace(1.0, kappa_target, rank) if rank > 1 else 1.0
    A = U @ np.diag(np.sqrt(n * lam)) @ Vt

    direction = rng.standard_normal(d)
    x_true = direction / np.linalg.norm(direction) * (radius / 2.0)
    b = A @ x_true + noise * rng.standard_normal(n)
    out = LeastSquaresProblem(A, b, radius, seed=seed, kappa_target=kappa_target, noise=noise)
    if rank < d:
        out.rank = rank
    return out


def least_squares_from_data(A, b, radius: float = math.inf) -> LeastSquaresProblem:
    """Wrap explicit data; with the default unbounded radius ``G`` is infinite."""
    return LeastSquaresProblem(A, b, radius)


# ---------------------------------------------------------------------------
# regularised logistic regression
# ---------------------------------------------------------------------------

class LogisticProblem(FiniteSumProblem):
    """Components ``log(1 + exp(-y_i <a_i, x>)) + (lam / 2) ||x||^2``."""

    kind = "logistic"

    def __init__(self, A, y, lam: float, radius: float, *, seed=None):
        if not lam > 0:
            raise ParameterError(f"lambda must be positive, got {lam}")
        if not radius > 0:
            raise ParameterError(f"radius must be positive, got {radius}")
        A = np.atleast_2d(np.asarray(A, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        if A.shape[0] != y.shape[0]:
            raise ParameterError("A and y disagree on n")
        if not np.all(np.abs(y) == 1):
            raise ParameterError("labels must be +1 or -1")
        self._A = _readonly(A)
        self._y = _readonly(y)
        self._Ay = _readonly(A * y[:, None])
        self.n, self.d = A.shape
        self.lam = float(lam)
        self.radius = float(radius)
        self.seed = seed

        row_norms = np.linalg.norm(A, axis=1)
        self.mu = self.lam
        self.L = self.lam + float(np.max(row_norms ** 2)) / 4.0
        self.G = float(np.max(row_norms)) + self.lam * self.radius

        x = self._newton(tol=1e-12)
        feasible = self.feasible_set
        if not feasible.contains(x, tol=0.0):
            x = _minimize_over(self, feasible, x, tol=1e-13 * max(self.G, 1.0))
        self.x_star = _readonly(x)
        self.F_star = self.value(self.x_star)

    def _newton(self, tol: float, max_iter: int = 100) -> np.ndarray:
        x = np.zeros(self.d)
        for _ in range(max_iter):
            g = self.full_grad(x)
            if np.linalg.norm(g) <= tol:
                break
            p = expit(self._Ay @ x)
            w = p * (1.0 - p)
            H = (self._A.T * w) @ self._A / self.n + self.lam * np.eye(self.d)
            x_new = x - np.linalg.solve(H, g)
            if np.array_equal(x_new, x):
                break
            x = x_new
        return x

    @property
    def A(self):
        return self._A

    @property
    def y(self):
        return self._y

    def _value(self, j, x):
        return float(np.logaddexp(0.0, -(self._Ay[j] @ x))) + 0.5 * self.lam * float(x @ x)

    def _grad(self, j, x):
        ay = self._Ay[j]
        return -ay * expit(-(ay @ x)) + self.lam * x

    def values_batch(self, idx, X):
        rows = self._Ay[np.asarray(idx) - 1]
        m = np.sum(rows * X, axis=1)
        return np.logaddexp(0.0, -m) + 0.5 * self.lam * np.sum(X * X, axis=1)

    def grads_batch(self, idx, X):
        rows = self._Ay[np.asarray(idx) - 1]
        m = np.sum(rows * X, axis=1)
        return -rows * expit(-m)[:, None] + self.lam * X

    def full_values_batch(self, X):
        X = np.atleast_2d(X)
        M = X @ self._Ay.T
        return np.mean(np.logaddexp(0.0, -M), axis=1) + 0.5 * self.lam * np.sum(X * X, axis=1)

    def full_grads_batch(self, X):
        X = np.atleast_2d(X)
        S = expit(-(X @ self._Ay.T))
        return -(S @ self._Ay) / self.n + self.lam * X

    def params(self):
        return {"lambda": self.lam}


def make_logistic(n: int, d: int, lam: float, radius: float, seed: int) -> LogisticProblem:
    """Random L2-regularised logistic regression with labels from a noisy linear model."""
    if not lam > 0:
        raise ParameterError(f"lambda must be positive, got {lam}")
    if n < 1 or d < 1:
        raise ParameterError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    rng = RandomStream(seed, 0).generator()
    A = rng.standard_normal((n, d))
    w = rng.standard_normal(d)
    p = expit(A @ w)
    y = np.where(rng.random(n) < p, 1.0, -1.0)
    return LogisticProblem(A, y, lam, radius, seed=seed)


def logistic_from_data(A, y, lam: float, radius: float) -> LogisticProblem:
    return LogisticProblem(A, y, lam, radius)


# ---------------------------------------------------------------------------
# n copies of one component
# ---------------------------------------------------------------------------

class IdenticalComponentsProblem(FiniteSumProblem):
    """``f(x; i) = g(x)`` for every ``i``, so ``F`` is ``g`` itself.

    Every oracle, full gradient included, delegates to the single base
    component, so gradient calls are bit-identical across indices.
    """

    kind = "identical"

    def __init__(self, base: FiniteSumProblem, n: int):
        if base.n != 1:
            raise ParameterError(f"base problem must have exactly one component, got n={base.n}")
        if n < 1:
            raise ParameterError(f"n must be >= 1, got {n}")
        self.base = base
        self.n = int(n)
        self.d = base.d
        self.G, self.L, self.mu = base.G, base.L, base.mu
        self.radius = base.radius
        self.seed = base.seed
        self.x_star = base.x_star
        self.F_star = base.F_star

    def _value(self, j, x):
        return self.base._value(0, x)

    def _grad(self, j, x):
        return self.base._grad(0, x)

    def _full_value(self, x):
        return float(self.base._value(0, x))

    def _full_grad(self, x):
        return self.base._grad(0, x)

    def values_batch(self, idx, X):
        return self.base.values_batch(np.ones(len(X), dtype=np.int64), X)

    def grads_batch(self, idx, X):
        return self.base.grads_batch(np.ones(len(X), dtype=np.int64), X)

    def full_values_batch(self, X):
        X = np.atleast_2d(X)
        return self.base.values_batch(np.ones(len(X), dtype=np.int64), X)

    def full_grads_batch(self, X):
        X = np.atleast_2d(X)
        return self.base.grads_batch(np.ones(len(X), dtype=np.int64), X)

    def params(self):
        return {"base": self.base.descriptor()}


def make_identical_components(base_problem: FiniteSumProblem, n: int) -> IdenticalComponentsProblem:
    return IdenticalComponentsProblem(base_problem, n)


# ---------------------------------------------------------------------------
# queries
# ---------------------------------------------------------------------------

def suboptimality(problem: FiniteSumProblem, x) -> SuboptimalityRecord:
    """``F(x) - F_star`` and ``||x - x_star||^2``."""
    if problem.x_star is None or problem.F_star is None:
        raise UnsupportedQueryError(f"{problem!r} has no known optimum")
    x = _as_point(x, problem.d)
    diff = x - problem.x_star
    return SuboptimalityRecord(problem.value(x) - problem.F_star, float(diff @ diff))


def initial_distance(problem: FiniteSumProblem, x0=None) -> float:
    """``||x0 - x_star||`` (the starting-distance reading of D; x0 defaults to 0)."""
    if problem.x_star is None:
        raise UnsupportedQueryError(f"{problem!r} has no known optimum")
    x0 = np.zeros(problem.d) if x0 is None else _as_point(x0, problem.d)
    return float(np.linalg.norm(x0 - problem.x_star))


@dataclass
class AssumptionReport:
    num_samples: int
    max_lipschitz_ratio: float = 0.0
    max_smoothness_ratio: float = 0.0
    max_strong_convexity_ratio: float = 0.0
    max_cocoercivity_ratio: float = 0.0
    skipped_degenerate: int = 0
    witnesses: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.witnesses

    def to_dict(self) -> dict:
        return {
            "num_samples": self.num_samples,
            "ok": self.ok,
            "max_lipschitz_ratio": self.max_lipschitz_ratio,
            "max_smoothness_ratio": self.max_smoothness_ratio,
            "max_strong_convexity_ratio": self.max_strong_convexity_ratio,
            "max_cocoercivity_ratio": self.max_cocoercivity_ratio,
            "skipped_degenerate": self.skipped_degenerate,
            "witnesses": self.witnesses,
        }


def _ratio(lhs, rhs):
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(rhs > 0, lhs / np.where(rhs > 0, rhs, 1.0), np.where(lhs > 0, np.inf, 0.0))
    return r


def verify_assumptions(problem: FiniteSumProblem, feasible: ConvexSet | None = None,
                       num_samples: int = 1000, seed: int = 0, rtol: float = 1e-9,
                       max_witnesses: int = 10) -> AssumptionReport:
    """Sample pairs in the feasible set and test the four defining inequalities.

    Checked per sample (component ``i`` drawn uniformly):

    * ``||grad f(x;i)|| <= G``
    * ``||grad f(x;i) - grad f(y;i)|| <= L ||x - y||``
    * ``F(y) >= F(x) + <grad F(x), y - x> + mu/2 ||y - x||^2``
    * ``||grad f(x;i) - grad f(y;i)||^2 <= L <grad f(x;i) - grad f(y;i), x - y>``

    A violation beyond ``rtol`` relative to the magnitude of the terms involved
    is recorded as a witness.
    """
    if num_samples < 1:
        raise ParameterError(f"num_samples must be >= 1, got {num_samples}")
    feasible = problem.feasible_set if feasible is None else feasible
    gen = RandomStream(seed, 1).generator()
    X = feasible.sample(gen, num_samples)
    Y = feasible.sample(gen, num_samples)
    idx = gen.integers(1, problem.n + 1, size=num_samples)

    gx = problem.grads_batch(idx, X)
    gy = problem.grads_batch(idx, Y)
    dx = X - Y
    dg = gx - gy
    ndx = np.linalg.norm(dx, axis=1)
    ndg = np.linalg.norm(dg, axis=1)
    ngx = np.linalg.norm(gx, axis=1)
    inner = np.sum(dg * dx, axis=1)

    Fx = problem.full_values_batch(X)
    Fy = problem.full_values_batch(Y)
    GFx = problem.full_grads_batch(X)
    lin = np.sum(GFx * (Y - X), axis=1)
    gap = Fy - Fx - lin
    quad = 0.5 * problem.mu * ndx ** 2

    report = AssumptionReport(num_samples)
    degenerate = ndx == 0
    report.skipped_degenerate = int(np.count_nonzero(degenerate))
    live = ~degenerate

    checks = {
        "lipschitz": (ngx, np.full(num_samples, problem.G), np.full(num_samples, True),
                      rtol * np.maximum(ngx, problem.G)),
        "smoothness": (ndg, problem.L * ndx, live, rtol * problem.L * ndx),
        "strong_convexity": (quad, gap, live,
                             rtol * (np.abs(Fx) + np.abs(Fy) + np.abs(lin) + quad) + 1e-300),
        "cocoercivity": (ndg ** 2, problem.L * inner, live, rtol * problem.L * ndg * ndx),
    }
    for name, (lhs, rhs, mask, tol) in checks.items():
        ratio = np.where(mask, _ratio(lhs, rhs), 0.0)
        # ratios that blow up only because both sides are rounding noise are not informative
        ratio = np.where(mask & (lhs <= tol), np.minimum(ratio, 1.0), ratio)
        setattr(report, f"max_{name}_ratio", float(np.max(ratio)) if ratio.size else 0.0)
        bad = np.flatnonzero(mask & (lhs > rhs + tol))
        for s in bad[: max(0, max_witnesses - len(report.witnesses))]:
            report.witnesses.append({
                "inequality": name, "component": int(idx[s]),
                "x": X[s].tolist(), "y": Y[s].tolist(),
                "lhs": float(lhs[s]), "rhs": float(rhs[s]),
            })
    return report


# ---------------------------------------------------------------------------
# descriptors
# ---------------------------------------------------------------------------

def problem_from_descriptor(desc: dict, n: int | None = None) -> FiniteSumProblem:
    """Regenerate a problem from its JSON descriptor; ``n`` overrides the stored count."""
    kind = desc["kind"]
    n = int(desc["n"] if n is None else n)
    if kind == "least_squares":
        return make_least_squares(n, int(desc["d"]), float(desc.get("kappa_target", 1.0)),
                                  float(desc["radius"]), int(desc["seed"]),
                                  noise=float(desc.get("noise", 0.1)), rank=desc.get("rank"))
    if kind == "logistic":
        return make_logistic(n, int(desc["d"]), float(desc["lambda"]), float(desc["radius"]),
                             int(desc["seed"]))
    if kind == "identical":
        base = problem_from_descriptor(desc["base"], n=1)
        return make_identical_components(base, n)
    raise ParameterError(f"unknown problem kind {kind!r}")
