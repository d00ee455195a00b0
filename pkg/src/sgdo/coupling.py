"""Exchangeable-pair experiments on a single epoch of SGD without replacement.

Every check starts from a shared epoch start ``x_0`` and compares within-epoch
paths ``x_i(sigma)`` under different permutations. Almost-sure bounds are
checked sample by sample with no statistical slack; expectation-level bounds
are checked on Monte Carlo means with a slack of four standard errors.

Monte Carlo samples are simulated together as rows of an ``(m, d)`` array,
so every sample follows exactly the same arithmetic as every other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (BoundViolation, InsufficientSamplesError, ParameterError,
                     PreconditionError, UnsupportedQueryError)
from .geometry import ConvexSet, _as_point
from .optimizer import run_sgdo
from .problems import FiniteSumProblem
from .sampler import (Permutation, RandomStream, all_permutations, lambda_op_batch,
                      prefix_mismatches, uniform_permutations)

AS_RTOL = 1e-9
SE_SLACK = 4.0
MIN_SAMPLES = 30


@dataclass(frozen=True)
class CoupledPair:
    sigma: Permutation
    sigma_prime: Permutation
    shared_start: np.ndarray
    alpha: float

    def __post_init__(self):
        if self.sigma.n != self.sigma_prime.n:
            raise ParameterError(f"permutations over different n: {self.sigma.n} vs {self.sigma_prime.n}")
        if not self.alpha >= 0:
            raise ParameterError(f"alpha must be non-negative, got {self.alpha}")


@dataclass
class EmpiricalLaw:
    """I.i.d. (or exhaustively enumerated, equally weighted) draws of an iterate."""

    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if self.samples.shape[0] < 1:
            raise ParameterError("an empirical law needs at least one sample")

    @property
    def m(self) -> int:
        return self.samples.shape[0]

    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)

    def sorted_rows(self) -> np.ndarray:
        """Samples in lexicographic order, for multiset comparison."""
        return self.samples[np.lexsort(self.samples.T[::-1])]


@dataclass
class BoundReport:
    check: str
    checked: int = 0
    violations: int = 0
    max_ratio: float = 0.0
    witnesses: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def merge(self, other: BoundReport) -> BoundReport:
        """Combine two reports of the same check (order-independent)."""
        return BoundReport(self.check, self.checked + other.checked,
                           self.violations + other.violations,
                           max(self.max_ratio, other.max_ratio),
                           (self.witnesses + other.witnesses)[:10], {**self.info, **other.info})

    def to_dict(self) -> dict:
        return {"check": self.check, **self.info, "checked": self.checked,
                "violations": self.violations, "max_ratio": self.max_ratio,
                "passed": self.passed, "witnesses": self.witnesses}


def _require_step(problem: FiniteSumProblem, alpha: float):
    if not alpha > 0:
        raise PreconditionError(f"alpha must be positive, got {alpha}")
    if alpha > 2.0 / problem.L:
        raise PreconditionError(f"alpha={alpha:g} exceeds 2/L={2.0 / problem.L:g}; the bound does not apply")
    if not math.isfinite(problem.G):
        raise PreconditionError("G is infinite; bounds need a bounded feasible set")


def _starts_array(start, m: int, d: int) -> np.ndarray:
    start = np.asarray(start, dtype=float)
    if start.ndim == 1:
        return np.tile(_as_point(start, d), (m, 1))
    if start.shape != (m, d):
        raise ParameterError(f"starts must have shape ({m}, {d}), got {start.shape}")
    return start.copy()


def epoch_paths(problem: FiniteSumProblem, feasible: ConvexSet, start, alpha: float,
                perms: np.ndarray, upto: int | None = None) -> np.ndarray:
    """Within-epoch paths for each row of ``perms``; result has shape ``(m, upto + 1, d)``.

    ``start`` is one point shared by all rows or an ``(m, d)`` array.
    """
    perms = np.atleast_2d(np.asarray(perms, dtype=np.int64))
    m, n = perms.shape
    if n != problem.n:
        raise ParameterError(f"permutation length {n} != problem.n {problem.n}")
    upto = n if upto is None else upto
    if not 0 <= upto <= n:
        raise ParameterError(f"upto={upto} outside 0..{n}")
    X = _starts_array(start, m, problem.d)
    out = np.empty((m, upto + 1, problem.d))
    out[:, 0] = X
    for i in range(upto):
        X = feasible.project_batch(X - alpha * problem.grads_batch(perms[:, i], X))
        out[:, i + 1] = X
    return out


def epoch_path(problem: FiniteSumProblem, feasible: ConvexSet, start, alpha: float,
               perm: Permutation) -> np.ndarray:
    """One within-epoch path ``x_0 .. x_n`` as an ``(n + 1, d)`` array."""
    if perm.n != problem.n:
        raise ParameterError(f"permutation length {perm.n} != problem.n {problem.n}")
    x = _as_point(start, problem.d).copy()
    out = np.empty((problem.n + 1, problem.d))
    out[0] = x
    for i, j in enumerate(perm.image):
        x = feasible.project(x - alpha * problem._grad(int(j) - 1, x))
        out[i + 1] = x
    return out


def run_coupled_epoch(problem: FiniteSumProblem, feasible: ConvexSet,
                      pair: CoupledPair) -> tuple[np.ndarray, np.ndarray]:
    """Paths ``y_i = x_i(sigma)`` and ``z_i = x_i(sigma')`` from the shared start."""
    if pair.sigma.n != problem.n:
        raise ParameterError(f"pair is over n={pair.sigma.n}, problem has n={problem.n}")
    y = epoch_path(problem, feasible, pair.shared_start, pair.alpha, pair.sigma)
    z = epoch_path(problem, feasible, pair.shared_start, pair.alpha, pair.sigma_prime)
    return y, z


def _as_tolerance_check(lhs, rhs, unit):
    # zero statistical slack; floating tolerance relative to the per-mismatch unit 2*alpha*G
    return lhs > rhs + AS_RTOL * np.maximum(rhs, unit)


def stability_report(problem: FiniteSumProblem, feasible: ConvexSet, starts, alpha: float,
                     num_pairs: int, stream: RandomStream, max_witnesses: int = 10) -> BoundReport:
    """Check ``||x_i(sigma) - x_i(sigma')|| <= 2 G alpha * mismatches(i)`` for independent pairs.

    ``starts`` is a single point or a list of points cycled over the pairs.
    Every ``i = 0..n`` of every pair is checked.
    """
    _require_step(problem, alpha)
    if num_pairs < 1:
        raise ParameterError("num_pairs must be >= 1")
    n, d = problem.n, problem.d
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    X0 = starts[np.arange(num_pairs) % starts.shape[0]]
    sig = uniform_permutations(n, num_pairs, stream)
    sig2 = uniform_permutations(n, num_pairs, stream)
    Y = epoch_paths(problem, feasible, X0, alpha, sig)
    Z = epoch_paths(problem, feasible, X0, alpha, sig2)
    dist = np.linalg.norm(Y - Z, axis=2)
    unit = 2.0 * problem.G * alpha
    bound = unit * prefix_mismatches(sig, sig2)
    bad = _as_tolerance_check(dist, bound, unit)
    ratio = np.where(bound > 0, dist / np.where(bound > 0, bound, 1.0), 0.0)

    rep = BoundReport("stability", checked=int(dist.size), violations=int(np.count_nonzero(bad)),
                      max_ratio=float(ratio.max()),
                      info={"n": n, "d": d, "alpha": alpha, "m": num_pairs})
    for p, i in np.argwhere(bad)[:max_witnesses]:
        rep.witnesses.append({"sigma": sig[p].tolist(), "sigma_prime": sig2[p].tolist(), "i": int(i),
                              "distance": float(dist[p, i]), "bound": float(bound[p, i])})
    return rep


@dataclass
class CouplingEstimate:
    estimate: float
    bound: float
    max_distance: float
    mean_sq: float
    se_mean_sq: float
    violations: int
    m: int
    i: int
    r: int

    @property
    def holds(self) -> bool:
        return self.violations == 0 and self.estimate <= self.bound * (1.0 + AS_RTOL)

    def to_dict(self):
        return {"check": "wasserstein_coupling", "i": self.i, "r": self.r, "m": self.m,
                "estimate": self.estimate, "bound": self.bound, "violations": self.violations,
                "max_ratio": self.max_distance / self.bound if self.bound > 0 else 0.0}


def _lambda_distances(problem, feasible, X0, alpha, sig, i, r):
    tau = lambda_op_batch(sig, r, i)
    Y = epoch_paths(problem, feasible, X0, alpha, sig, upto=i)[:, i]
    Z = epoch_paths(problem, feasible, X0, alpha, tau, upto=i)[:, i]
    return np.linalg.norm(Y - Z, axis=1)


def wasserstein_coupling_bound(problem: FiniteSumProblem, feasible: ConvexSet, start, alpha: float,
                               i: int, r: int, m: int, stream: RandomStream,
                               strict: bool = True) -> CouplingEstimate:
    """Coupling estimate of the W2 distance between the law of ``x_i`` and its law given ``sigma(i+1) = r``.

    The coupling pairs ``sigma`` with ``Lambda_{r,i}(sigma)``; the estimate is
    ``sqrt(mean ||x_i(sigma) - x_i(Lambda sigma)||^2)`` and the analytic bound
    is ``2 alpha G``, which also bounds every individual distance.
    """
    _require_step(problem, alpha)
    n = problem.n
    if not 0 <= i <= n - 1 or not 1 <= r <= n:
        raise ParameterError(f"(i={i}, r={r}) out of range for n={n}")
    if m < 1:
        raise ParameterError("m must be >= 1")
    sig = uniform_permutations(n, m, stream)
    dist = _lambda_distances(problem, feasible, _as_point(start, problem.d), alpha, sig, i, r)
    bound = 2.0 * alpha * problem.G
    sq = dist ** 2
    res = CouplingEstimate(
        estimate=float(math.sqrt(sq.mean())), bound=bound, max_distance=float(dist.max()),
        mean_sq=float(sq.mean()), se_mean_sq=float(sq.std(ddof=1) / math.sqrt(m)) if m > 1 else math.inf,
        violations=int(np.count_nonzero(dist > bound * (1.0 + AS_RTOL))), m=m, i=i, r=r)
    if strict and not res.holds:
        raise BoundViolation(f"coupling bound violated: {res}")
    return res


def exact_coupling_mean_sq(problem, feasible, start, alpha, i, r) -> float:
    """``E ||x_i(sigma) - x_i(Lambda_{r,i} sigma)||^2`` by enumerating all ``n!`` permutations."""
    sig = all_permutations(problem.n)
    dist = _lambda_distances(problem, feasible, _as_point(start, problem.d), alpha, sig, i, r)
    return float(np.mean(dist ** 2))


def coupling_report(problem: FiniteSumProblem, feasible: ConvexSet, start, alpha: float,
                    m: int, stream: RandomStream, max_witnesses: int = 10) -> BoundReport:
    """Per-sample coupling bound over every ``i in 0..n-1`` and ``r in 1..n``.

    The same ``m`` permutations are reused for every ``(i, r)``.
    """
    _require_step(problem, alpha)
    n = problem.n
    sig = uniform_permutations(n, m, stream)
    X0 = _as_point(start, problem.d)
    bound = 2.0 * alpha * problem.G
    rep = BoundReport("wasserstein_coupling", info={"n": n, "d": problem.d, "alpha": alpha,
                                                    "m": m, "bound": bound})
    worst = 0.0
    for i in range(n):
        for r in range(1, n + 1):
            dist = _lambda_distances(problem, feasible, X0, alpha, sig, i, r)
            bad = np.flatnonzero(dist > bound * (1.0 + AS_RTOL))
            rep.checked += dist.size
            rep.violations += bad.size
            worst = max(worst, float(dist.max()))
            for p in bad[: max(0, max_witnesses - len(rep.witnesses))]:
                rep.witnesses.append({"sigma": sig[p].tolist(), "i": i, "r": r,
                                      "distance": float(dist[p])})
    rep.max_ratio = worst / bound
    return rep


@dataclass
class BiasEstimate:
    bias: float
    bound: float
    standard_error: float
    mean_F: float
    mean_f: float
    m: int
    i: int

    @property
    def holds(self) -> bool:
        return self.bias <= self.bound + SE_SLACK * self.standard_error

    def to_dict(self):
        return {"check": "bias", "i": self.i, "m": self.m, "estimate": self.bias,
                "bound": self.bound, "standard_error": self.standard_error,
                "violations": 0 if self.holds else 1,
                "max_ratio": self.bias / self.bound if self.bound > 0 else 0.0}


def _bias_samples(problem, feasible, start, alpha, sig, i):
    X = epoch_paths(problem, feasible, _as_point(start, problem.d), alpha, sig, upto=i)[:, i]
    return problem.full_values_batch(X), problem.values_batch(sig[:, i], X)


def bias_estimate(problem: FiniteSumProblem, feasible: ConvexSet, start, alpha: float, i: int,
                  m: int, stream: RandomStream, strict: bool = True) -> BiasEstimate:
    """Monte Carlo ``|E F(x_i) - E f(x_i; sigma(i+1))|`` against ``2 alpha G^2``.

    The standard error is that of the per-sample difference, since both
    means are taken over the same draws.
    """
    _require_step(problem, alpha)
    if m < MIN_SAMPLES:
        raise InsufficientSamplesError(f"need m >= {MIN_SAMPLES} for a standard error, got {m}")
    if not 0 <= i <= problem.n - 1:
        raise ParameterError(f"i={i} outside 0..{problem.n - 1}")
    sig = uniform_permutations(problem.n, m, stream)
    F, f = _bias_samples(problem, feasible, start, alpha, sig, i)
    diff = F - f
    res = BiasEstimate(bias=float(abs(diff.mean())), bound=2.0 * alpha * problem.G ** 2,
                       standard_error=float(diff.std(ddof=1) / math.sqrt(m)),
                       mean_F=float(F.mean()), mean_f=float(f.mean()), m=m, i=i)
    if strict and not res.holds:
        raise BoundViolation(f"bias bound violated: {res}")
    return res


def exact_bias(problem: FiniteSumProblem, feasible: ConvexSet, start, alpha: float, i: int) -> float:
    """Signed ``E[F(x_i) - f(x_i; sigma(i+1))]`` over all ``n!`` permutations."""
    F, f = _bias_samples(problem, feasible, start, alpha, all_permutations(problem.n), i)
    return float(np.mean(F - f))


def temporal_regularity_report(problem: FiniteSumProblem, feasible: ConvexSet, start, alpha: float,
                               m: int, stream: RandomStream) -> BoundReport:
    """Check both within-epoch drift bounds for every ``i = 0..n`` on Monte Carlo means.

    * ``E||x_i - x_0||^2 <= 5 i alpha^2 G^2 + 2 i alpha (F(x_0) - F*)``
    * ``E||x_i - x*||^2 <= ||x_0 - x*||^2 + 5 i alpha^2 G^2``

    ``max_ratio`` records the largest observed mean over its right-hand side,
    an empirical reading of how tight the constant 5 is.
    """
    _require_step(problem, alpha)
    if problem.x_star is None or problem.F_star is None:
        raise UnsupportedQueryError("temporal regularity needs a known optimum")
    if m < MIN_SAMPLES:
        raise InsufficientSamplesError(f"need m >= {MIN_SAMPLES}, got {m}")
    x0 = _as_point(start, problem.d)
    n, G = problem.n, problem.G
    sig = uniform_permutations(n, m, stream)
    P = epoch_paths(problem, feasible, x0, alpha, sig)
    drift = np.sum((P - x0) ** 2, axis=2)
    dist = np.sum((P - problem.x_star) ** 2, axis=2)
    gap0 = problem.value(x0) - problem.F_star
    d0 = float(np.sum((x0 - problem.x_star) ** 2))

    rep = BoundReport("temporal_regularity",
                      info={"n": n, "d": problem.d, "alpha": alpha, "m": m,
                            "start_suboptimality": gap0, "rows": []})
    worst = 0.0
    for i in range(n + 1):
        noise = 5.0 * i * alpha ** 2 * G ** 2
        for name, vals, rhs, excess_base in (
                ("drift", drift[:, i], noise + 2.0 * i * alpha * gap0, 0.0),
                ("distance", dist[:, i], d0 + noise, d0)):
            mean = float(vals.mean())
            se = float(vals.std(ddof=1) / math.sqrt(m))
            ok = mean <= rhs + SE_SLACK * se + AS_RTOL * abs(rhs)
            rep.checked += 1
            if not ok:
                rep.violations += 1
                rep.witnesses.append({"inequality": name, "i": i, "mean": mean, "se": se, "rhs": rhs})
            # tightness of the noise term: compare growth beyond the deterministic part
            if rhs - excess_base > 0:
                worst = max(worst, (mean - excess_base) / (rhs - excess_base))
            rep.info["rows"].append({"inequality": name, "i": i, "mean": mean, "se": se, "rhs": rhs})
    rep.max_ratio = worst
    return rep


def exact_epoch_paths(problem: FiniteSumProblem, feasible: ConvexSet, start, alpha: float) -> np.ndarray:
    """Paths under every permutation, shape ``(n!, n + 1, d)``; each carries weight ``1/n!``."""
    return epoch_paths(problem, feasible, start, alpha, all_permutations(problem.n))


def empirical_law(problem: FiniteSumProblem, feasible: ConvexSet, start, alpha: float, i: int,
                  perms: np.ndarray) -> EmpiricalLaw:
    """Law of ``x_i`` over the given permutation rows."""
    return EmpiricalLaw(epoch_paths(problem, feasible, start, alpha, perms, upto=i)[:, i])


def exhaustive_conditional_laws(problem: FiniteSumProblem, feasible: ConvexSet, start, alpha: float,
                                i: int, r: int) -> tuple[EmpiricalLaw, EmpiricalLaw]:
    """``x_i(Lambda_{r,i} sigma)`` over all ``sigma`` and ``x_i(sigma)`` over ``sigma(i+1) = r``.

    The first law has ``n!`` equally weighted points, the second ``(n-1)!``;
    each conditional point appears exactly ``n`` times in the first.
    """
    perms = all_permutations(problem.n)
    pushed = empirical_law(problem, feasible, start, alpha, i, lambda_op_batch(perms, r, i))
    cond = empirical_law(problem, feasible, start, alpha, i, perms[perms[:, i] == r])
    return pushed, cond


def warmup_start(problem: FiniteSumProblem, feasible: ConvexSet, alpha: float, epochs: int,
                 seed: int) -> np.ndarray:
    """Epoch start reached after ``epochs`` epochs of SGDo from the origin."""
    return run_sgdo(problem, feasible, epochs, alpha, seed).final.copy()
