"""SGD with replacement, SGD without replacement (random reshuffling) and full GD.

All three run with a constant step size and project onto the feasible set after
every step. Epoch ``k`` (1-based) of a run seeded with ``seed`` draws its
indices from ``RandomStream(seed, k)``, so two runs with the same seed see the
same permutations epoch by epoch.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DivergenceError, ParameterError, RecordingError, RegimeError, UnsupportedQueryError
from .geometry import ConvexSet, _as_point
from .problems import FiniteSumProblem
from .sampler import RandomStream, uniform_permutation, with_replacement_index

DIVERGENCE_THRESHOLD = 1e12


class RegimeKind(str, Enum):
    THM1_LARGE_K = "thm1_large_K"
    THM2_SMALL_K = "thm2_small_K"
    THM3_NONSTRONG = "thm3_nonstrong"
    EXPLICIT = "explicit"


@dataclass(frozen=True)
class StepRegime:
    kind: RegimeKind = RegimeKind.THM1_LARGE_K
    l: float = 1.0
    alpha: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", RegimeKind(self.kind))
        if not self.l > 0:
            raise ParameterError(f"l must be positive, got {self.l}")
        if self.kind is RegimeKind.EXPLICIT and not (self.alpha is not None and self.alpha >= 0):
            raise ParameterError("explicit regime needs a non-negative alpha")

    def to_dict(self):
        out = {"kind": self.kind.value, "l": self.l}
        if self.alpha is not None:
            out["alpha"] = self.alpha
        return out

    @classmethod
    def from_dict(cls, desc: dict) -> StepRegime:
        return cls(RegimeKind(desc["kind"]), float(desc.get("l", 1.0)), desc.get("alpha"))


def step_size(regime: StepRegime, n: int, K: int, *, G=None, L=None, mu=None, D=None) -> float:
    """Constant step size for ``n`` components and ``K`` epochs.

    thm1: ``4 l log(nK) / (mu n K)``
    thm2: ``min(2/L, 4 l log(nK) / (mu n K))``
    thm3: ``min(2/L, D / (G sqrt(nK)))``
    """
    if n < 1 or K < 1:
        raise ParameterError(f"need n >= 1 and K >= 1, got n={n}, K={K}")
    kind = regime.kind
    if kind is RegimeKind.EXPLICIT:
        return float(regime.alpha)
    nK = n * K
    if kind in (RegimeKind.THM1_LARGE_K, RegimeKind.THM2_SMALL_K):
        if mu is None or not mu > 0:
            raise RegimeError(f"{kind.value} requires mu > 0")
        if nK < 2:
            raise RegimeError(f"{kind.value} requires nK >= 2 (log nK must be positive)")
        alpha = 4.0 * regime.l * math.log(nK) / (mu * nK)
        if kind is RegimeKind.THM2_SMALL_K:
            if L is None or not L > 0:
                raise RegimeError("thm2_small_K requires L > 0")
            alpha = min(2.0 / L, alpha)
        return alpha
    if kind is RegimeKind.THM3_NONSTRONG:
        if D is None or not math.isfinite(D) or not D > 0:
            raise RegimeError("thm3_nonstrong requires a finite positive diameter D")
        if G is None or not G > 0 or not math.isfinite(G):
            raise RegimeError("thm3_nonstrong requires a finite positive G")
        if L is None or not L > 0:
            raise RegimeError("thm3_nonstrong requires L > 0")
        return min(2.0 / L, D / (G * math.sqrt(nK)))
    raise RegimeError(f"unknown regime {kind}")


def thm1_epoch_threshold(n: int, K: int, kappa: float, l: float = 1.0) -> float:
    """Right-hand side of the large-K gate ``K > 32 l kappa^2 log(nK)``."""
    return 32.0 * l * kappa * kappa * math.log(n * K)


def thm1_in_regime(n: int, K: int, kappa: float, l: float = 1.0) -> bool:
    return K > thm1_epoch_threshold(n, K, kappa, l)


def thm1_min_epochs(n: int, kappa: float, l: float = 1.0, max_iter: int = 200) -> int:
    """Smallest ``K`` satisfying the large-K gate, by fixed-point iteration.

    The gate is implicit in ``K``; iterating ``K <- floor(32 l kappa^2 log(nK)) + 1``
    from ``K = 1`` increases monotonically to the least solution.
    """
    if not math.isfinite(kappa):
        raise RegimeError("kappa is infinite; the large-K regime is unreachable")
    K = 1
    for _ in range(max_iter):
        nxt = max(K, math.floor(thm1_epoch_threshold(n, K, kappa, l)) + 1)
        if nxt == K:
            break
        K = nxt
    while not thm1_in_regime(n, K, kappa, l):
        K += 1
    while K > 1 and thm1_in_regime(n, K - 1, kappa, l):
        K -= 1
    return K


class AveragingScheme(str, Enum):
    TAIL_EPOCH_STARTS = "tail_epoch_starts"
    FULL_AVERAGE = "full_average"
    LAST_ITERATE = "last_iterate"


@dataclass
class Trajectory:
    """Iterates of one run.

    ``epoch_starts[k - 1]`` is ``x_0^k`` for ``k = 1..K + 1`` (the last row is
    the final iterate). Dense fields are filled only when recording was
    requested: ``suboptimality`` and ``distance_sq`` have shape ``(K, steps)``
    and hold the values at ``x_i^k`` before step ``i``; ``indices`` holds the
    1-based component used at each step; ``iterate_sum`` is the sum of all
    ``x_i^k`` for ``i < steps``.
    """

    algorithm: str
    n: int
    K: int
    alpha: float
    epoch_starts: np.ndarray
    steps_per_epoch: int
    seed: int | None = None
    regime: str | None = None
    suboptimality: np.ndarray | None = None
    distance_sq: np.ndarray | None = None
    indices: np.ndarray | None = None
    iterate_sum: np.ndarray | None = None
    iterates: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.epoch_starts[-1]

    @property
    def num_steps(self) -> int:
        return self.K * self.steps_per_epoch

    def metadata(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "n": self.n,
            "K": self.K,
            "alpha": self.alpha,
            "regime": self.regime,
            "seed": self.seed,
            **self.meta,
        }


def _check_divergence(x: np.ndarray, k: int, i: int):
    if not np.all(np.abs(x) <= DIVERGENCE_THRESHOLD):
        raise DivergenceError(k, i, f"iterate left the box |x| <= {DIVERGENCE_THRESHOLD:g} "
                                    f"at epoch {k}, step {i}: max |x| = {np.max(np.abs(x))}")


def _run(problem: FiniteSumProblem, feasible: ConvexSet, K: int, alpha: float, draw_epoch,
         x0, steps: int, step_fn, *, record: bool, track_average: bool, keep_iterates: bool,
         algorithm: str, seed) -> Trajectory:
    if K < 1:
        raise ParameterError(f"K must be >= 1, got {K}")
    if not alpha >= 0 or not math.isfinite(alpha):
        raise ParameterError(f"alpha must be finite and >= 0, got {alpha}")
    d = problem.d
    x = np.zeros(d) if x0 is None else _as_point(x0, d).copy()
    if feasible.d is not None and feasible.d != d:
        raise ParameterError(f"set dimension {feasible.d} != problem dimension {d}")
    if record and (problem.x_star is None or problem.F_star is None):
        raise UnsupportedQueryError("dense recording needs a known optimum")

    starts = np.empty((K + 1, d))
    subopt = np.empty((K, steps)) if record else None
    dist = np.empty((K, steps)) if record else None
    used = np.empty((K, steps), dtype=np.int64) if record else None
    total = np.zeros(d) if (record or track_average) else None
    path = np.empty((K * steps + 1, d)) if keep_iterates else None
    project = feasible.project
    x_star = problem.x_star

    for k in range(1, K + 1):
        starts[k - 1] = x
        order = draw_epoch(k)
        for i in range(steps):
            if keep_iterates:
                path[(k - 1) * steps + i] = x
            if total is not None:
                total += x
            if record:
                diff = x - x_star
                subopt[k - 1, i] = problem._full_value(x) - problem.F_star
                dist[k - 1, i] = diff @ diff
                used[k - 1, i] = order[i] if order is not None else 0
            x = project(x - alpha * step_fn(order, i, x))
            _check_divergence(x, k, i)
    starts[K] = x
    if keep_iterates:
        path[-1] = x
    return Trajectory(algorithm, problem.n, K, float(alpha), starts, steps, seed,
                      suboptimality=subopt, distance_sq=dist, indices=used,
                      iterate_sum=total, iterates=path)


def _seed_of(stream) -> int:
    return stream.seed if isinstance(stream, RandomStream) else int(stream)


def run_sgdo(problem: FiniteSumProblem, feasible: ConvexSet, K: int, alpha: float, stream,
             record: bool = False, *, x0=None, track_average: bool = False,
             keep_iterates: bool = False) -> Trajectory:
    """SGD without replacement: a fresh uniform permutation every epoch.

    ``stream`` is a ``RandomStream`` or an integer seed; epoch ``k`` shuffles
    with stream id ``k``.
    """
    seed = _seed_of(stream)
    n = problem.n
    grad = problem._grad

    def draw(k):
        return uniform_permutation(n, RandomStream(seed, k)).image

    def step(order, i, x):
        return grad(order[i] - 1, x)

    return _run(problem, feasible, K, alpha, draw, x0, n, step, record=record,
                track_average=track_average, keep_iterates=keep_iterates,
                algorithm="sgdo", seed=seed)


def run_sgd(problem: FiniteSumProblem, feasible: ConvexSet, K: int, alpha: float, stream,
            record: bool = False, *, x0=None, track_average: bool = False,
            keep_iterates: bool = False) -> Trajectory:
    """SGD with replacement: ``n`` i.i.d. uniform indices per epoch."""
    seed = _seed_of(stream)
    n = problem.n
    grad = problem._grad

    def draw(k):
        s = RandomStream(seed, k)
        return np.array([with_replacement_index(n, s) for _ in range(n)], dtype=np.int64)

    def step(order, i, x):
        return grad(order[i] - 1, x)

    return _run(problem, feasible, K, alpha, draw, x0, n, step, record=record,
                track_average=track_average, keep_iterates=keep_iterates,
                algorithm="sgd", seed=seed)


def run_gd(problem: FiniteSumProblem, feasible: ConvexSet, T: int, alpha: float,
           record: bool = False, *, x0=None, steps_per_epoch: int = 1,
           track_average: bool = False, keep_iterates: bool = False) -> Trajectory:
    """Projected full gradient descent for ``T`` steps.

    ``steps_per_epoch`` only groups steps for bookkeeping so GD trajectories
    line up with epoch-based runs; ``T`` must be a multiple of it.
    """
    if steps_per_epoch < 1 or T % steps_per_epoch:
        raise ParameterError(f"T={T} is not a multiple of steps_per_epoch={steps_per_epoch}")
    full_grad = problem._full_grad

    def step(order, i, x):
        return full_grad(x)

    traj = _run(problem, feasible, T // steps_per_epoch, alpha, lambda k: None, x0,
                steps_per_epoch, step, record=record, track_average=track_average,
                keep_iterates=keep_iterates, algorithm="gd", seed=None)
    if traj.indices is not None:
        traj.indices = None
    return traj


def run_algorithm(name: str, problem, feasible, K, alpha, seed, **kw) -> Trajectory:
    """Dispatch on ``"sgdo" | "sgd" | "gd"``; GD runs ``n K`` steps grouped by ``n``."""
    if name == "sgdo":
        return run_sgdo(problem, feasible, K, alpha, seed, **kw)
    if name == "sgd":
        return run_sgd(problem, feasible, K, alpha, seed, **kw)
    if name == "gd":
        return run_gd(problem, feasible, problem.n * K, alpha, steps_per_epoch=problem.n, **kw)
    raise ParameterError(f"unknown algorithm {name!r}")


def tail_start_index(K: int) -> int:
    """First epoch ``ceil(K / 2)`` of the tail average."""
    return max(1, math.ceil(K / 2))


def average(traj: Trajectory, scheme: AveragingScheme | str) -> np.ndarray:
    """The reported iterate of a trajectory under ``scheme``.

    tail_epoch_starts averages ``x_0^k`` for ``k = ceil(K/2) .. K``;
    full_average averages every ``x_i^k`` with ``i < steps``;
    last_iterate is the final point.
    """
    scheme = AveragingScheme(scheme)
    if scheme is AveragingScheme.TAIL_EPOCH_STARTS:
        k0 = tail_start_index(traj.K)
        return traj.epoch_starts[k0 - 1:traj.K].mean(axis=0)
    if scheme is AveragingScheme.FULL_AVERAGE:
        if traj.iterate_sum is None:
            raise RecordingError("full_average needs a run with record=True or track_average=True")
        return traj.iterate_sum / traj.num_steps
    return traj.final.copy()


CSV_COLUMNS = ("epoch", "step", "suboptimality", "distance_sq")


def trajectory_to_csv(traj: Trajectory, fh=None) -> str | None:
    """Write the dense log as CSV preceded by a ``# {json}`` metadata line.

    Returns the text when ``fh`` is None.
    """
    if traj.suboptimality is None:
        raise RecordingError("trajectory was run without record=True")
    out = io.StringIO() if fh is None else fh
    out.write("# " + json.dumps(traj.metadata(), sort_keys=True) + "\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for k in range(traj.K):
        for i in range(traj.steps_per_epoch):
            w.writerow([k + 1, i, repr(float(traj.suboptimality[k, i])),
                        repr(float(traj.distance_sq[k, i]))])
    return out.getvalue() if fh is None else None


def read_trajectory_csv(fh) -> tuple[dict, np.ndarray]:
    """Parse ``trajectory_to_csv`` output into ``(metadata, rows)``."""
    header = fh.readline()
    if not header.startswith("# "):
        raise ParameterError("missing metadata header line")
    meta = json.loads(header[2:])
    rows = list(csv.reader(fh))
    if tuple(rows[0]) != CSV_COLUMNS:
        raise ParameterError(f"unexpected columns {rows[0]}")
    return meta, np.array([[float(v) for v in r] for r in rows[1:]])
