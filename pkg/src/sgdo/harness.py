"""Experiment sweeps over ``(n, K)`` grids, log-log rate fits and explicit-bound checks."""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import product
from pathlib import Path

import numpy as np
from scipy import stats

from .coupling import BoundReport
from .errors import (ConfigurationError, DivergenceError, DomainError, ParameterError,
                     PreconditionError)
from .geometry import Ball, Box, ConvexSet, FullSpace, set_from_dict
from .optimizer import (AveragingScheme, RegimeKind, StepRegime, average, run_algorithm,
                        step_size, thm1_in_regime, thm1_min_epochs)
from .problems import FiniteSumProblem, problem_from_descriptor, projected_gradient_norm, suboptimality

ALGORITHMS = ("sgdo", "sgd", "gd")
SE_SLACK = 4.0


@dataclass
class ExperimentConfig:
    problem: dict
    algorithms: list
    regime: StepRegime
    grid: list
    seeds: list
    averaging: AveragingScheme = AveragingScheme.TAIL_EPOCH_STARTS
    set: dict | None = None
    fit_cells: str = "in_regime"
    assertions: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)

    def __post_init__(self):
        self.averaging = AveragingScheme(self.averaging)
        if not self.seeds:
            raise PreconditionError("seed list is empty")
        if not self.grid:
            raise ParameterError("grid is empty")
        bad = [a for a in self.algorithms if a not in ALGORITHMS]
        if bad or not self.algorithms:
            raise ConfigurationError(f"unknown or missing algorithms: {bad or self.algorithms}")
        if self.fit_cells not in ("in_regime", "all"):
            raise ConfigurationError(f"fit_cells must be 'in_regime' or 'all', got {self.fit_cells!r}")
        log_based = self.regime.kind in (RegimeKind.THM1_LARGE_K, RegimeKind.THM2_SMALL_K)
        for n, K in self.grid:
            if n < 1 or K < 1:
                raise ConfigurationError(f"grid cell ({n}, {K}) must be positive")
            if log_based and n * K < 2:
                raise ConfigurationError(f"grid cell ({n}, {K}) has nK < 2; log nK is not positive")

    @classmethod
    def from_dict(cls, cfg: dict) -> ExperimentConfig:
        missing = [k for k in ("problem", "grid", "seeds") if k not in cfg]
        if "algorithms" not in cfg and "algorithm" not in cfg:
            missing.append("algorithms")
        if missing:
            raise ConfigurationError(f"config is missing required keys: {missing}")
        algorithms = cfg.get("algorithms") or [cfg["algorithm"]]
        grid = cfg["grid"]
        if isinstance(grid, dict):
            grid = [(int(n), int(K)) for n in grid["n"] for K in grid["K"]]
        else:
            grid = [(int(n), int(K)) for n, K in grid]
        seeds = cfg["seeds"]
        if isinstance(seeds, dict):
            seeds = list(range(int(seeds.get("start", 0)), int(seeds.get("start", 0)) + int(seeds["count"])))
        regime = cfg.get("regime", {"kind": "thm1_large_K"})
        return cls(problem=dict(cfg["problem"]), algorithms=list(algorithms),
                   regime=StepRegime.from_dict(regime), grid=grid, seeds=[int(s) for s in seeds],
                   averaging=cfg.get("averaging", "tail_epoch_starts"), set=cfg.get("set"),
                   fit_cells=cfg.get("fit_cells", "in_regime"),
                   assertions=dict(cfg.get("assertions", {})), outputs=dict(cfg.get("outputs", {})))

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {"problem": self.problem, "algorithms": self.algorithms, "regime": self.regime.to_dict(),
                "grid": [list(c) for c in self.grid], "seeds": self.seeds,
                "averaging": self.averaging.value, "set": self.set, "fit_cells": self.fit_cells,
                "assertions": self.assertions, "outputs": self.outputs}


@dataclass
class CellResult:
    algorithm: str
    n: int
    K: int
    alpha: float
    regime: str
    in_regime: bool
    mean_subopt: float
    se_subopt: float
    seeds: int
    aux_mean_subopt_full_average: float = math.nan
    failed: bool = False


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    cells: list
    constants: dict
    regime_labels: dict

    def cell(self, algorithm: str, n: int, K: int) -> CellResult:
        for c in self.cells:
            if (c.algorithm, c.n, c.K) == (algorithm, n, K):
                return c
        raise KeyError((algorithm, n, K))

    def series(self, algorithm: str, n: int | None = None, in_regime_only: bool = False) -> list:
        return sorted((c for c in self.cells if c.algorithm == algorithm and (n is None or c.n == n)
                       and not c.failed and (c.in_regime or not in_regime_only)),
                      key=lambda c: (c.n, c.K))


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return repr(x)
    return str(x)


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def _feasible_for(problem: FiniteSumProblem, desc: dict | None) -> ConvexSet:
    if desc is None:
        return problem.feasible_set
    feasible = set_from_dict(desc, problem.d)
    x = problem.x_star
    if not feasible.contains(x, tol=1e-12) or projected_gradient_norm(problem, x, feasible) > 1e-8 * max(problem.G, 1.0):
        raise ConfigurationError(f"the problem optimum is not the minimiser over {desc}")
    return feasible


def _inside_ball(feasible: ConvexSet, radius: float) -> bool:
    if math.isinf(radius):
        return True
    if isinstance(feasible, FullSpace):
        return False
    if isinstance(feasible, Ball):
        return float(np.linalg.norm(feasible.center)) + feasible.radius <= radius * (1 + 1e-12)
    if isinstance(feasible, Box):
        corner = np.maximum(np.abs(feasible.lower), np.abs(feasible.upper))
        return float(np.linalg.norm(corner)) <= radius * (1 + 1e-12)
    return False


def _cell_setup(cfg: ExperimentConfig, n: int, K: int, cache: dict):
    if n not in cache:
        problem = problem_from_descriptor(cfg.problem, n=n)
        cache[n] = (problem, _feasible_for(problem, cfg.set))
    problem, feasible = cache[n]
    D = feasible.diameter()
    alpha = step_size(cfg.regime, n, K, G=problem.G, L=problem.L, mu=problem.mu, D=D)
    return problem, feasible, alpha


def regime_labels(problem: FiniteSumProblem, feasible: ConvexSet, regime: StepRegime,
                  n: int, K: int, alpha: float) -> dict:
    """Which step-size regimes have their hypotheses met at one grid cell."""
    small_step = alpha <= 2.0 / problem.L
    # G is only a valid gradient bound on the problem's ball
    certified = _inside_ball(feasible, problem.radius)
    strongly_convex = problem.mu > 0 and certified
    return {
        "thm1_large_K": bool(strongly_convex and small_step
                             and thm1_in_regime(n, K, problem.kappa, regime.l)),
        "thm2_small_K": bool(strongly_convex and small_step),
        "thm3_nonstrong": bool(math.isfinite(feasible.diameter()) and small_step and certified),
        "explicit": bool(small_step),
    }


_WORKER_CACHE: dict = {}


def _run_task(args):
    cfg_dict, algorithm, n, K, seed = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    cache = _WORKER_CACHE.setdefault(json.dumps(cfg.problem, sort_keys=True) + json.dumps(cfg.set), {})
    problem, feasible, alpha = _cell_setup(cfg, n, K, cache)
    try:
        traj = run_algorithm(algorithm, problem, feasible, K, alpha, seed, track_average=True)
    except DivergenceError as exc:
        return algorithm, n, K, seed, None, None, str(exc)
    main = suboptimality(problem, average(traj, cfg.averaging)).value
    aux = suboptimality(problem, average(traj, AveragingScheme.FULL_AVERAGE)).value
    return algorithm, n, K, seed, main, aux, None


def _mean_se(vals):
    vals = np.sort(np.asarray(vals, dtype=float))  # fixed order: reduction independent of arrival order
    if vals.size == 0:
        return math.nan, math.nan
    mean = float(np.sum(vals) / vals.size)
    se = float(np.std(vals, ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    return mean, se


def run_sweep(config: ExperimentConfig, jobs: int = 1, seed_offset: int = 0) -> ExperimentResult:
    """Run every ``(algorithm, n, K, seed)`` and aggregate per cell.

    Results do not depend on ``jobs``: each task is deterministic given its
    seed and aggregation sorts values before reducing.
    """
    seeds = [s + seed_offset for s in config.seeds]
    cfg_dict = config.to_dict()
    tasks = [(cfg_dict, a, n, K, s) for a, (n, K), s in product(config.algorithms, config.grid, seeds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        outcomes = [_run_task(t) for t in tasks]

    cache: dict = {}
    constants, labels = {}, {}
    grouped: dict = {}
    for alg, n, K, seed, main, aux, err in outcomes:
        grouped.setdefault((alg, n, K), []).append((seed, main, aux, err))

    cells = []
    for alg, (n, K) in product(config.algorithms, config.grid):
        problem, feasible, alpha = _cell_setup(config, n, K, cache)
        constants[n] = {"G": problem.G, "L": problem.L, "mu": problem.mu, "kappa": problem.kappa,
                        "D": feasible.diameter(),
                        # G is only a valid gradient bound on the problem's ball
                        "G_certified": _inside_ball(feasible, problem.radius),
                        "initial_distance": float(np.linalg.norm(problem.x_star)),
                        "thm1_min_K": (thm1_min_epochs(n, problem.kappa, config.regime.l)
                                       if problem.mu > 0 else None)}
        lab = regime_labels(problem, feasible, config.regime, n, K, alpha)
        labels[(n, K)] = lab
        rows = grouped[(alg, n, K)]
        failed = any(r[3] is not None for r in rows)
        mean, se = _mean_se([r[1] for r in rows if r[3] is None])
        aux, _ = _mean_se([r[2] for r in rows if r[3] is None])
        if failed:
            mean = se = aux = math.nan
        cells.append(CellResult(alg, n, K, alpha, config.regime.kind.value, lab[config.regime.kind.value],
                                mean, se, len(rows), aux, failed))
    return ExperimentResult(config, cells, constants, labels)


# ---------------------------------------------------------------------------
# analysis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    stderr_slope: float
    num_points: int

    def to_dict(self):
        return asdict(self)


def fit_rate(points) -> RateFit:
    """Least-squares line through ``(log x, log y)``."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ParameterError("points must be a sequence of (x, y) pairs")
    if pts.shape[0] < 3:
        raise ParameterError(f"need at least 3 points for a rate fit, got {pts.shape[0]}")
    if np.any(~(pts > 0)):
        raise DomainError("rate fits need strictly positive x and y")
    lx, ly = np.log(pts[:, 0]), np.log(pts[:, 1])
    if np.ptp(lx) == 0:
        raise ParameterError("all x values coincide")
    res = stats.linregress(lx, ly)
    r2 = float(res.rvalue ** 2) if np.isfinite(res.rvalue) else 1.0
    return RateFit(float(res.slope), float(res.intercept), min(max(r2, 0.0), 1.0),
                   max(float(res.stderr), 0.0), int(pts.shape[0]))


def thm3_bound(G: float, L: float, D: float, n: int, K: int) -> float:
    """``D^2 L / (4 n K) + 3 G D / sqrt(n K)``."""
    nK = n * K
    return D * D * L / (4.0 * nK) + 3.0 * G * D / math.sqrt(nK)


def check_thm3_bound(result: ExperimentResult, constants: dict | None = None) -> BoundReport:
    """Mean suboptimality of the full average against the explicit non-strongly-convex bound.

    ``constants`` (keys ``G``, ``L``, ``D``) applies to every cell; by default
    each ``n`` uses the constants of its own generated problem.
    """
    cfg = result.config
    if cfg.regime.kind is not RegimeKind.THM3_NONSTRONG:
        raise ConfigurationError(f"result was produced under {cfg.regime.kind.value}, not thm3_nonstrong")
    if cfg.averaging is not AveragingScheme.FULL_AVERAGE:
        raise ConfigurationError("the explicit bound applies to the full average of iterates")
    rep = BoundReport("thm3_bound", info={"slack_se": SE_SLACK})
    for c in result.cells:
        k = constants or result.constants[c.n]
        G, L, D = float(k["G"]), float(k["L"]), float(k["D"])
        if constants is None and not k["G_certified"]:
            raise ConfigurationError("the feasible set leaves the ball on which G is certified")
        if not math.isfinite(D):
            raise ConfigurationError("the explicit bound needs a bounded feasible set")
        bound = thm3_bound(G, L, D, c.n, c.K)
        rep.checked += 1
        if c.failed or not c.mean_subopt <= bound + SE_SLACK * c.se_subopt:
            rep.violations += 1
            rep.witnesses.append({"algorithm": c.algorithm, "n": c.n, "K": c.K,
                                  "mean_subopt": c.mean_subopt, "se": c.se_subopt, "bound": bound})
        rep.max_ratio = max(rep.max_ratio, c.mean_subopt / bound if bound > 0 else math.inf)
    return rep


def rate_fits(result: ExperimentResult, cells: str | None = None) -> dict:
    """Slope of mean suboptimality against ``K`` for each algorithm and fixed ``n``.

    A secondary fit against ``n`` at fixed ``K`` is added when the grid has at
    least three values of ``n``.
    """
    cells = cells or result.config.fit_cells
    out: dict = {}
    for alg in result.config.algorithms:
        entry: dict = {"vs_K": {}, "vs_n": {}}
        for n in sorted({c.n for c in result.cells}):
            ser = [c for c in result.series(alg, n, in_regime_only=(cells == "in_regime"))
                   if c.mean_subopt > 0]
            if len({c.K for c in ser}) >= 3:
                entry["vs_K"][str(n)] = fit_rate([(c.K, c.mean_subopt) for c in ser]).to_dict()
            else:
                entry["vs_K"][str(n)] = {"skipped": f"{len(ser)} usable cells (need 3)"}
        for K in sorted({c.K for c in result.cells}):
            ser = [c for c in result.series(alg, None, in_regime_only=(cells == "in_regime"))
                   if c.K == K and c.mean_subopt > 0]
            if len({c.n for c in ser}) >= 3:
                entry["vs_n"][str(K)] = fit_rate([(c.n, c.mean_subopt) for c in ser]).to_dict()
        out[alg] = entry
    return out


def evaluate_assertions(result: ExperimentResult, fits: dict) -> list:
    """Hard checks requested in the config's ``assertions`` block.

    Supported keys: ``slope_max`` ``{alg: value}``, ``slope_range``
    ``{alg: [lo, hi]}`` (both on every fixed-``n`` K-fit), ``thm3_bound``
    (bool) and ``decreasing_in_K`` (list of algorithms).
    """
    wanted = result.config.assertions
    out = []

    def slopes(alg):
        return {n: f.get("slope") for n, f in fits[alg]["vs_K"].items()}

    for alg, hi in wanted.get("slope_max", {}).items():
        for n, s in slopes(alg).items():
            out.append({"check": f"slope_max[{alg}, n={n}]", "value": s, "limit": hi,
                        "passed": s is not None and s <= hi})
    for alg, (lo, hi) in wanted.get("slope_range", {}).items():
        for n, s in slopes(alg).items():
            out.append({"check": f"slope_range[{alg}, n={n}]", "value": s, "limit": [lo, hi],
                        "passed": s is not None and lo <= s <= hi})
    for alg in wanted.get("decreasing_in_K", []):
        for n in sorted({c.n for c in result.cells}):
            ser = result.series(alg, n)
            vals = [c.mean_subopt for c in ser]
            out.append({"check": f"decreasing_in_K[{alg}, n={n}]", "value": vals,
                        "passed": all(b < a for a, b in zip(vals, vals[1:]))})
    if wanted.get("thm3_bound"):
        rep = check_thm3_bound(result)
        out.append({"check": "thm3_bound", "value": rep.max_ratio, "passed": rep.passed,
                    "report": rep.to_dict()})
    return out


# ---------------------------------------------------------------------------
# outputs
# ---------------------------------------------------------------------------

CSV_COLUMNS = ("algorithm", "n", "K", "alpha", "regime", "in_regime", "mean_subopt",
               "se_subopt", "seeds", "aux_mean_subopt_full_average", "failed")


def write_sweep_csv(result: ExperimentResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for c in result.cells:
            w.writerow([_fmt(getattr(c, col)) for col in CSV_COLUMNS])


def read_sweep_csv(path) -> list:
    """Parse a sweep CSV back into ``CellResult`` objects."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [CellResult(r["algorithm"], int(r["n"]), int(r["K"]), float(r["alpha"]), r["regime"],
                       r["in_regime"] == "1", float(r["mean_subopt"]), float(r["se_subopt"]),
                       int(r["seeds"]), float(r["aux_mean_subopt_full_average"]), r["failed"] == "1")
            for r in rows]


def plot_data(result_cells: list) -> dict:
    series = {}
    for c in result_cells:
        key = f"{c.algorithm}/n={c.n}"
        s = series.setdefault(key, {"algorithm": c.algorithm, "n": c.n, "K": [], "mean_subopt": [],
                                    "se_subopt": []})
        s["K"].append(c.K)
        s["mean_subopt"].append(c.mean_subopt if not c.failed else None)
        s["se_subopt"].append(c.se_subopt if not c.failed else None)
    for s in series.values():
        order = np.argsort(s["K"], kind="stable")
        for k in ("K", "mean_subopt", "se_subopt"):
            s[k] = [s[k][j] for j in order]
    return {"series": [series[k] for k in sorted(series)]}


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def emit_outputs(result: ExperimentResult, out_dir, assertions: list | None = None) -> dict:
    """Write ``sweep.csv``, ``summary.json`` and ``plotdata.json`` into ``out_dir``."""
    if not result.cells:
        raise ParameterError("result has no cells")
    out_dir = Path(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    names = {"csv": "sweep.csv", "summary": "summary.json", "plotdata": "plotdata.json",
             **result.config.outputs}
    paths = {k: out_dir / v for k, v in names.items()}

    write_sweep_csv(result, paths["csv"])
    fits = rate_fits(result)
    summary = {
        "config": result.config.to_dict(),
        "constants": {str(n): v for n, v in sorted(result.constants.items())},
        "regime_labels": {f"{n},{K}": v for (n, K), v in sorted(result.regime_labels.items())},
        "rate_fits": fits,
        "rate_fits_all_cells": rate_fits(result, "all"),
        "failed_cells": [[c.algorithm, c.n, c.K] for c in result.cells if c.failed],
    }
    if assertions is not None:
        summary["assertions"] = assertions
    write_json(summary, paths["summary"])
    write_json(plot_data(result.cells), paths["plotdata"])
    return paths
