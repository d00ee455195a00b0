"""End-to-end acceptance checks, one per criterion.

Each ``criterion_N`` returns ``(passed, detail)``; the pytest wrappers record a
PASS/FAIL line that ``conftest.py`` prints in the terminal summary. Running
this file directly prints the same lines without pytest.
"""

import itertools
import math
import os
import sys
from collections import Counter

import numpy as np
import pytest

from sgdo.coupling import (bias_estimate, coupling_report, exact_bias, stability_report,
                           temporal_regularity_report, warmup_start)
from sgdo.geometry import Ball, Box, FullSpace
from sgdo.harness import ExperimentConfig, check_thm3_bound, rate_fits, run_sweep
from sgdo.optimizer import run_gd, run_sgdo
from sgdo.problems import (least_squares_from_data, make_identical_components, make_least_squares,
                           make_logistic)
from sgdo.sampler import Permutation, RandomStream, all_permutations, lambda_op, lambda_pushforward_matches

RESULTS = {}
JOBS = max(1, min(8, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else 1))


def _record(num, title, passed, detail):
    RESULTS[num] = f"criterion {num:>2} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    return passed


# ---------------------------------------------------------------------------

RATE_CONFIG = {
    "problem": {"kind": "least_squares", "n": 64, "d": 5, "kappa_target": 2.0, "radius": 10.0,
                "seed": 0, "noise": 0.5},
    "algorithms": ["sgdo", "sgd"],
    "regime": {"kind": "thm1_large_K", "l": 1.0},
    "grid": {"n": [64], "K": [64, 128, 256, 512]},
    "seeds": {"count": 20},
    "averaging": "tail_epoch_starts",
    # the large-K gate is unreachable at these K for any kappa >= 1 (see notes), so fit every cell
    "fit_cells": "all",
}


def criterion_1():
    cfg = ExperimentConfig.from_dict(RATE_CONFIG)
    res = run_sweep(cfg, jobs=JOBS)
    fits = rate_fits(res)
    s_o = fits["sgdo"]["vs_K"]["64"]["slope"]
    s_r = fits["sgd"]["vs_K"]["64"]["slope"]
    k = res.constants[64]
    in_regime = sum(c.in_regime for c in res.cells)
    decreasing = all(b.mean_subopt < a.mean_subopt for alg in ("sgdo", "sgd")
                     for a, b in zip(res.series(alg, 64), res.series(alg, 64)[1:]))
    ok = s_o <= -1.6 and -1.4 <= s_r <= -0.6 and decreasing
    return ok, (f"slope sgdo={s_o:.3f} (<= -1.6), sgd={s_r:.3f} (in [-1.4, -0.6]); "
                f"gram cond={RATE_CONFIG['problem']['kappa_target']}, L/mu={k['kappa']:.1f}, "
                f"cells in thm1 regime {in_regime}/{len(res.cells)}, min K for gate={k['thm1_min_K']}")


def criterion_2():
    problem = {"kind": "least_squares", "n": 8, "d": 4, "rank": 2, "kappa_target": 2.0,
               "radius": 2.0, "seed": 3, "noise": 0.5}
    cfg = ExperimentConfig.from_dict({
        "problem": problem, "algorithms": ["sgdo"], "regime": {"kind": "thm3_nonstrong"},
        "grid": {"n": [8, 32], "K": [1, 4, 16, 64]}, "seeds": {"count": 20},
        "averaging": "full_average"})
    res = run_sweep(cfg, jobs=JOBS)
    rep = check_thm3_bound(res)
    mu_zero = all(c["mu"] == 0.0 for c in res.constants.values())
    return rep.passed and mu_zero, (f"{rep.checked} cells, {rep.violations} violations, "
                                    f"max mean/bound={rep.max_ratio:.3g}, mu=0: {mu_zero}")


def _problems(n):
    return {"quadratic": make_least_squares(n, 3, 2.0, 4.0, n),
            "logistic": make_logistic(n, 3, 0.1, 3.0, n)}


def criterion_3():
    total = bad = 0
    worst = 0.0
    for n in (5, 20):
        for name, p in _problems(n).items():
            starts = p.feasible_set.sample(np.random.default_rng(n), 100)
            for frac in (1.0, 0.25):
                rep = stability_report(p, p.feasible_set, starts, frac * 2.0 / p.L, 10_000,
                                       RandomStream(n, 31))
                total += rep.checked
                bad += rep.violations
                worst = max(worst, rep.max_ratio)
    return bad == 0, f"{total} (pair, i) checks over 10^4 pairs per setting, {bad} violations, max ratio {worst:.3f}"


def criterion_4():
    total = bad = 0
    worst = 0.0
    for n in (5, 20):
        for name, p in _problems(n).items():
            alpha = 1.0 / p.L
            for start in (p.feasible_set.sample(np.random.default_rng(1), 1)[0],
                          warmup_start(p, p.feasible_set, alpha, 5, 2)):
                rep = coupling_report(p, p.feasible_set, start, alpha, 10_000, RandomStream(n, 41))
                total += rep.checked
                bad += rep.violations
                worst = max(worst, rep.max_ratio)
    return bad == 0, f"{total} per-sample distances over all (i, r), {bad} violations, max ratio {worst:.3f}"


def criterion_5():
    checks = fails = 0
    worst = 0.0
    for n in (5, 20):
        for name, p in _problems(n).items():
            start = warmup_start(p, p.feasible_set, 1.0 / p.L, 3, 0)
            for frac in (0.05, 0.5, 1.0):
                for i in sorted({0, 1, n // 2, n - 1}):
                    est = bias_estimate(p, p.feasible_set, start, frac * 2.0 / p.L, i, 10_000,
                                        RandomStream(n * 100 + i, 51), strict=False)
                    checks += 1
                    fails += not est.holds
                    worst = max(worst, est.bias / est.bound)
    # enumeration on n=3, d=1 against Monte Carlo
    q = least_squares_from_data([[1.0], [1.0], [1.0]], [0.0, 1.0, 3.0], radius=5.0)
    agree = 0
    for i in range(3):
        exact = exact_bias(q, q.feasible_set, [2.0], 0.4, i)
        est = bias_estimate(q, q.feasible_set, [2.0], 0.4, i, 100_000, RandomStream(i, 52))
        agree += abs((est.mean_F - est.mean_f) - exact) <= 4 * est.standard_error + 1e-15
    return fails == 0 and agree == 3, (f"{checks} (problem, alpha, i) checks, {fails} failures, "
                                       f"max bias/bound {worst:.3g}; enumeration agrees {agree}/3")


def criterion_6():
    checks = fails = 0
    tight = 0.0
    for name, p in _problems(10).items():
        far = -p.x_star / max(np.linalg.norm(p.x_star), 1e-12) * p.radius
        near = warmup_start(p, p.feasible_set, 0.5 / p.L, 30, 0)
        for start in (far, near):
            for frac in (1.0, 0.1):
                rep = temporal_regularity_report(p, p.feasible_set, start, frac * 2.0 / p.L, 10_000,
                                                 RandomStream(61))
                checks += rep.checked
                fails += rep.violations
                tight = max(tight, rep.max_ratio)
    return fails == 0, f"{checks} (start, alpha, i, inequality) checks, {fails} violations, tightness {tight:.3g}"


def criterion_7():
    gen = RandomStream(71).generator()
    mismatched = 0
    for t in range(100):
        seed = int(gen.integers(0, 2**62))
        n = int(gen.integers(1, 25))
        K = int(gen.integers(1, 25))
        if t % 2:
            base = make_logistic(1, 3, 0.2, 3.0, t)
        else:
            base = least_squares_from_data(gen.standard_normal((1, 2)), gen.standard_normal(1), radius=3.0)
        p = make_identical_components(base, n)
        alpha = float(gen.uniform(0.0, 2.0 / p.L))
        a = run_sgdo(p, p.feasible_set, K, alpha, seed, keep_iterates=True)
        b = run_gd(p, p.feasible_set, n * K, alpha, steps_per_epoch=n, keep_iterates=True)
        mismatched += not np.array_equal(a.iterates, b.iterates)
    return mismatched == 0, f"100 random (seed, n, K, alpha) configurations, {mismatched} not bit-identical"


def criterion_8():
    sets = {"full_space": FullSpace(4), "ball": Ball.centered(4, 1.5),
            "offset_ball": Ball(np.array([1.0, -1.0, 0.0, 2.0]), 0.7),
            "box": Box(np.array([-1.0, 0.0, -2.0, 0.5]), np.array([1.0, 0.2, 3.0, 0.6]))}
    rng = np.random.default_rng(81)
    bad = 0
    for s in sets.values():
        A = rng.normal(scale=3.0, size=(10_000, 4))
        B = rng.normal(scale=3.0, size=(10_000, 4))
        PA, PB = s.project_batch(A), s.project_batch(B)
        bad += int(np.count_nonzero(np.linalg.norm(PA - PB, axis=1) > np.linalg.norm(A - B, axis=1) + 1e-12))
        bad += int(np.count_nonzero(np.any(s.project_batch(PA) != PA, axis=1)))
    return bad == 0, f"{len(sets)} set variants x 10^4 pairs, {bad} violations"


def criterion_9():
    cases = bad = 0
    for n in range(1, 6):
        perms = [Permutation(p, check=False) for p in all_permutations(n)]
        for r in range(1, n + 1):
            for i in range(n):
                cases += 1
                pushed = Counter(lambda_op(p, r, i).as_tuple() for p in perms)
                cond = {p.as_tuple() for p in perms if p(i + 1) == r}
                same = set(pushed) == cond and len(set(pushed.values())) == 1
                bad += not (same and lambda_pushforward_matches(n, r, i))
    return bad == 0, f"{cases} (n <= 5, r, i) cases enumerated exactly, {bad} mismatches"


def criterion_10():
    a = [0.0, 1.0, 3.0]
    alpha, x0 = 0.4, 0.0
    p = least_squares_from_data(np.ones((3, 1)), a, radius=10.0)
    exact = []
    for perm in itertools.permutations((1, 2, 3)):
        x = x0
        for j in perm:
            x = (1 - alpha) * x + alpha * a[j - 1]
        exact.append(x)
    expect = float(np.mean(exact))
    m = 100_000
    xs = np.array([run_sgdo(p, p.feasible_set, 1, alpha, s).final[0] for s in range(m)])
    se = float(xs.std(ddof=1) / math.sqrt(m))
    gap = abs(float(xs.mean()) - expect)
    return gap <= 4 * se, f"E[x_3] exact={expect:.6f}, MC={xs.mean():.6f}, |gap|={gap:.2e} <= 4 SE={4 * se:.2e}"


CRITERIA = {
    1: ("rate separation", criterion_1),
    2: ("explicit non-strongly-convex bound", criterion_2),
    3: ("almost-sure stability", criterion_3),
    4: ("per-sample coupling bound", criterion_4),
    5: ("bias bound", criterion_5),
    6: ("temporal regularity", criterion_6),
    7: ("identical components equal GD", criterion_7),
    8: ("projection geometry", criterion_8),
    9: ("single-swap pushforward law", criterion_9),
    10: ("exact one-epoch expectation", criterion_10),
}


@pytest.mark.parametrize("num", sorted(CRITERIA))
def test_criterion(num):
    title, fn = CRITERIA[num]
    passed, detail = fn()
    _record(num, title, passed, detail)
    print(RESULTS[num])
    assert passed, RESULTS[num]


if __name__ == "__main__":
    ok = True
    for num in sorted(CRITERIA):
        title, fn = CRITERIA[num]
        ok &= _record(num, title, *fn())
        print(RESULTS[num], flush=True)
    sys.exit(0 if ok else 1)
