"""Command line entry point: ``sgdo {sweep,couple,verify,plotdata} --config PATH --out DIR``.

Each subcommand reads one JSON document and writes JSON/CSV into ``--out``.
The exit status is 0 iff every hard assertion passed, 1 if any failed and 2
for configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import coupling, harness
from .errors import SgdoError
from .geometry import set_from_dict
from .problems import problem_from_descriptor, verify_assumptions
from .sampler import RandomStream

log = logging.getLogger("sgdo")


def _load(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def cmd_sweep(args) -> bool:
    cfg = harness.ExperimentConfig.load(args.config)
    result = harness.run_sweep(cfg, jobs=args.jobs, seed_offset=args.seed_offset)
    checks = harness.evaluate_assertions(result, harness.rate_fits(result))
    paths = harness.emit_outputs(result, args.out, assertions=checks)
    for c in checks:
        log.info("%s %s value=%s", "PASS" if c["passed"] else "FAIL", c["check"], c["value"])
    failed = [c.algorithm + f"(n={c.n},K={c.K})" for c in result.cells if c.failed]
    if failed:
        log.warning("diverged cells: %s", ", ".join(failed))
    log.info("wrote %s", ", ".join(str(p) for p in paths.values()))
    return all(c["passed"] for c in checks)


def _couple_problem(cfg: dict):
    problem = problem_from_descriptor(cfg["problem"])
    feasible = set_from_dict(cfg["set"], problem.d) if cfg.get("set") else problem.feasible_set
    alpha = float(cfg["alpha"]) if "alpha" in cfg else float(cfg.get("alpha_fraction", 0.5)) * 2.0 / problem.L
    return problem, feasible, alpha


def cmd_couple(args) -> bool:
    """Stability, coupling, bias and temporal-regularity checks on one problem.

    Config keys: ``problem``, optional ``set``, ``alpha`` or ``alpha_fraction``
    (of ``2/L``, default 0.5), ``pairs`` (default 10000), ``samples`` (default
    10000), ``warmup_epochs`` (default 0) and ``seed``.
    """
    cfg = _load(args.config)
    problem, feasible, alpha = _couple_problem(cfg)
    seed = int(cfg.get("seed", 0)) + args.seed_offset
    pairs = int(cfg.get("pairs", 10_000))
    m = int(cfg.get("samples", 10_000))
    start = coupling.warmup_start(problem, feasible, alpha, int(cfg.get("warmup_epochs", 0)), seed)

    reports = [
        coupling.stability_report(problem, feasible, start, alpha, pairs, RandomStream(seed, 101)),
        coupling.coupling_report(problem, feasible, start, alpha, m, RandomStream(seed, 102)),
        coupling.temporal_regularity_report(problem, feasible, start, alpha, m, RandomStream(seed, 103)),
    ]
    out = [r.to_dict() for r in reports]
    for i in range(problem.n):
        est = coupling.bias_estimate(problem, feasible, start, alpha, i, m, RandomStream(seed, 200 + i),
                                     strict=False)
        out.append(est.to_dict())
    Path(args.out).mkdir(parents=True, exist_ok=True)
    harness.write_json({"problem": problem.descriptor(), "alpha": alpha, "seed": seed, "checks": out},
                       Path(args.out) / "couple.json")
    for r in out:
        log.info("%s %s violations=%s", "PASS" if r["violations"] == 0 else "FAIL",
                 r["check"] + (f"[i={r['i']}]" if "i" in r else ""), r["violations"])
    return all(r["violations"] == 0 for r in out)


def cmd_verify(args) -> bool:
    """Sample-based check of the Lipschitz, smoothness, strong convexity and cocoercivity constants."""
    cfg = _load(args.config)
    problem = problem_from_descriptor(cfg["problem"])
    feasible = set_from_dict(cfg["set"], problem.d) if cfg.get("set") else None
    rep = verify_assumptions(problem, feasible, num_samples=int(cfg.get("samples", 1000)),
                             seed=int(cfg.get("seed", 0)) + args.seed_offset)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    harness.write_json({"problem": problem.descriptor(), "report": rep.to_dict()},
                       Path(args.out) / "verify.json")
    log.info("%s assumptions (%d witnesses)", "PASS" if rep.ok else "FAIL", len(rep.witnesses))
    return rep.ok


def cmd_plotdata(args) -> bool:
    """Rebuild ``plotdata.json`` from the sweep CSV already in ``--out``."""
    cfg = harness.ExperimentConfig.load(args.config)
    out = Path(args.out)
    names = {"csv": "sweep.csv", "plotdata": "plotdata.json", **cfg.outputs}
    cells = harness.read_sweep_csv(out / names["csv"])
    harness.write_json(harness.plot_data(cells), out / names["plotdata"])
    return True


COMMANDS = {"sweep": cmd_sweep, "couple": cmd_couple, "verify": cmd_verify, "plotdata": cmd_plotdata}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgdo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__.splitlines()[0] if fn.__doc__ else name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="worker processes (results do not depend on it)")
        p.add_argument("--seed-offset", type=int, default=0, help="added to every seed in the config")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    if args.jobs < 1:
        log.error("--jobs must be >= 1")
        return 2
    try:
        ok = COMMANDS[args.command](args)
    except (SgdoError, ValueError, KeyError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 2
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
