"""Command-line entry point ``irs-uplink``.

Every subcommand prints a block of ``key: value`` lines (floats with 12
significant digits) and writes any requested file atomically. Exit status is
0 on success, 2 for configuration errors and 3 for numerical failures. A sweep
that completes with one or more failed points exits with 1.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .channel import NumericError, RbmPhases, build_statistics, cached_statistics
from .ioutil import format_value, write_csv
from .montecarlo import CSV_HEADER as MC_HEADER, mc_nmse, mc_sinr_terms
from .optimizer import OptimizerConfig, run_pga
from .performance import FORMS, evaluate
from .scenario import Scenario, ScenarioError, default_scenario, load_scenario
from .sweeps import load_sweep, run_sweep

EXIT_POINTS_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
WORKERS_ENV = "IRS_UPLINK_WORKERS"

log = logging.getLogger("irs_uplink")


class _Printer:
    """Single writer for the metrics block."""

    def __init__(self, quiet: bool):
        self.quiet = quiet

    def __call__(self, key: str, value) -> None:
        if not self.quiet:
            print(f"{key}: {format_value(value)}")


def _scenario(args) -> Scenario:
    if args.config is None:
        sc = default_scenario()
    else:
        path = Path(args.config)
        if not path.is_file():
            raise ScenarioError("--config", f"file {str(path)!r} not found")
        sc = load_scenario(path)
    if args.seed is not None:
        sc = sc.replace(seed=args.seed)
    return sc


def _statistics(args, sc: Scenario):
    return cached_statistics(sc, args.cache) if args.cache else build_statistics(sc)


def _rbm(args, stats, sc, out):
    """Default phases, or optimised ones when ``--optimize`` is given."""
    if not getattr(args, "optimize", False):
        return RbmPhases.default(stats.N)
    trace = run_pga(stats, sc, form=args.form, perfect_csi=args.perfect_csi)
    out("optimizer_status", trace.status)
    out("optimizer_iterations", trace.iterations)
    return trace.final_rbm


def cmd_validate(args, out) -> int:
    sc = _scenario(args)
    out("status", "ok")
    for key in ("M", "N", "K", "tau_c", "tau", "seed"):
        out(key, getattr(sc, key))
    out("kappa_bs", sc.kappa_bs)
    out("kappa_ue", sc.kappa_ue)
    out("phase_noise", f"{sc.phase_noise.kind}({format_value(sc.phase_noise.kappa_theta)})")
    out("statistics_key", sc.statistics_key())
    return 0


def cmd_stats(args, out) -> int:
    sc = _scenario(args)
    stats = _statistics(args, sc)
    out("statistics_key", sc.statistics_key())
    out("m", stats.m)
    out("m2", stats.m2)
    out("beta1", stats.beta1)
    for k in range(stats.K):
        out(f"beta2[{k}]", float(stats.beta2[k]))
        out(f"beta_d[{k}]", float(stats.beta_d[k]))
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(f".{path.name}.tmp.npz")
        stats.save(tmp)
        tmp.replace(path)
        out("written", str(path))
    return 0


def cmd_evaluate(args, out) -> int:
    sc = _scenario(args)
    stats = _statistics(args, sc)
    rbm = _rbm(args, stats, sc, out)
    ev = evaluate(stats, rbm, sc, form=args.form, perfect_csi=args.perfect_csi)
    for k in range(sc.K):
        out(f"gamma[{k}]", float(ev.breakdown.gamma[k]))
    for k in range(sc.K):
        out(f"nmse[{k}]", float(ev.nmse[k]))
    out("sum_se", ev.sum_se)
    if args.out:
        write_csv(args.out, ("quantity", "ue", "value"), ev.rows())
        out("written", args.out)
    return 0


def cmd_optimize(args, out) -> int:
    sc = _scenario(args)
    stats = _statistics(args, sc)
    cfg = OptimizerConfig(epsilon=args.epsilon, max_iters=args.max_iters)
    trace = run_pga(stats, sc, cfg, form=args.form, perfect_csi=args.perfect_csi)
    out("status", trace.status)
    out("iterations", trace.iterations)
    out("accepted_steps", trace.accepted_steps)
    out("initial_sum_se", trace.initial_objective)
    out("final_sum_se", trace.final_objective)
    out("final_grad_norm", trace.grad_norm[-1])
    if args.out:
        trace.to_csv(args.out)
        out("written", args.out)
    if args.phases_out:
        ang = np.angle(trace.final_phases)
        write_csv(args.phases_out, ("element", "phase_rad"),
                  [(n, float(a)) for n, a in enumerate(ang)])
        out("written", args.phases_out)
    return 0


def cmd_validate_mc(args, out) -> int:
    sc = _scenario(args)
    stats = _statistics(args, sc)
    rbm = _rbm(args, stats, sc, out)
    rep = mc_sinr_terms(stats, rbm, sc, args.trials, form=args.form,
                        perfect_csi=args.perfect_csi)
    if not args.perfect_csi:
        rep.rows.extend(mc_nmse(stats, rbm, sc, args.trials).rows)
    out("trials", args.trials)
    names = dict.fromkeys(r.term.split("[")[0] for r in rep.rows)
    for name in names:
        out(f"max_rel_err[{name}]", rep.max_rel_err([name]))
    out("max_rel_err", rep.max_rel_err())
    if args.out:
        write_csv(args.out, MC_HEADER, rep.csv_rows())
        out("written", args.out)
    return 0


def cmd_sweep(args, out) -> int:
    if args.config is None:
        raise ScenarioError("--config", "sweep needs a sweep file")
    path = Path(args.config)
    if not path.is_file():
        raise ScenarioError("--config", f"file {str(path)!r} not found")
    spec = load_sweep(path)
    changes = {}
    if args.seed is not None:
        changes["base"] = spec.base.replace(seed=args.seed)
    if args.out:
        changes["output"] = Path(args.out)
    if args.trials is not None:
        changes["trials"] = args.trials
    if args.optimize:
        changes["optimize_rbm"] = True
    if changes:
        spec = dataclasses.replace(spec, **changes)
    workers = args.workers or int(os.environ.get(WORKERS_ENV, "1") or 1)
    rows = run_sweep(spec, workers=workers)
    failed = sum(1 for r in rows if r[-1])
    out("points", len(rows))
    out("failed", failed)
    if spec.output is not None:
        out("written", str(spec.output))
    return EXIT_POINTS_FAILED if failed else 0


COMMANDS = {
    "validate": cmd_validate,
    "stats": cmd_stats,
    "evaluate": cmd_evaluate,
    "optimize": cmd_optimize,
    "validate-mc": cmd_validate_mc,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="scenario YAML (sweep file for 'sweep')")
    common.add_argument("--seed", type=int, metavar="U64", help="override the scenario seed")
    common.add_argument("--out", metavar="PATH", help="output file")
    common.add_argument("--cache", metavar="DIR", help="channel-statistics cache directory")
    common.add_argument("-q", "--quiet", action="store_true", help="suppress the metrics block")
    common.add_argument("-v", "--verbose", action="count", default=0)

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--form", choices=FORMS, default="exact", help="closed form to use")
    model.add_argument("--perfect-csi", action="store_true",
                       help="evaluate with the true channel instead of its estimate")

    p = argparse.ArgumentParser(prog="irs-uplink", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="check a scenario file")
    sub.add_parser("stats", parents=[common], help="build (and cache) channel statistics")
    e = sub.add_parser("evaluate", parents=[common, model], help="closed-form SINR and sum SE")
    e.add_argument("--optimize", action="store_true", help="optimise the phases first")
    o = sub.add_parser("optimize", parents=[common, model], help="projected gradient ascent")
    o.add_argument("--epsilon", type=float, default=OptimizerConfig.epsilon)
    o.add_argument("--max-iters", type=int, default=OptimizerConfig.max_iters)
    o.add_argument("--phases-out", metavar="PATH", help="CSV of the optimised phases")
    m = sub.add_parser("validate-mc", parents=[common, model],
                       help="Monte-Carlo check of every closed-form term")
    m.add_argument("--trials", type=int, default=20000)
    m.add_argument("--optimize", action="store_true", help="optimise the phases first")
    s = sub.add_parser("sweep", parents=[common], help="run a sweep file")
    s.add_argument("--trials", type=int, default=None, help="Monte-Carlo overlay trials")
    s.add_argument("--optimize", action="store_true", help="optimise every point")
    s.add_argument("--workers", type=int, default=None,
                   help=f"parallel worker processes (default ${WORKERS_ENV} or 1)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    out = _Printer(args.quiet)
    try:
        return COMMANDS[args.command](args, out)
    except ScenarioError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # remaining value errors come from invalid option values
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
