"""Monte-Carlo check of the closed form on the reduced desk instance.

Runs the simulation at increasing trial counts and writes one CSV per count.
Each row is written with its relative error and z-score against the closed
form. Usage::

    python3 scripts/desk_validation.py [--trials 20000 200000] [--out-dir results]
"""

from __future__ import annotations

import argparse
from pathlib import Path

from irs_uplink.channel import RbmPhases, build_statistics
from irs_uplink.montecarlo import mc_nmse, mc_sinr_terms
from irs_uplink.scenario import load_scenario

HERE = Path(__file__).parent


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=HERE / "configs" / "desk.yaml")
    ap.add_argument("--trials", type=int, nargs="+", default=[20000, 200000])
    ap.add_argument("--out-dir", type=Path, default=HERE / "results")
    args = ap.parse_args(argv)

    sc = load_scenario(args.config)
    stats = build_statistics(sc)
    rbm = RbmPhases.default(sc.N)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for trials in args.trials:
        report = mc_sinr_terms(stats, rbm, sc, trials)
        report.rows += mc_nmse(stats, rbm, sc, trials).rows
        path = report.to_csv(args.out_dir / f"desk_mc_{trials}.csv")
        worst = max(report.rows, key=lambda r: r.rel_err)
        top_z = max(report.rows, key=lambda r: r.z_score)
        print(f"trials {trials}: max rel err {worst.rel_err:.2%} ({worst.term}), "
              f"max z {top_z.z_score:.2f} ({top_z.term}) -> {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
