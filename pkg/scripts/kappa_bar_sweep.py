"""Sum SE against the common distortion level for several array sizes.

The UE distortion is offset from the BS one (kappa_UE = kappa_bar + 0.03),
which a single sweep axis cannot express, so the grid is built here. The
receive SNR is 20 dB, phase noise is off and the phases are at their default.
Usage::

    python3 scripts/kappa_bar_sweep.py [--out results/kappa_bar.csv]
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from irs_uplink.channel import RbmPhases, build_statistics
from irs_uplink.ioutil import write_csv
from irs_uplink.optimizer import sum_se_value
from irs_uplink.scenario import PhaseNoiseModel, load_scenario
from irs_uplink.sweeps import apply_axis

HERE = Path(__file__).parent
SQRT_KAPPA_BAR = np.round(np.arange(0.0, 0.51, 0.1), 2)
CURVES = {"M=8": dict(M=8), "M=16": dict(M=16), "M=32": dict(M=32),
          "N=30": dict(N=30), "N=120": dict(N=120)}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=HERE / "configs" / "default.yaml")
    ap.add_argument("--out", type=Path, default=HERE / "results" / "kappa_bar.csv")
    args = ap.parse_args(argv)

    base = load_scenario(args.config).replace(phase_noise=PhaseNoiseModel("none", 0.0))
    rows = []
    for label, overrides in CURVES.items():
        sc = base.replace(**overrides)
        stats = build_statistics(sc)
        sc = apply_axis(sc, "snr_db", 20.0, stats)
        rbm = RbmPhases.default(sc.N)
        for s in SQRT_KAPPA_BAR:
            k = float(s * s)
            value = sum_se_value(stats, rbm, sc.replace(kappa_bs=k, kappa_ue=k + 0.03))
            rows.append((label, float(s), value))
            print(f"{label:>6}  sqrt(kappa_bar)={s:.1f}  sum_se={value:.4f}")
    write_csv(args.out, ("curve", "sqrt_kappa_bar", "sum_se"), rows)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
