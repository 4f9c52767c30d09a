"""Final regret and tail slope for every learner x regime pair.

    python3 scripts/run_regimes.py --horizon 50000 --seeds 0,1,2,3,4
    python3 scripts/run_regimes.py --horizon 20000 --schedule fkm --learners adept,gdg
"""

import argparse
import time

import numpy as np

from pricelab.harness import ExperimentConfig, LearnerSpec, run_many, tail_slope
from pricelab.regimes import REGIME_KINDS, RegimeSpec


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--horizon", type=int, default=50_000)
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--learners", default="adept,gdg,ee")
    ap.add_argument("--regimes", default=",".join(REGIME_KINDS))
    ap.add_argument("--schedule", default="theorem", choices=["theorem", "fkm"])
    ap.add_argument("--theta-base", default="optimum")
    ap.add_argument("--rho", type=float, default=0.5)
    args = ap.parse_args()

    seeds = tuple(int(s) for s in args.seeds.split(","))
    tb = args.theta_base if args.theta_base == "optimum" else float(args.theta_base)
    print(f"{'regime':<14}{'learner':<8}{'final regret':>16}{'sd':>12}{'tail slope':>12}{'secs':>8}")
    for regime in args.regimes.split(","):
        for name in args.learners.split(","):
            cfg = ExperimentConfig(name="matrix", regime=RegimeSpec(kind=regime, horizon=args.horizon),
                                   learner=LearnerSpec(name=name, schedule=args.schedule),
                                   theta_base=tb, seeds=seeds)
            t0 = time.time()
            runs = run_many(cfg)
            finals = np.array([r.regret_cum[-1] for r in runs])
            slopes = []
            for r in runs:
                try:
                    slopes.append(tail_slope(r.regret_cum, args.rho).alpha_hat)
                except ValueError:
                    slopes.append(np.nan)
            sd = finals.std(ddof=1) if len(finals) > 1 else 0.0
            print(f"{regime:<14}{name:<8}{finals.mean():>16.4g}{sd:>12.3g}{np.nanmean(slopes):>12.3f}"
                  f"{time.time() - t0:>8.1f}", flush=True)


if __name__ == "__main__":
    main()
