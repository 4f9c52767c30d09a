"""Instantaneous regret around the structural shocks, averaged over seeds.

Pre-shock window: rounds [s - 2000, s).  Post-shock window: [s + 500, s + 2500].

    python3 scripts/shock_windows.py --learner adept --horizon 50000
"""

import argparse

import numpy as np

from pricelab.harness import ExperimentConfig, LearnerSpec, run_many
from pricelab.regimes import RegimeSpec


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--learner", default="adept")
    ap.add_argument("--horizon", type=int, default=50_000)
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--schedule", default="theorem", choices=["theorem", "fkm"])
    args = ap.parse_args()
    regime = RegimeSpec(kind="shocks", horizon=args.horizon)
    cfg = ExperimentConfig(name="shocks", regime=regime,
                           learner=LearnerSpec(name=args.learner, schedule=args.schedule),
                           seeds=tuple(int(s) for s in args.seeds.split(",")))
    inst = np.mean([r.regret_inst for r in run_many(cfg)], axis=0)
    for s in regime.shock_times:
        pre = inst[max(0, s - 2001):s - 1].mean()
        post = inst[s + 499:min(args.horizon, s + 2500)].mean()
        print(f"shock at t={s}: pre {pre:.5g}  post {post:.5g}  ratio {post / pre:.3f}")


if __name__ == "__main__":
    main()
