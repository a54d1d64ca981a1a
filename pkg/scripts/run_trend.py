"""Dual-arm run: does robot 2 (far from the human) learn faster than robot 1?

Prints, per seed, the share of the final 400 episodes where robot 2's
window-50 moving average is at least robot 1's.

    python scripts/run_trend.py --out runs/trend
"""

import argparse
from pathlib import Path

import numpy as np

from mldsim.config import load_config
from mldsim.harness import read_metrics, run_training, smooth

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "trend.toml"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--out", type=Path, default=Path("runs/trend"))
    ap.add_argument("--override", action="append", default=[])
    args = ap.parse_args()

    passed = 0
    for seed in args.seeds:
        cfg = load_config(CONFIG, args.override, seed)
        out = args.out / f"seed{seed}"
        summary = run_training(cfg, out)
        r1 = read_metrics(out / "metrics_agent1.csv")["cum_reward"]
        r2 = read_metrics(out / "metrics_agent2.csv")["cum_reward"]
        s1, s2 = smooth(r1, cfg.smoothing_window), smooth(r2, cfg.smoothing_window)
        frac = float(np.mean(s2[-400:] >= s1[-400:]))
        passed += frac >= 0.6
        print(f"seed {seed}: episodes {len(r1)}; last100 robot1 {r1[-100:].mean():+.2f} "
              f"robot2 {r2[-100:].mean():+.2f}; robot2 ahead on {frac:.0%} of final 400 "
              f"({summary.wall_clock_seconds / 60:.1f} min)")
    print(f"{passed}/{len(args.seeds)} seeds with robot 2 ahead on >= 60% of the final 400 episodes")


if __name__ == "__main__":
    main()
