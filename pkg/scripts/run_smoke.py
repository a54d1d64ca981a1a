"""Single-arm learning check: reward gain and goal success over three seeds.

    python scripts/run_smoke.py --out runs/smoke
"""

import argparse
from pathlib import Path

from mldsim.config import load_config
from mldsim.harness import read_metrics, run_training

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "smoke.toml"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--out", type=Path, default=Path("runs/smoke"))
    ap.add_argument("--override", action="append", default=[])
    args = ap.parse_args()

    passed = 0
    for seed in args.seeds:
        cfg = load_config(CONFIG, args.override, seed)
        out = args.out / f"seed{seed}"
        summary = run_training(cfg, out)
        m = read_metrics(out / "metrics_agent1.csv")
        r = m["cum_reward"]
        gain = r[-100:].mean() - r[:100].mean()
        success = m["reached_goal"][-100:].mean()
        ok = gain >= 5.0 and success >= 0.5
        passed += ok
        print(f"seed {seed}: first100 {r[:100].mean():+.2f} last100 {r[-100:].mean():+.2f} "
              f"gain {gain:+.2f} success {success:.2f} "
              f"({summary.wall_clock_seconds / 60:.1f} min) {'ok' if ok else 'miss'}")
    print(f"{passed}/{len(args.seeds)} seeds meet gain >= 5 and success >= 0.5")


if __name__ == "__main__":
    main()
