"""Run both study presets at full size and print a summary table.

    python scripts/run_presets.py [--out results] [--seed 42] [--workers N]
"""

import argparse
import json
import time
from pathlib import Path

from tokensim.cli import main


def summarize(out: Path) -> None:
    manifest = json.loads((out / "manifest.json").read_text())
    print(f"{'A0 (XNS)':>12} {'lambda':>8} {'drift':>9} {'final price':>12} {'final pool':>14}")
    for s in manifest["scenarios"]:
        if "error" in s:
            print(f"{s['initial_pool_xns']:>12.4g} {s['decay_rate_per_day']:>8} error: {s['error']}")
            continue
        last = (out / s["mean_csv"]).read_text().splitlines()[-1].split(",")
        print(f"{s['initial_pool_xns']:>12.4g} {s['decay_rate_per_day']:>8} "
              f"{s['max_supply_drift']:>9.1e} {float(last[5]):>12.5f} {float(last[2]):>14.1f}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="results")
    ap.add_argument("--seed", default="42")
    ap.add_argument("--workers", default=None)
    args = ap.parse_args()
    for name in ("table1", "table2"):
        dest = Path(args.out) / name
        argv = ["sweep", "--preset", name, "--seed", args.seed, "--out", str(dest)]
        if args.workers:
            argv += ["--workers", args.workers]
        start = time.perf_counter()
        code = main(argv)
        print(f"\n{name}: exit {code} in {time.perf_counter() - start:.1f}s -> {dest}")
        summarize(dest)
