"""Final-day price against initial pool size, noise off, for both decay rates."""

import argparse

from tokensim.montecarlo import preset, run_scenario


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--timesteps", type=int, default=3652)
    args = ap.parse_args()
    for name in ("table1", "table2"):
        print(name)
        for cfg in preset(name, runs=1, noise=False, timesteps=args.timesteps):
            [run] = run_scenario(cfg)
            print(f"  A0={cfg.initial_pool_xns:>8.3g}  price={run.column('price_usd')[-1]:.5f} USD"
                  f"  developers={int(run.column('n_developers')[-1])}"
                  f"  users={run.column('n_users')[-1]:.0f}")


if __name__ == "__main__":
    main()
