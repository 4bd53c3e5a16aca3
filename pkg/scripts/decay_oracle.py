"""Compare the simulated pool with the closed-form decay curve.

Behaviour, noise and replenishment are switched off, so the pool only
decays.  Prints the worst relative error per scenario and the two
headline fractions (two-year disbursement and ten-year remainder).
"""

import numpy as np

from tokensim.economy import analytic_pool_balance
from tokensim.montecarlo import preset, run_scenario, with_overrides


def main() -> None:
    for cfg in preset("table1", runs=1) + preset("table2", runs=1):
        cfg = with_overrides(cfg, replenish=False, noise=False, behavior=False)
        [run] = run_scenario(cfg)
        pool = run.column("pool_balance_xns")
        exact = np.array([analytic_pool_balance(cfg.initial_pool_xns, cfg.decay_rate_per_day, t)
                          for t in run.column("t")])
        err = np.max(np.abs(pool - exact) / exact)
        print(f"{cfg.name} A0={cfg.initial_pool_xns:>8.3g} lambda={cfg.decay_rate_per_day:<7} "
              f"max rel err {err:.2e}  remaining at day 3652: {pool[-1] / cfg.initial_pool_xns:.4%}")
    print(f"\nlambda=0.01:   disbursed by day 730  = {1 - np.exp(-0.01 * 730):.4%}")
    print(f"lambda=0.0005: remaining at day 3652 = {np.exp(-0.0005 * 3652):.4%}")


if __name__ == "__main__":
    main()
