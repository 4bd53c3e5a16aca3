import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tokensim.economy import (
    DEMAND_EMA,
    N_APPS,
    N_DEVELOPERS,
    N_USERS,
    POOL_ESCROW,
    POOL_REPLENISHED,
    POOL_XNS,
    PRICE,
    PROVIDER_XNS,
    TREASURY_XNS,
    EconomyParams,
    SubsidyPool,
    analytic_pool_balance,
    build_economy,
    circulating_supply,
    compute_fees,
    developer_arrivals,
    developer_id,
    developer_keys,
    economy_step,
    genesis_state,
    pool_disburse,
    pool_replenish,
    settle_fee_flows,
    update_price,
    update_users,
)
from tokensim.engine import EnvNoise, StateVar
from tokensim.montecarlo import ScenarioConfig


# -- closed-form pool ---------------------------------------------------------------

def test_analytic_table1_endpoint():
    # 250e6 * exp(-0.0005 * 3652), evaluated independently
    assert analytic_pool_balance(250e6, 0.0005, 3652) == pytest.approx(40264126.77, rel=1e-10)


def test_analytic_t0():
    assert analytic_pool_balance(123.0, 0.3, 0) == 123.0


def test_analytic_two_years():
    b = analytic_pool_balance(1000e6, 0.01, 730)
    assert b == pytest.approx(675538.78, rel=1e-8)
    assert 1 - b / 1000e6 == pytest.approx(0.99932446, abs=1e-8)


def test_analytic_rejects_negative():
    with pytest.raises(ValueError):
        analytic_pool_balance(-1, 0.1, 1)


# -- pool --------------------------------------------------------------------------------

def test_disburse_one_day():
    amount, pool = pool_disburse(SubsidyPool(1000.0, 0.01))
    assert amount == pytest.approx(9.950166, abs=1e-6)
    assert pool.balance == pytest.approx(990.049834, abs=1e-6)
    assert pool.cumulative_disbursed == amount


def test_disburse_empty_pool():
    amount, pool = pool_disburse(SubsidyPool(0.0, 0.01))
    assert (amount, pool.balance) == (0.0, 0.0)


@pytest.mark.parametrize("A0, lam", [(250e6, 0.0005), (1000e6, 0.01), (10e6, 0.01)])
def test_daily_steps_track_closed_form(A0, lam):
    pool = SubsidyPool(A0, lam, replenish_enabled=False)
    for t in range(1, 3653):
        _, pool = pool_disburse(pool)
        exact = analytic_pool_balance(A0, lam, t)
        assert abs(pool.balance - exact) <= 1e-9 * exact
    assert pool.balance + pool.cumulative_disbursed == pytest.approx(A0, rel=1e-12)


def test_replenish_enabled():
    pool, to_treasury = pool_replenish(SubsidyPool(100.0, 0.01), 20.0)
    assert (pool.balance, pool.cumulative_replenished, to_treasury) == (120.0, 20.0, 0.0)


def test_replenish_disabled_routes_to_treasury():
    pool, to_treasury = pool_replenish(SubsidyPool(100.0, 0.01, replenish_enabled=False), 20.0)
    assert (pool.balance, to_treasury) == (100.0, 20.0)


def test_replenish_zero():
    pool = SubsidyPool(100.0, 0.01)
    assert pool_replenish(pool, 0.0) == (pool, 0.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1e9), st.floats(1e-5, 0.5), st.lists(st.floats(0, 1e6), max_size=20))
def test_pool_identity(A0, lam, fees):
    pool = SubsidyPool(A0, lam)
    for f in fees:
        _, pool = pool_disburse(pool)
        pool, _ = pool_replenish(pool, f)
    lhs = pool.balance + pool.cumulative_disbursed - pool.cumulative_replenished
    assert lhs == pytest.approx(A0, rel=1e-9, abs=1e-6)


# -- behaviour ----------------------------------------------------------------------------

def test_arrivals_zero_rate():
    assert developer_arrivals(0.0, np.random.default_rng(0)) == 0


def test_arrivals_replay():
    a = developer_arrivals(3.0, np.random.default_rng(11))
    assert a == developer_arrivals(3.0, np.random.default_rng(11))


def test_arrivals_mean():
    rng = np.random.default_rng(2024)
    mean = np.mean([developer_arrivals(3.0, rng) for _ in range(10_000)])
    assert 2.9 <= mean <= 3.1


def test_arrivals_negative_rate():
    with pytest.raises(ValueError):
        developer_arrivals(-1.0, np.random.default_rng(0))


def test_users_examples():
    p = EconomyParams(user_growth_rate=0.1, user_carrying_capacity=1000)
    assert update_users(0.0, 10, p) == pytest.approx(1.0)
    assert update_users(1000.0, 10, p) == 1000.0
    assert update_users(40.0, 0, p) == 40.0


def test_fees_examples():
    p = EconomyParams(fee_per_user_usd_day=0.05)
    assert compute_fees(0, p) == 0
    assert compute_fees(100, p) == pytest.approx(5.0)


def test_price_example():
    # ema already at 3.65e8 USD/yr; 1e6 USD/day keeps it there
    p = EconomyParams(velocity=20)
    price, ema = update_price(1e6, 3.65e8, 5e8, p)
    assert ema == pytest.approx(3.65e8, rel=1e-12)
    assert price == pytest.approx(0.0365, rel=1e-12)


def test_price_decays_to_floor():
    p = EconomyParams()
    price, ema = update_price(1e6, 0.0, 5e8, p)
    for _ in range(2000):
        price, ema = update_price(0.0, ema, 5e8, p)
    assert price == p.price_floor


def test_price_requires_circulation():
    with pytest.raises(ValueError):
        update_price(1.0, 0.0, 0.0, EconomyParams())


def test_params_validated():
    with pytest.raises(ValueError):
        EconomyParams(platform_fee_rate=1.5)


# -- settlement --------------------------------------------------------------------------

def economy_state(dev_balances, A0=1000.0, S=10_000.0, users=0.0):
    s = genesis_state(EconomyParams(total_supply=S), A0, 0.01)
    n = len(dev_balances)
    s = s.declare(*[StateVar(developer_id(i), "platform", "xns", 0.0) for i in range(n)])
    # move developer funds out of the treasury so the supply stays whole
    writes = {k: b for k, b in zip(developer_keys(n), dev_balances)}
    writes.update({N_DEVELOPERS: float(n), N_APPS: float(n), N_USERS: users,
                   TREASURY_XNS: s[TREASURY_XNS] - sum(dev_balances)})
    return s.evolve(writes)


def test_settle_ample_balance():
    s = settle_fee_flows(economy_state([500.0]), 5.0, 0.05, 0.2)
    assert s[PROVIDER_XNS] == pytest.approx(80.0)
    assert s[POOL_XNS] - 1000.0 == pytest.approx(20.0)
    assert s[POOL_REPLENISHED] == pytest.approx(20.0)
    assert s[developer_keys(1)[0]] == pytest.approx(400.0)


def test_settle_no_tax():
    s = settle_fee_flows(economy_state([500.0]), 5.0, 0.05, 0.0)
    assert s[PROVIDER_XNS] == pytest.approx(100.0) and s[POOL_XNS] == 1000.0


def test_settle_shortfall_is_capped():
    s = settle_fee_flows(economy_state([30.0, 20.0]), 5.0, 0.05, 0.2)
    assert s[PROVIDER_XNS] == pytest.approx(40.0)
    assert s[POOL_XNS] - 1000.0 == pytest.approx(10.0)
    assert all(s[k] == 0 for k in developer_keys(2))


def test_settle_pro_rata():
    s = settle_fee_flows(economy_state([300.0, 100.0]), 5.0, 0.05, 0.2)
    a, b = (s[k] for k in developer_keys(2))
    assert (a, b) == (pytest.approx(225.0), pytest.approx(75.0))


def test_settle_without_replenish_pays_treasury():
    s0 = economy_state([500.0])
    s = settle_fee_flows(s0, 5.0, 0.05, 0.2, replenish=False)
    assert s[TREASURY_XNS] - s0[TREASURY_XNS] == pytest.approx(20.0)
    assert s[POOL_XNS] == 1000.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1e3), min_size=1, max_size=6), st.floats(0, 1e4),
       st.floats(1e-3, 10), st.floats(0, 1))
def test_settle_conserves_supply(balances, fees, price, tau):
    s0 = economy_state(balances, S=1e5)
    s = settle_fee_flows(s0, fees, price, tau)
    assert s.total() == pytest.approx(s0.total(), rel=1e-12)


# -- assembly ----------------------------------------------------------------------------

def config(A0, lam=0.01, **kw):
    kw.setdefault("noise", False)
    return ScenarioConfig(A0, lam, timesteps=10, runs=1, **kw)


def test_build_table1_genesis():
    X = build_economy(config(250e6, 0.0005)).genesis.X
    assert X[TREASURY_XNS] == 750e6 and X[POOL_XNS] == 250e6 and X.total() == 1e9


def test_build_empty_pool():
    X = build_economy(config(0.0)).genesis.X
    assert X[POOL_XNS] == 0 and X[TREASURY_XNS] == 1e9


def test_build_rejects_oversized_pool():
    with pytest.raises(ValueError):
        genesis_state(EconomyParams(), 2e9, 0.01)


def test_empty_economy_day():
    eco = build_economy(config(1000.0, behavior=False, economy=EconomyParams(total_supply=1e4)))
    ledger, rec = economy_step(eco, eco.genesis, None)
    X = ledger.X
    assert X[POOL_ESCROW] == pytest.approx(1000 * (1 - math.exp(-0.01)))
    assert circulating_supply(X, 1e4) == 0.0
    assert rec.price_usd == eco.params.price_floor
    assert rec.n_developers == 0 and rec.cum_subsidy_xns == X[POOL_ESCROW]


def test_hand_traced_day():
    params = EconomyParams(total_supply=10_000.0)
    eco = build_economy(config(1000.0, economy=params))
    X0 = eco.genesis.X.declare(StateVar(developer_id(0), "platform", "xns", 0.0))
    X0 = X0.evolve({N_DEVELOPERS: 1.0, N_APPS: 1.0, N_USERS: 100.0, PRICE: 0.05})
    genesis = type(eco.genesis)(X0)
    ledger, rec = economy_step(eco, genesis, None)

    # 1. disbursement to the only developer
    grant = 1000 * (1 - math.exp(-0.01))
    # 2. expected arrivals 0.05 * (1 + grant*0.05/1000) < 1: nobody arrives, remainder carried
    # 3. users 100 + 20*1*(1 - 100/2e6)
    users = 100 + 20 * (1 - 100 / 2e6)
    # 4. fees due exceed the grant: the whole grant is paid, 80/20
    fees = users * 0.02
    assert fees / 0.05 > grant
    provider, back = 0.8 * grant, 0.2 * grant
    pool = 1000 * math.exp(-0.01) + back
    # 5. price from the one-day demand over the providers' holdings
    demand = 0.05 * 365 * fees
    price = demand / (12 * provider)

    assert rec.t == 1
    assert rec.pool_balance_xns == pytest.approx(pool, rel=1e-12)
    assert rec.cum_subsidy_xns == pytest.approx(grant, rel=1e-12)
    assert rec.cum_subsidy_usd == pytest.approx(grant * 0.05, rel=1e-12)
    assert rec.n_developers == 1 and rec.n_users == pytest.approx(users)
    assert rec.fees_usd == pytest.approx(fees, rel=1e-12)
    assert rec.cum_replenished_xns == pytest.approx(back, rel=1e-12)
    assert ledger.X[PROVIDER_XNS] == pytest.approx(provider, rel=1e-12)
    assert ledger.X[DEMAND_EMA] == pytest.approx(demand, rel=1e-12)
    assert rec.price_usd == pytest.approx(price, rel=1e-9)
    assert rec.treasury_usd == pytest.approx(9000 * price, rel=1e-9)


@pytest.mark.parametrize("replenish", [True, False])
def test_conservation_and_identity_over_a_year(replenish):
    cfg = ScenarioConfig(250e6, 0.01, timesteps=365, runs=1, replenish=replenish)
    eco = build_economy(cfg)
    ledger, noise = eco.genesis, EnvNoise(5, 0)
    for _ in range(365):
        ledger, rec = economy_step(eco, ledger, noise)
        assert abs(ledger.X.total() - 1e9) <= 1e-6 * 1e9
        lhs = rec.cum_subsidy_xns + rec.pool_balance_xns - rec.cum_replenished_xns
        assert abs(lhs - 250e6) <= 1e-9 * 250e6
    assert rec.n_developers > 0 and rec.price_usd >= eco.params.price_floor
