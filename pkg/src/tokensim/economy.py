"""Application-developer subsidy economy built on the ledger engine.

Token flows per simulated day, in block order:

1. the subsidy pool releases ``balance * (1 - exp(-decay))`` split equally
   over the developer wallets (held in pool escrow while there are none);
2. new developers arrive and each deploys one application;
3. users grow logistically with the number of applications;
4. developers pay resource fees; a ``platform_fee_rate`` share goes back to
   the pool (or the treasury when replenishment is off), the rest to the
   resource providers;
5. the token price is re-marked from smoothed fee demand and circulating
   supply.

The adoption and price layers are a stand-in behavioural model; everything
they use is exposed on :class:`EconomyParams`.
"""

from __future__ import annotations

import logging
import math
import operator
from dataclasses import dataclass, field, fields
from functools import lru_cache
from itertools import repeat
from typing import TYPE_CHECKING, NamedTuple, Optional

import numpy as np

from .engine import (
    Effect,
    Engine,
    EnvNoise,
    GlobalState,
    LedgerState,
    Mechanism,
    Policy,
    StateVar,
    Unit,
    observe_keys,
    transfer_mechanism,
    tuple_getter,
    var_key,
)

if TYPE_CHECKING:
    from .montecarlo import ScenarioConfig

logger = logging.getLogger(__name__)

DAYS_PER_YEAR = 365.0

TREASURY = "foundation"
POOL = "subsidy-pool"
MARKET = "market"
PLATFORM = "platform"
PROVIDERS = "providers"

BALANCE = "xns"
TREASURY_XNS = var_key(TREASURY, BALANCE)
POOL_XNS = var_key(POOL, BALANCE)
POOL_ESCROW = var_key(POOL, "escrow")
POOL_DECAY = var_key(POOL, "decay_rate")
POOL_DISBURSED = var_key(POOL, "disbursed")
POOL_DISBURSED_USD = var_key(POOL, "disbursed_usd")
POOL_REPLENISHED = var_key(POOL, "replenished")
PROVIDER_XNS = var_key(PROVIDERS, BALANCE)
N_DEVELOPERS = var_key(MARKET, "n_developers")
N_APPS = var_key(MARKET, "n_apps")
N_USERS = var_key(MARKET, "n_users")
ARRIVAL_CARRY = var_key(MARKET, "arrival_carry")
PRICE = var_key(MARKET, "price_usd")
DEMAND_EMA = var_key(MARKET, "demand_ema_usd")
FEES_USD = var_key(PLATFORM, "fees_usd")


@dataclass(frozen=True)
class EconomyParams:
    total_supply: float = 1e9                 # XNS
    velocity: float = 12.0                    # 1/year
    platform_fee_rate: float = 0.2            # share of resource fees
    fee_per_user_usd_day: float = 0.02        # USD/(user*day)
    dev_arrival_base_rate: float = 0.05       # developers/day
    dev_attractiveness_coeff: float = 1.0
    subsidy_usd_scale: float = 1000.0         # USD/day of subsidy that doubles arrivals
    user_growth_rate: float = 20.0            # users/(app*day)
    user_carrying_capacity: float = 2e6       # users
    demand_sigma: float = 0.05                # lognormal volatility per sqrt(day)
    price_floor: float = 0.001                # USD
    demand_ema_alpha: float = 0.05
    initial_price: float = 0.01               # USD, before any demand is observed

    def __post_init__(self):
        positive = ("total_supply", "velocity", "user_carrying_capacity", "subsidy_usd_scale")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"economy.{name} must be > 0")
        nonneg = ("fee_per_user_usd_day", "dev_arrival_base_rate", "dev_attractiveness_coeff",
                  "user_growth_rate", "demand_sigma", "price_floor")
        for name in nonneg:
            if not getattr(self, name) >= 0:
                raise ValueError(f"economy.{name} must be >= 0")
        if not 0.0 <= self.platform_fee_rate <= 1.0:
            raise ValueError("economy.platform_fee_rate must lie in [0, 1]")
        if not 0.0 < self.demand_ema_alpha <= 1.0:
            raise ValueError("economy.demand_ema_alpha must lie in (0, 1]")
        if not self.initial_price > 0:
            raise ValueError("economy.initial_price must be > 0")

    @classmethod
    def field_names(cls) -> tuple:
        return tuple(f.name for f in fields(cls))


# -- subsidy pool -------------------------------------------------------------

def analytic_pool_balance(A0: float, decay_rate: float, t: float) -> float:
    """Closed-form pool balance ``A0 * exp(-decay_rate * t)``."""
    if A0 < 0 or decay_rate < 0 or t < 0:
        raise ValueError("A0, decay_rate and t must be non-negative")
    return A0 * math.exp(-decay_rate * t)


@dataclass(frozen=True)
class SubsidyPool:
    balance: float
    decay_rate: float
    replenish_enabled: bool = True
    cumulative_disbursed: float = 0.0
    cumulative_replenished: float = 0.0

    def __post_init__(self):
        if self.balance < 0:
            raise ValueError("pool balance must be >= 0")
        if not self.decay_rate > 0:
            raise ValueError("decay rate must be > 0")


def pool_disburse(pool: SubsidyPool, dt: float = 1.0) -> tuple:
    """Release one interval of exponential decay; returns ``(amount, pool')``.

    Stepping by the exact factor ``exp(-decay*dt)`` keeps the simulated
    balance on the closed-form curve up to rounding.
    """
    amount, remaining = decay_step(pool.balance, pool.decay_rate, dt)
    return amount, SubsidyPool(remaining, pool.decay_rate, pool.replenish_enabled,
                               pool.cumulative_disbursed + amount, pool.cumulative_replenished)


def decay_step(balance: float, decay_rate: float, dt: float = 1.0) -> tuple:
    """``(released, remaining)`` after ``dt`` days of exponential decay."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    remaining = balance * math.exp(-decay_rate * dt)
    return balance - remaining, remaining


def pool_replenish(pool: SubsidyPool, fees_xns: float) -> tuple:
    """Route platform fees; returns ``(pool', amount_for_treasury)``."""
    if fees_xns < 0:
        raise ValueError("fees_xns must be >= 0")
    if not pool.replenish_enabled or fees_xns == 0:
        return pool, fees_xns
    return SubsidyPool(pool.balance + fees_xns, pool.decay_rate, True,
                       pool.cumulative_disbursed, pool.cumulative_replenished + fees_xns), 0.0


# -- behavioural layer ---------------------------------------------------------

def arrival_rate(daily_subsidy_usd: float, params: EconomyParams) -> float:
    return params.dev_arrival_base_rate * (
        1.0 + params.dev_attractiveness_coeff * daily_subsidy_usd / params.subsidy_usd_scale)


def developer_arrivals(mu: float, rng: np.random.Generator) -> int:
    if mu < 0:
        raise ValueError("arrival rate must be >= 0")
    if mu == 0:
        return 0
    return int(rng.poisson(mu))


def update_users(users: float, n_apps: float, params: EconomyParams) -> float:
    cap = params.user_carrying_capacity
    grown = users + params.user_growth_rate * n_apps * (1.0 - users / cap)
    return min(max(grown, 0.0), cap)


def compute_fees(users: float, params: EconomyParams) -> float:
    if users < 0:
        raise ValueError("users must be >= 0")
    return users * params.fee_per_user_usd_day


def price_shock(sigma: float, rng: np.random.Generator) -> float:
    """Mean-one lognormal multiplier."""
    if sigma == 0:
        return 1.0
    return math.exp(sigma * rng.standard_normal() - 0.5 * sigma * sigma)


def update_price(fees_usd: float, demand_ema: float, circ_supply: float,
                 params: EconomyParams, shock: float = 1.0) -> tuple:
    """Equation-of-exchange price; returns ``(price, demand_ema')``.

    ``demand_ema`` is annualised USD demand.  The floor is applied after the
    shock so the price never drops below ``price_floor``.
    """
    if not circ_supply > 0:
        raise ValueError("circulating supply must be > 0")
    a = params.demand_ema_alpha
    demand = a * DAYS_PER_YEAR * fees_usd + (1.0 - a) * demand_ema
    price = max(params.price_floor, demand / (params.velocity * circ_supply) * shock)
    return price, demand


# -- accounts ------------------------------------------------------------------

_DEV_KEYS: list = [()]


def developer_id(i: int) -> str:
    return f"dev-{i:06d}"


def developer_keys(n: int) -> tuple:
    """Wallet keys of the first ``n`` developers, in arrival order.

    The same tuple object is returned for the same ``n``.
    """
    while len(_DEV_KEYS) <= n:
        m = len(_DEV_KEYS) - 1
        _DEV_KEYS.append(_DEV_KEYS[m] + (var_key(developer_id(m), BALANCE),))
    return _DEV_KEYS[n]


@lru_cache(maxsize=None)
def _wallet_balances(n: int):
    return tuple_getter(developer_keys(n))


@lru_cache(maxsize=None)
def _settle_keys(n: int) -> tuple:
    return developer_keys(n) + (FEES_USD,)


class EconomyAccounts(NamedTuple):
    treasury: str
    pool: str
    provider_wallet: str
    developer_wallets: tuple
    n_developers: int
    n_apps: int
    n_users: float


def accounts(state: GlobalState) -> EconomyAccounts:
    n = int(state[N_DEVELOPERS])
    return EconomyAccounts(TREASURY, POOL, PROVIDERS,
                           tuple(developer_id(i) for i in range(n)),
                           n, int(state[N_APPS]), state[N_USERS])


def circulating_supply(state: GlobalState, total_supply: float) -> float:
    """Tokens outside the treasury and the pool: ``total - treasury - pool``.

    Reads exactly zero while no developer or provider holds tokens, so the
    price guard is not fooled by rounding residue.
    """
    v = state.values
    if v[N_DEVELOPERS] == 0 and v[PROVIDER_XNS] == 0:
        return 0.0
    return total_supply - v[TREASURY_XNS] - v[POOL_XNS] - v[POOL_ESCROW]


def subsidy_pool(state: GlobalState, replenish: bool = True) -> SubsidyPool:
    return SubsidyPool(state[POOL_XNS], state[POOL_DECAY], replenish,
                       state[POOL_DISBURSED], state[POOL_REPLENISHED])


def genesis_state(params: EconomyParams, initial_pool_xns: float, decay_rate: float) -> GlobalState:
    if initial_pool_xns < 0:
        raise ValueError("initial pool must be >= 0")
    if initial_pool_xns > params.total_supply:
        raise ValueError(
            f"initial pool {initial_pool_xns:g} XNS exceeds total supply {params.total_supply:g} XNS")
    if not decay_rate > 0:
        raise ValueError("decay rate must be > 0")
    U = Unit
    return GlobalState([
        StateVar(TREASURY, TREASURY, BALANCE, params.total_supply - initial_pool_xns, U.XNS),
        StateVar(POOL, POOL, BALANCE, initial_pool_xns, U.XNS),
        StateVar(POOL, POOL, "escrow", 0.0, U.XNS),
        StateVar(POOL, TREASURY, "decay_rate", decay_rate, U.RATE),
        StateVar(POOL, POOL, "disbursed", 0.0, U.XNS_TALLY),
        StateVar(POOL, POOL, "disbursed_usd", 0.0, U.USD),
        StateVar(POOL, POOL, "replenished", 0.0, U.XNS_TALLY),
        StateVar(PROVIDERS, PROVIDERS, BALANCE, 0.0, U.XNS),
        StateVar(MARKET, MARKET, "n_developers", 0.0, U.COUNT),
        StateVar(MARKET, MARKET, "n_apps", 0.0, U.COUNT),
        StateVar(MARKET, MARKET, "n_users", 0.0, U.COUNT),
        StateVar(MARKET, MARKET, "arrival_carry", 0.0, U.COUNT),
        StateVar(MARKET, MARKET, "price_usd", params.initial_price, U.USD),
        StateVar(MARKET, MARKET, "demand_ema_usd", 0.0, U.USD),
        StateVar(PLATFORM, PLATFORM, "fees_usd", 0.0, U.USD),
    ])


# -- actions -------------------------------------------------------------------

class Disburse(NamedTuple):
    dt: float = 1.0


class Onboard(NamedTuple):
    count: int
    carry: float = 0.0


class GrowUsers(NamedTuple):
    pass


class SettleFees(NamedTuple):
    pass


class Reprice(NamedTuple):
    shock: float = 1.0


# -- mechanisms ------------------------------------------------------------------

def disburse_effect(state: GlobalState, dt: float) -> Effect:
    v = state.values
    amount, remaining = decay_step(v[POOL_XNS], v[POOL_DECAY], dt)
    n = int(v[N_DEVELOPERS])
    writes = {POOL_XNS: remaining, POOL_DISBURSED: v[POOL_DISBURSED] + amount,
              POOL_DISBURSED_USD: v[POOL_DISBURSED_USD] + amount * v[PRICE]}
    if n == 0:
        writes[POOL_ESCROW] = v[POOL_ESCROW] + amount
        return Effect(writes)
    share = (amount + v[POOL_ESCROW]) / n
    writes[POOL_ESCROW] = 0.0
    wallets = list(map(operator.add, _wallet_balances(n)(v), repeat(share)))
    return Effect(writes, (), ((developer_keys(n), wallets),))


def settlement_effect(state: GlobalState, fees_usd: float, price: float, tau: float,
                      replenish: bool = True) -> Effect:
    """Developers pay ``fees_usd`` at ``price``; split between providers and pool.

    Payment is capped at the developers' combined balance, scaled down
    pro rata.
    """
    if not price > 0:
        raise ValueError("price must be > 0")
    v = state.values
    n = int(v[N_DEVELOPERS])
    balances = _wallet_balances(n)(v)
    held = math.fsum(balances)
    due = fees_usd / price
    if due <= 0 or held <= 0:
        return Effect({FEES_USD: fees_usd})
    if due >= held:
        if due > held:
            logger.debug("fee shortfall: %.6g XNS due, %.6g XNS held", due, held)
        wallets = [0.0] * n
        paid = held
    else:
        keep = 1.0 - due / held
        wallets = list(map(operator.mul, balances, repeat(keep)))
        paid = due
    to_platform = tau * paid
    writes = {FEES_USD: fees_usd, PROVIDER_XNS: v[PROVIDER_XNS] + (paid - to_platform)}
    if replenish:
        writes[POOL_XNS] = v[POOL_XNS] + to_platform
        writes[POOL_REPLENISHED] = v[POOL_REPLENISHED] + to_platform
    else:
        writes[TREASURY_XNS] = v[TREASURY_XNS] + to_platform
    return Effect(writes, (), ((developer_keys(n), wallets),))


def settle_fee_flows(state: GlobalState, fees_usd: float, price: float, tau: float,
                     replenish: bool = True) -> GlobalState:
    return state.apply_effect(settlement_effect(state, fees_usd, price, tau, replenish))


def reprice_writes(state: GlobalState, params: EconomyParams, shock: float) -> dict:
    circ = circulating_supply(state, params.total_supply)
    fees = state[FEES_USD]
    if circ > 0:
        price, demand = update_price(fees, state[DEMAND_EMA], circ, params, shock)
    else:
        # nothing circulates yet: demand still accrues, price sits on the floor
        a = params.demand_ema_alpha
        demand = a * DAYS_PER_YEAR * fees + (1.0 - a) * state[DEMAND_EMA]
        price = params.price_floor
    return {PRICE: price, DEMAND_EMA: demand}


def _only(agent: str):
    def check(state, who, action):
        return None if who == agent else f"only {agent} may invoke this mechanism"
    return check


def economy_mechanisms(params: EconomyParams, replenish: bool = True) -> list:
    pool_keys = (POOL_XNS, POOL_ESCROW, POOL_DISBURSED, POOL_DISBURSED_USD)

    def onboard_effect(state, a: Onboard) -> Effect:
        n = int(state[N_DEVELOPERS])
        created = tuple(StateVar(developer_id(i), PLATFORM, BALANCE, 0.0, Unit.XNS)
                        for i in range(n, n + a.count))
        return Effect({N_DEVELOPERS: float(n + a.count),
                       N_APPS: state[N_APPS] + a.count,
                       ARRIVAL_CARRY: a.carry}, created)

    def settle_controlled(state, a):
        return _settle_keys(int(state[N_DEVELOPERS]))

    def settle_effect(state, a: SettleFees) -> Effect:
        fees = compute_fees(state[N_USERS], params)
        return settlement_effect(state, fees, state[PRICE], params.platform_fee_rate, replenish)

    return [
        transfer_mechanism("transfer", BALANCE, declared_by=TREASURY),
        Mechanism("disburse", lambda s, a: disburse_effect(s, a.dt), Disburse,
                  controlled=lambda s, a: pool_keys, declared_by=POOL),
        Mechanism("onboard", onboard_effect, Onboard,
                  check=lambda s, who, a: None if a.count >= 0 else "negative arrival count",
                  controlled=lambda s, a: (N_DEVELOPERS, N_APPS, ARRIVAL_CARRY), declared_by=MARKET),
        Mechanism("grow_users",
                  lambda s, a: Effect({N_USERS: update_users(s[N_USERS], s[N_APPS], params)}),
                  GrowUsers, declared_by=MARKET),
        Mechanism("settle", settle_effect, SettleFees, controlled=settle_controlled,
                  declared_by=PLATFORM),
        Mechanism("reprice", lambda s, a: Effect(reprice_writes(s, params, a.shock)), Reprice,
                  check=lambda s, who, a: None if a.shock > 0 else "non-positive shock",
                  declared_by=MARKET),
    ]


# -- policies ----------------------------------------------------------------------

class _BehaviourParams(NamedTuple):
    economy: EconomyParams
    noise: bool


def _disburse_strategy(obs, params, rng):
    return Disburse(1.0)


def _arrival_strategy(obs, p: _BehaviourParams, rng):
    subsidy_usd = obs[POOL_XNS] * -math.expm1(-obs[POOL_DECAY]) * obs[PRICE]
    mu = arrival_rate(subsidy_usd, p.economy)
    if p.noise:
        k = developer_arrivals(mu, rng)
        return Onboard(k, obs[ARRIVAL_CARRY]) if k else None
    # expected arrivals, with the fractional remainder carried forward
    total = obs[ARRIVAL_CARRY] + mu
    k = math.floor(total)
    return Onboard(k, total - k)


def _users_strategy(obs, params, rng):
    return GrowUsers()


def _settle_strategy(obs, params, rng):
    return SettleFees()


def _price_strategy(obs, p: _BehaviourParams, rng):
    return Reprice(price_shock(p.economy.demand_sigma, rng) if p.noise else 1.0)


def economy_policies(params: EconomyParams, noise: bool = True, behavior: bool = True) -> list:
    bp = _BehaviourParams(params, noise)
    policies = [Policy(POOL, "disburse", _disburse_strategy, 1, observe_keys()), ]
    if behavior:
        policies += [
            Policy(MARKET, "onboard", _arrival_strategy, 1,
                   observe_keys(POOL_XNS, POOL_DECAY, PRICE, ARRIVAL_CARRY), bp),
            Policy(MARKET, "grow_users", _users_strategy, 1, observe_keys()),
            Policy(PLATFORM, "settle", _settle_strategy, 1, observe_keys()),
        ]
    policies.append(Policy(MARKET, "reprice", _price_strategy, 1, observe_keys(), bp))
    return policies


# -- assembly -----------------------------------------------------------------------

class KpiRecord(NamedTuple):
    t: int
    pool_balance_xns: float
    cum_subsidy_xns: float
    cum_subsidy_usd: float
    price_usd: float
    treasury_xns: float
    treasury_usd: float
    n_developers: float
    n_users: float
    fees_usd: float
    cum_replenished_xns: float


_KPI_VALUES = tuple_getter((POOL_XNS, POOL_DISBURSED, POOL_DISBURSED_USD, PRICE, TREASURY_XNS,
                            N_DEVELOPERS, N_USERS, FEES_USD, POOL_REPLENISHED))


def kpi_record(state: GlobalState, t: int) -> KpiRecord:
    pool, disbursed, disbursed_usd, price, treasury, n_dev, n_users, fees, replenished = \
        _KPI_VALUES(state.values)
    return KpiRecord(t, pool, disbursed, disbursed_usd, price, treasury, treasury * price,
                     n_dev, n_users, fees, replenished)


@dataclass
class Economy:
    engine: Engine
    genesis: LedgerState
    policies: list
    params: EconomyParams
    initial_pool_xns: float
    decay_rate: float
    replenish: bool = True
    noise: bool = True
    behavior: bool = True
    labels: dict = field(default_factory=dict)


def build_economy(config: "ScenarioConfig") -> Economy:
    params = config.economy
    genesis = genesis_state(params, config.initial_pool_xns, config.decay_rate_per_day)
    engine = Engine(economy_mechanisms(params, config.replenish))
    policies = economy_policies(params, config.noise, config.behavior)
    return Economy(engine, LedgerState(genesis), policies, params, config.initial_pool_xns,
                   config.decay_rate_per_day, config.replenish, config.noise, config.behavior)


def economy_step(economy: Economy, ledger: LedgerState, noise: Optional[EnvNoise]) -> tuple:
    """Advance one day; returns ``(ledger', KpiRecord)``."""
    ledger = economy.engine.step_ledger(ledger, economy.policies, noise)
    return ledger, kpi_record(ledger.X, ledger.K)
