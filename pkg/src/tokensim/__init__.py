"""Seeded discrete-time simulation of a subsidised blockchain token economy."""

from .economy import EconomyParams, KpiRecord, SubsidyPool, analytic_pool_balance, build_economy
from .engine import Engine, GlobalState, LedgerState, Mechanism, Policy, StateVar, Transaction
from .montecarlo import ScenarioConfig, aggregate_mean, preset, run_scenario, run_sweep

__all__ = [
    "EconomyParams", "KpiRecord", "SubsidyPool", "analytic_pool_balance", "build_economy",
    "Engine", "GlobalState", "LedgerState", "Mechanism", "Policy", "StateVar", "Transaction",
    "ScenarioConfig", "aggregate_mean", "preset", "run_scenario", "run_sweep",
]

__version__ = "0.1.0"
