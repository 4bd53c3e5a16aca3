"""Seeded Monte Carlo runs and parameter sweeps over the subsidy economy."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .economy import EconomyParams, KpiRecord, build_economy, kpi_record
from .engine import EnvNoise

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15

TABLE1_POOLS = (250e6, 500e6, 750e6, 1000e6)
TABLE1_DECAY = 0.0005
TABLE2_POOLS = (10e6, 50e6, 250e6, 500e6, 750e6, 1000e6)
TABLE2_DECAY = 0.01
DEFAULT_TIMESTEPS = 3652
DEFAULT_RUNS = 100

KPI_FIELDS = KpiRecord._fields


@dataclass(frozen=True)
class ScenarioConfig:
    initial_pool_xns: float
    decay_rate_per_day: float
    timesteps: int = DEFAULT_TIMESTEPS
    runs: int = DEFAULT_RUNS
    master_seed: int = 0
    economy: EconomyParams = field(default_factory=EconomyParams)
    replenish: bool = True
    noise: bool = True
    behavior: bool = True
    name: str = "scenario"

    def __post_init__(self):
        if self.timesteps < 1:
            raise ValueError("scenario.timesteps must be >= 1")
        if self.runs < 1:
            raise ValueError("scenario.runs must be >= 1")
        if not self.decay_rate_per_day > 0:
            raise ValueError("scenario.decay_rate_per_day must be > 0")
        if self.initial_pool_xns < 0:
            raise ValueError("scenario.initial_pool_xns must be >= 0")
        if self.initial_pool_xns > self.economy.total_supply:
            raise ValueError(
                f"scenario.initial_pool_xns ({self.initial_pool_xns:g}) exceeds "
                f"economy.total_supply ({self.economy.total_supply:g})")
        if not 0 <= self.master_seed <= MASK64:
            raise ValueError("scenario.master_seed must be a 64-bit unsigned integer")


def preset(name: str, **overrides) -> list:
    """Scenario list for the ``table1`` or ``table2`` protocol."""
    if name == "table1":
        pools, decay = TABLE1_POOLS, TABLE1_DECAY
    elif name == "table2":
        pools, decay = TABLE2_POOLS, TABLE2_DECAY
    else:
        raise ValueError(f"unknown preset {name!r}; expected 'table1' or 'table2'")
    return [ScenarioConfig(a0, decay, name=name, **overrides) for a0 in pools]


def derive_run_seed(master_seed: int, run_id: int) -> int:
    """SplitMix64 of ``master_seed + (run_id + 1) * gamma``.

    The gamma is odd, so distinct run ids below 2**64 give distinct inputs,
    and the finaliser is a bijection on 64-bit words: the map is injective.
    """
    z = (master_seed + (run_id + 1) * _GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


@dataclass
class RunResult:
    run_id: int
    data: np.ndarray  # (timesteps, len(KPI_FIELDS))
    max_supply_drift: float = 0.0
    max_identity_error: float = 0.0

    def __len__(self) -> int:
        return self.data.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.data[:, KPI_FIELDS.index(name)]

    @property
    def records(self) -> list:
        return [KpiRecord(int(row[0]), *map(float, row[1:])) for row in self.data]


@dataclass
class AggregateResult:
    config: Optional[ScenarioConfig]
    runs: int
    mean: np.ndarray
    min: np.ndarray
    max: np.ndarray

    def column(self, name: str, stat: str = "mean") -> np.ndarray:
        return getattr(self, stat)[:, KPI_FIELDS.index(name)]

    @property
    def t(self) -> np.ndarray:
        return self.mean[:, 0]


def simulate_run(config: ScenarioConfig, run_id: int) -> RunResult:
    economy = build_economy(config)
    noise = EnvNoise(derive_run_seed(config.master_seed, run_id), run_id)
    ledger = economy.genesis
    supply = config.economy.total_supply
    flat: list = []
    drift = abs(ledger.X.total() - supply) / supply
    step = economy.engine.step_ledger
    policies = economy.policies
    for _ in range(config.timesteps):
        ledger = step(ledger, policies, noise)
        X = ledger.X
        flat.extend(kpi_record(X, ledger.K))
        d = abs(X.total() - supply) / supply
        if d > drift:
            drift = d
    data = np.array(flat, dtype=float).reshape(config.timesteps, len(KPI_FIELDS))
    return RunResult(run_id, data, drift, pool_identity_error(data, config.initial_pool_xns))


def pool_identity_error(data: np.ndarray, initial_pool_xns: float) -> float:
    """Worst ``|cum_subsidy + pool - cum_replenished - A0|``, relative to ``A0``."""
    col = KPI_FIELDS.index
    lhs = data[:, col("cum_subsidy_xns")] + data[:, col("pool_balance_xns")] \
        - data[:, col("cum_replenished_xns")]
    err = float(np.max(np.abs(lhs - initial_pool_xns))) if len(data) else 0.0
    return err / initial_pool_xns if initial_pool_xns > 0 else err


def _simulate_chunk(args) -> list:
    config, run_ids = args
    return [simulate_run(config, r) for r in run_ids]


def _chunks(config: ScenarioConfig, runs: Sequence[int], size: int) -> list:
    return [(config, runs[i:i + size]) for i in range(0, len(runs), size)]


def resolve_workers(workers: Optional[int]) -> int:
    if workers is None:
        workers = os.cpu_count() or 1
    return max(1, int(workers))


def run_scenario(config: ScenarioConfig, workers: Optional[int] = 1) -> list:
    """Run every Monte Carlo replicate; results are ordered by run id.

    Run ``r`` only depends on ``(config, r)``, so the worker count never
    changes the output.
    """
    workers = resolve_workers(workers)
    run_ids = list(range(config.runs))
    if workers == 1 or config.runs == 1:
        return [simulate_run(config, r) for r in run_ids]
    size = max(1, math.ceil(config.runs / (workers * 4)))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        out = [r for chunk in pool.map(_simulate_chunk, _chunks(config, run_ids, size)) for r in chunk]
    out.sort(key=lambda r: r.run_id)
    return out


def _shifted_mean(column: np.ndarray) -> float:
    # exact for identical inputs and independent of input order
    m = float(column.min())
    return m + math.fsum((column - m).tolist()) / column.size


def aggregate_mean(results: Sequence[RunResult]) -> np.ndarray:
    """Element-wise mean of every KPI series across runs."""
    if not results:
        raise ValueError("no results to aggregate")
    lengths = {len(r) for r in results}
    if len(lengths) != 1:
        raise ValueError(f"ragged run lengths: {sorted(lengths)}")
    stack = np.stack([r.data for r in results])  # (runs, T, F)
    if stack.shape[0] == 1:
        return stack[0].copy()
    _, steps, nf = stack.shape
    out = np.empty((steps, nf))
    for j in range(nf):
        col = stack[:, :, j]
        lo = col.min(axis=0)
        hi = col.max(axis=0)
        same = lo == hi
        out[:, j] = lo
        for i in np.flatnonzero(~same):
            out[i, j] = _shifted_mean(col[:, i])
    return out


def aggregate(config: Optional[ScenarioConfig], results: Sequence[RunResult]) -> AggregateResult:
    """Mean series plus a min/max envelope across runs."""
    mean = aggregate_mean(results)
    stack = np.stack([r.data for r in results])
    return AggregateResult(config, len(results), mean, stack.min(axis=0), stack.max(axis=0))


class SweepEntry(NamedTuple):
    config: ScenarioConfig
    aggregate: Optional[AggregateResult]
    error: Optional[str] = None
    max_supply_drift: float = float("nan")
    max_identity_error: float = float("nan")


def run_sweep(configs: Iterable[ScenarioConfig], workers: Optional[int] = 1,
              on_scenario: Optional[Callable[[ScenarioConfig, list], None]] = None) -> list:
    """Run each scenario and aggregate it.

    A failing scenario is reported in its entry and does not stop the others.
    ``on_scenario(config, runs)`` sees the per-run results before they are
    dropped.
    """
    configs = list(configs)
    if not configs:
        raise ValueError("sweep needs at least one scenario")
    entries = []
    for config in configs:
        try:
            runs = run_scenario(config, workers)
            if on_scenario is not None:
                on_scenario(config, runs)
            agg = aggregate(config, runs)
            drift = max(r.max_supply_drift for r in runs)
            identity = max(r.max_identity_error for r in runs)
        except Exception as exc:  # noqa: BLE001 - reported per scenario
            logger.error("scenario %s failed: %s", config, exc)
            entries.append(SweepEntry(config, None, f"{type(exc).__name__}: {exc}"))
            continue
        entries.append(SweepEntry(config, agg, None, drift, identity))
    return entries


def with_overrides(config: ScenarioConfig, **kw) -> ScenarioConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
