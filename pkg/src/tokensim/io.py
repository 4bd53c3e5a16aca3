"""Scenario config documents, CSV time series and SVG line charts."""

from __future__ import annotations

import configparser
import csv
import math
import os
from dataclasses import fields, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .economy import EconomyParams, KpiRecord
from .montecarlo import (
    KPI_FIELDS,
    AggregateResult,
    RunResult,
    ScenarioConfig,
)

PathLike = Union[str, os.PathLike]

CSV_COLUMNS = (
    "run_id", "t", "pool_balance_xns", "cum_subsidy_xns", "cum_subsidy_usd", "price_usd",
    "treasury_xns", "treasury_usd", "n_developers", "n_users", "fees_usd",
)
_CSV_KPI_INDEX = tuple(KPI_FIELDS.index(c) for c in CSV_COLUMNS[1:])

# the six tracked outcomes, with axis labels
OUTCOMES = {
    "pool_balance_xns": "Subsidy pool balance (XNS)",
    "cum_subsidy_xns": "Cumulative subsidy to developers (XNS)",
    "cum_subsidy_usd": "Cumulative subsidy to developers (USD)",
    "price_usd": "XNS price (USD)",
    "treasury_xns": "Foundation treasury (XNS)",
    "treasury_usd": "Foundation treasury value (USD)",
}
CHART_LABELS = dict(OUTCOMES, n_developers="Developers (count)", n_users="Users (count)",
                    fees_usd="Resource fees (USD/day)")

REQUIRED_KEYS = ("scenario.initial_pool_xns", "scenario.decay_rate_per_day")
_SCENARIO_KEYS = {
    "initial_pool_xns": float, "decay_rate_per_day": float, "timesteps": int, "runs": int,
    "master_seed": int, "replenish": bool, "noise": bool, "behavior": bool, "name": str,
}
_ECONOMY_KEYS = {f.name: float for f in fields(EconomyParams)}


class ConfigError(ValueError):
    """A config document is malformed; the message names the offending key."""


# -- config documents -----------------------------------------------------------

def _coerce(key: str, raw: str, kind: type):
    text = raw.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            try:
                return int(text, 0)
            except ValueError:
                value = float(text)  # accept "3652.0" and "1e3"
                if not value.is_integer():
                    raise
                return int(value)
        if kind is float:
            value = float(text)
            if not math.isfinite(value):
                raise ValueError(text)
            return value
        return text
    except ValueError:
        raise ConfigError(f"{key}: expected {kind.__name__}, got {raw!r}") from None


def parse_scenario_config(document: Union[str, Mapping]) -> ScenarioConfig:
    """Build a :class:`ScenarioConfig` from an INI-style document.

    ``document`` is either the text of a file with ``[scenario]`` and
    ``[economy]`` sections, or a flat mapping of dotted keys such as
    ``{"scenario.initial_pool_xns": "250e6"}``.
    """
    flat = _flatten(document)
    scenario: dict = {}
    economy: dict = {}
    for key, raw in flat.items():
        section, _, name = key.partition(".")
        if section == "scenario" and name in _SCENARIO_KEYS:
            scenario[name] = _coerce(key, raw, _SCENARIO_KEYS[name])
        elif section == "economy" and name in _ECONOMY_KEYS:
            economy[name] = _coerce(key, raw, _ECONOMY_KEYS[name])
        else:
            raise ConfigError(f"{key}: unknown key")
    for key in REQUIRED_KEYS:
        if key.partition(".")[2] not in scenario:
            raise ConfigError(f"{key}: required key missing")
    try:
        params = EconomyParams(**economy)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    try:
        return ScenarioConfig(economy=params, **scenario)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _flatten(document: Union[str, Mapping]) -> dict:
    if isinstance(document, Mapping):
        return {str(k): str(v) for k, v in document.items()}
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep key case so typos are reported verbatim
    try:
        parser.read_string(document)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config document: {exc}") from None
    flat = {}
    for section in parser.sections():
        for name, value in parser.items(section):
            flat[f"{section}.{name}"] = value
    return flat


def load_scenario_config(path: PathLike) -> ScenarioConfig:
    """Parse a config file; ``scenario.name`` defaults to the file stem."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    config = parse_scenario_config(text)
    if "scenario.name" not in _flatten(text):
        config = replace(config, name=path.stem)
    return config


def dump_scenario_config(config: ScenarioConfig) -> str:
    def fmt(value):
        return str(value).lower() if isinstance(value, bool) else str(value) if isinstance(value, (int, str)) else repr(value)

    lines = ["[scenario]"]
    lines += [f"{name} = {fmt(getattr(config, name))}" for name in _SCENARIO_KEYS]
    lines += ["", "[economy]"]
    lines += [f"{name} = {fmt(getattr(config.economy, name))}" for name in _ECONOMY_KEYS]
    return "\n".join(lines) + "\n"


# -- CSV --------------------------------------------------------------------------

def scenario_filename(config: ScenarioConfig, suffix: str = "") -> str:
    """``<preset>_<A0>_<lambda>[suffix].csv`` with A0 in units of 1e6 when integral."""
    a0 = config.initial_pool_xns
    millions = a0 / 1e6
    a0_text = f"{int(millions)}e6" if millions.is_integer() else f"{a0:g}"
    return f"{config.name}_{a0_text}_{config.decay_rate_per_day!r}{suffix}.csv"


def _rows(run_id: str, data: np.ndarray) -> Iterable[list]:
    # floats are formatted by csv itself (str(float) is the shortest
    # round-tripping repr); only the day index is written as an integer
    for row in data[:, _CSV_KPI_INDEX].tolist():
        row[0] = int(row[0])
        row.insert(0, run_id)
        yield row


def write_timeseries_csv(results: Union[Sequence[RunResult], AggregateResult],
                         destination: PathLike) -> int:
    """Write runs (ordered by run id) or an aggregate mean; returns bytes written."""
    destination = Path(destination)
    destination.parent.mkdir(parents=True, exist_ok=True)
    with open(destination, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        if isinstance(results, AggregateResult):
            writer.writerows(_rows("mean", results.mean))
        else:
            for run in sorted(results, key=lambda r: r.run_id):
                writer.writerows(_rows(str(run.run_id), run.data))
    return destination.stat().st_size


def read_timeseries_csv(source: PathLike) -> dict:
    """Parse a CSV written by :func:`write_timeseries_csv`.

    Returns ``{run_id: [KpiRecord, ...]}``; fields absent from the CSV
    schema are NaN.
    """
    out: dict = {}
    with open(source, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_COLUMNS:
            raise ValueError(f"{source}: unexpected header {header}")
        for row in reader:
            run_id = row[0]
            values = dict(zip(CSV_COLUMNS[1:], row[1:]))
            rec = KpiRecord(*(int(values["t"]) if f == "t" else
                              float(values[f]) if f in values else math.nan
                              for f in KPI_FIELDS))
            key = int(run_id) if run_id.isdigit() else run_id
            out.setdefault(key, []).append(rec)
    return out


def records_to_array(records: Sequence[KpiRecord]) -> np.ndarray:
    return np.array(records, dtype=float)


# -- charts -------------------------------------------------------------------------

def scenario_label(config: ScenarioConfig) -> str:
    return f"A0 = {config.initial_pool_xns / 1e6:g}×10⁶ XNS"


def render_line_chart(results: Union[Sequence[AggregateResult], Mapping[str, AggregateResult]],
                      variable: str, destination: PathLike) -> list:
    """Plot ``variable`` against days, one line per scenario, as SVG.

    Returns the plotted ``(label, t, y)`` series.  The file is byte-stable
    for identical inputs.
    """
    if variable not in CHART_LABELS:
        raise ValueError(f"unknown variable {variable!r}; choose from {sorted(CHART_LABELS)}")
    if isinstance(results, Mapping):
        items = list(results.items())
    else:
        items = [(scenario_label(r.config), r) for r in results]
    if not items:
        raise ValueError("no results to plot")

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    series = []
    with matplotlib.rc_context({"svg.hashsalt": "tokensim", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(8, 4.5))
        for label, agg in items:
            t = agg.t.copy()
            y = agg.column(variable).copy()
            ax.plot(t, y, label=label, linewidth=1.2)
            series.append((label, t, y))
        ax.set_xlabel("Time (days)")
        ax.set_ylabel(CHART_LABELS[variable])
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize="small")
        fig.tight_layout()
        destination = Path(destination)
        destination.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(destination, format="svg", metadata={"Date": None})
        plt.close(fig)
    return series


def aggregate_from_records(records: Sequence[KpiRecord], config: Optional[ScenarioConfig] = None) -> AggregateResult:
    """Wrap an already-averaged series (e.g. a ``_mean.csv``) for plotting."""
    data = records_to_array(records)
    return AggregateResult(config, 1, data, data, data)
