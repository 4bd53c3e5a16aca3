import json

import numpy as np
import pytest

from tokensim import io
from tokensim.cli import main
from tokensim.economy import analytic_pool_balance

T1_CFG = "[scenario]\ninitial_pool_xns = 250e6\ndecay_rate_per_day = 0.0005\n"


def tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture
def t1_cfg(tmp_path):
    path = tmp_path / "t1.cfg"
    path.write_text(T1_CFG)
    return path


@pytest.mark.parametrize("cmd", ["simulate", "sweep", "plot", "validate"])
def test_help(cmd, capsys):
    with pytest.raises(SystemExit) as exc:
        main([cmd, "--help"])
    assert exc.value.code == 0
    assert "usage" in capsys.readouterr().out


def test_bad_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["sweep", "--preset", "table9"])
    assert exc.value.code != 0
    assert "usage" in capsys.readouterr().err


def test_sweep_preset_artifacts(tmp_path):
    out = tmp_path / "results"
    assert main(["sweep", "--preset", "table1", "--seed", "42", "--runs", "2",
                 "--timesteps", "30", "--out", str(out)]) == 0
    files = sorted(p.name for p in out.iterdir())
    assert len([f for f in files if f.endswith(".csv")]) == 8
    assert len([f for f in files if f.endswith(".svg")]) == 6
    manifest = json.loads((out / "manifest.json").read_text())
    assert [s["initial_pool_xns"] for s in manifest["scenarios"]] == [250e6, 500e6, 750e6, 1000e6]
    assert all(s["master_seed"] == 42 and s["steps_executed"] == 60 for s in manifest["scenarios"])
    runs = io.read_timeseries_csv(out / "table1_250e6_0.0005.csv")
    assert sorted(runs) == [0, 1] and len(runs[0]) == 30


def test_validate_bad_config(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text(T1_CFG + "decayrate = 0.1\n")
    assert main(["validate", "--config", str(bad)]) != 0
    assert "scenario.decayrate" in capsys.readouterr().err


def test_validate_missing_file(tmp_path, capsys):
    assert main(["validate", "--config", str(tmp_path / "nope.cfg")]) != 0
    assert "error" in capsys.readouterr().err


def test_validate_prints_defaults(t1_cfg, capsys):
    assert main(["validate", "--config", str(t1_cfg)]) == 0
    text = capsys.readouterr().out
    assert "timesteps = 3652" in text and "runs = 100" in text and "name = t1" in text


def test_simulate_matches_decay_curve(t1_cfg, tmp_path):
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(t1_cfg), "--runs", "1", "--out", str(out),
                 "--no-noise", "--no-replenish", "--no-behavior"]) == 0
    recs = io.read_timeseries_csv(out / "t1_250e6_0.0005.csv")[0]
    pool = np.array([r.pool_balance_xns for r in recs])
    exact = np.array([analytic_pool_balance(250e6, 0.0005, r.t) for r in recs])
    assert len(recs) == 3652
    assert np.max(np.abs(pool - exact) / exact) <= 1e-9


def test_identical_argv_identical_tree(tmp_path):
    argv = ["sweep", "--preset", "table2", "--seed", "7", "--runs", "3", "--timesteps", "40"]
    assert main(argv + ["--out", str(tmp_path / "a"), "--workers", "1"]) == 0
    assert main(argv + ["--out", str(tmp_path / "b"), "--workers", "1"]) == 0
    assert main(argv + ["--out", str(tmp_path / "c"), "--workers", "2"]) == 0
    a = tree(tmp_path / "a")
    assert a == tree(tmp_path / "b") == tree(tmp_path / "c")


def test_seed_changes_output(tmp_path):
    base = ["sweep", "--preset", "table1", "--runs", "2", "--timesteps", "200", "--no-charts"]
    main(base + ["--seed", "1", "--out", str(tmp_path / "a")])
    main(base + ["--seed", "2", "--out", str(tmp_path / "b")])
    name = "table1_250e6_0.0005.csv"
    assert (tmp_path / "a" / name).read_bytes() != (tmp_path / "b" / name).read_bytes()


def test_env_default_out_and_no_stray_writes(t1_cfg, tmp_path, monkeypatch):
    work = tmp_path / "cwd"
    work.mkdir()
    monkeypatch.chdir(work)
    monkeypatch.setenv("TOKENSIM_OUT", str(tmp_path / "env_out"))
    assert main(["simulate", "--config", str(t1_cfg), "--runs", "1", "--timesteps", "5"]) == 0
    assert (tmp_path / "env_out" / "t1_250e6_0.0005_mean.csv").exists()
    assert list(work.iterdir()) == []


def test_plot_from_csv(t1_cfg, tmp_path):
    out = tmp_path / "o"
    main(["simulate", "--config", str(t1_cfg), "--runs", "2", "--timesteps", "20", "--out", str(out)])
    svg = tmp_path / "chart.svg"
    assert main(["plot", "--in", str(out / "t1_250e6_0.0005.csv"), str(out / "t1_250e6_0.0005_mean.csv"),
                 "--var", "price_usd", "--out", str(svg)]) == 0
    assert "<svg" in svg.read_text()


def test_sweep_configs(t1_cfg, tmp_path):
    other = tmp_path / "t2.cfg"
    other.write_text("[scenario]\ninitial_pool_xns = 50e6\ndecay_rate_per_day = 0.01\n")
    out = tmp_path / "o"
    assert main(["sweep", "--configs", str(t1_cfg), str(other), "--runs", "1", "--timesteps", "10",
                 "--out", str(out)]) == 0
    assert (out / "t2_50e6_0.01_mean.csv").exists()
    assert (out / "sweep_pool_balance_xns.svg").exists()


def test_invalid_override_reported(t1_cfg, tmp_path, capsys):
    assert main(["simulate", "--config", str(t1_cfg), "--runs", "0", "--out", str(tmp_path)]) != 0
    assert "runs" in capsys.readouterr().err
