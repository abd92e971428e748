import csv
import json

import numpy as np
import pytest

from cmdp_lab import envs
from cmdp_lab.errors import ConfigurationError, DegenerateFit, UnknownEnvironment
from cmdp_lab.harness import (RunConfig, diagnostics_report, fit_exponent, load_config,
                              random_thetas, run_experiment, sweep)
from cmdp_lab.trace import EPOCH_COLUMNS, STEP_COLUMNS


def small(**kw):
    base = dict(env="FunnelRing", algo={"total_steps": 2048, "t_max": 8}, n_seeds=2)
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(autouse=True)
def single_worker(monkeypatch):
    monkeypatch.setenv("CMDP_LAB_THREADS", "1")


# ------------------------------------------------------------------ config

def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigurationError):
        RunConfig.from_dict({"env": "TwoRing", "algo": {"total_steps": 10}, "colour": 1})
    with pytest.raises(ConfigurationError):
        RunConfig.from_dict({"env": "TwoRing", "algo": {"total_steps": 10, "speed": 2}})
    with pytest.raises(ConfigurationError):
        RunConfig.from_dict({"env": "TwoRing", "algo": {}})
    with pytest.raises(ConfigurationError):
        RunConfig.from_dict({"algo": {"total_steps": 10}})
    with pytest.raises(UnknownEnvironment):
        RunConfig.from_dict({"env": "Nope", "algo": {"total_steps": 10}})


def test_config_files(tmp_path):
    toml = tmp_path / "c.toml"
    toml.write_text('env = "TwoRing"\nn_seeds = 3\n[algo]\ntotal_steps = 1024\nalpha = 0.0\n')
    cfg = load_config(toml)
    assert cfg.n_seeds == 3 and cfg.algo == {"total_steps": 1024, "alpha": 0.0}
    js = tmp_path / "c.json"
    js.write_text(json.dumps(cfg.to_dict()))
    assert load_config(js) == cfg
    bad = tmp_path / "c.yaml"
    bad.write_text("")
    with pytest.raises(ConfigurationError):
        load_config(bad)


def test_explicit_algo_fields_override_schedule():
    cfg = small(algo={"total_steps": 4096, "kappa_alpha": 2.0, "beta": 0.0, "t_max": 16})
    algo = cfg.algo_config(cfg.build_model(), 3)
    assert algo.alpha == pytest.approx(2.0 / 64) and algo.beta == 0.0
    assert algo.t_max == 16 and algo.seed == 3


# --------------------------------------------------------------------- run

def test_run_experiment_outputs(tmp_path):
    res = run_experiment(small(), tmp_path)
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["n_seeds"] == 2 and len(summary["seeds"]) == 2
    for i in range(2):
        with open(tmp_path / f"seed_{i}_steps.csv") as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == STEP_COLUMNS
        with open(tmp_path / f"seed_{i}_epochs.csv") as fh:
            epochs = list(csv.reader(fh))
        assert tuple(epochs[0]) == EPOCH_COLUMNS
        # summary regret recomputed from the step CSV
        rewards = np.array([float(r[3]) for r in rows[1:]])
        j_star = summary["seeds"][i]["j_r_star"]
        assert summary["seeds"][i]["regret"] == pytest.approx(rewards.size * j_star - rewards.sum(),
                                                              abs=1e-9)
        assert len(rows) - 1 == sum(int(e[5]) for e in epochs[1:])
    assert res.mean("T") > 0


def test_run_is_byte_identical(tmp_path):
    run_experiment(small(), tmp_path / "a")
    run_experiment(small(), tmp_path / "b")
    for name in ("seed_0_steps.csv", "seed_1_epochs.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_frozen_uniform_policy_on_self_loop_has_zero_mean_regret():
    cfg = RunConfig(env="ConstrainedSelfLoop", n_seeds=1,
                    algo={"total_steps": 2 ** 15, "alpha": 0.0, "beta": 0.0})
    res = run_experiment(cfg)
    seed = res.seeds[0]
    # r_t is Bernoulli(0.5) per step, so the regret is a centred sum
    assert abs(seed["regret"]) <= 3 * 0.5 * np.sqrt(seed["T"])
    assert seed["final_j_r"] == 0.5


def test_zero_epochs_summary():
    cfg = small(algo={"total_steps": 64}, n_seeds=1)
    res = run_experiment(cfg)
    assert res.seeds[0]["K"] == 0 and res.seeds[0]["T"] == 0 and res.seeds[0]["regret"] == 0.0


def test_pool_matches_serial(tmp_path, monkeypatch):
    serial = run_experiment(small(n_seeds=3))
    monkeypatch.setenv("CMDP_LAB_THREADS", "2")
    pooled = run_experiment(small(n_seeds=3))
    assert [s["regret"] for s in serial.seeds] == [s["regret"] for s in pooled.seeds]


def test_bad_thread_count(monkeypatch):
    monkeypatch.setenv("CMDP_LAB_THREADS", "many")
    with pytest.raises(ConfigurationError):
        run_experiment(small(n_seeds=2))


# ------------------------------------------------------------------- sweep

def test_sweep_table(tmp_path):
    cfg = RunConfig(env="FunnelRing", n_seeds=2, algo={"total_steps": 1, "t_max": 8})
    table = sweep(cfg, [1024, 2048, 4096, 8192], tmp_path)
    assert [r["T"] for r in table.rows] == [1024, 2048, 4096, 8192]
    regret = table.column("regret")
    assert np.all(regret > 0) and np.all(np.diff(regret) > 0)
    assert (tmp_path / "sweep.csv").exists() and (tmp_path / "fits.json").exists()
    assert (tmp_path / "T_1024" / "summary.json").exists()


def test_sweep_rejects_bad_horizons():
    cfg = small()
    for bad in ([1000], [2048, 1024], []):
        with pytest.raises(ConfigurationError):
            sweep(cfg, bad)


# --------------------------------------------------------------------- fit

def test_fit_exponent_exact_laws():
    t = 2.0 ** np.arange(10, 17)
    assert fit_exponent(t, 3 * t ** 0.5).slope == pytest.approx(0.5, abs=1e-12)
    assert fit_exponent(t, np.full(t.size, 4.0)).slope == pytest.approx(0.0, abs=1e-12)
    fit = fit_exponent(t, t)
    assert fit.slope == pytest.approx(1.0, abs=1e-12) and fit.ci_low <= 1.0 <= fit.ci_high


def test_fit_exponent_interval_covers_truth():
    rng = np.random.default_rng(0)
    t = 2.0 ** np.arange(10, 17)
    hits = 0
    for _ in range(400):
        fit = fit_exponent(t, t ** 0.5 * np.exp(rng.normal(scale=0.1, size=t.size)))
        hits += fit.ci_low <= 0.5 <= fit.ci_high
    assert 0.92 <= hits / 400 <= 0.98


def test_fit_exponent_degenerate():
    t = [1, 2, 4, 8]
    with pytest.raises(DegenerateFit):
        fit_exponent(t, [1.0, -1.0, 2.0, 3.0])
    with pytest.raises(DegenerateFit):
        fit_exponent(t[:3], [1.0, 2.0, 3.0])


# ------------------------------------------------------------- diagnostics

def test_diagnostics_two_ring_kernel_inclusion():
    model = envs.build("TwoRing")
    reports = diagnostics_report(model, random_thetas(model, 5, seed=1))
    assert all(r["kernel_inclusion_residual"] < 1e-10 for r in reports)
    json.dumps(reports)


def test_diagnostics_transient_funnel_value_bound():
    model = envs.build("TransientFunnel")
    rep = diagnostics_report(model, [np.zeros(4)])[0]
    assert rep["c_hit"] == pytest.approx(2.0)
    assert rep["v_slack_r"] >= 0 and rep["v_slack_c"] >= 0


@pytest.mark.parametrize("name", ["TwoRing", "FunnelRing", "RandomUnichain"])
def test_diagnostics_cesaro_bound(name):
    model = envs.build(name)
    for rep in diagnostics_report(model, random_thetas(model, 3, seed=2)):
        assert rep["recurrent_slack"] >= -1e-12
