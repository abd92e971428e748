import numpy as np
import pytest

from cmdp_lab import envs
from cmdp_lab.diagnostics import (LAMBDA_EMPTY_COMPLEMENT, cesaro_slack, condition_report,
                                  diagnostic_c_gamma, effective_lambda, fisher_eigenvalues,
                                  kernel_inclusion_residual, subspace_pd_check,
                                  value_bound_slack)
from cmdp_lab.model import FeatureMap, SoftmaxPolicy

from conftest import ENV_NAMES, random_policy


def test_effective_lambda():
    assert effective_lambda(np.inf) == LAMBDA_EMPTY_COMPLEMENT
    assert effective_lambda(0.3) == 0.3
    assert diagnostic_c_gamma(0.05) == pytest.approx(0.05 + np.sqrt(400 - 1))


@pytest.mark.parametrize("name", ENV_NAMES)
def test_subspace_pd_holds(name):
    m = envs.build(name)
    rng = np.random.default_rng(0)
    for _ in range(3):
        pd = subspace_pd_check(m, random_policy(m, rng), FeatureMap.one_hot(m.n_states), rng, 500)
        assert pd["slack"] >= -1e-12


def test_subspace_pd_fails_with_too_small_weight():
    # c_gamma well below the prescribed value breaks the bound on TwoRing
    m = envs.build("TwoRing")
    pd = subspace_pd_check(m, SoftmaxPolicy.uniform(m), FeatureMap.one_hot(2),
                           np.random.default_rng(1), 2000, c_gamma=0.05)
    assert pd["slack"] < 0


@pytest.mark.parametrize("name", ENV_NAMES)
def test_kernel_inclusion(name):
    m = envs.build(name)
    pol = random_policy(m, np.random.default_rng(2))
    assert kernel_inclusion_residual(m, pol, FeatureMap.one_hot(m.n_states), 2.0) <= 1e-10


def test_value_bounds_transient_funnel():
    m = envs.build("TransientFunnel")
    out = value_bound_slack(m, SoftmaxPolicy.uniform(m))
    assert out["c_hit"] == pytest.approx(2.0)
    assert out["v_slack_r"] >= 0 and out["adv_slack_r"] >= 0


def test_cost_advantage_bound_needs_range_scaling():
    m = envs.build("ConstrainedSelfLoop")
    pol = SoftmaxPolicy.for_model(m, [2.0, 0.0])
    out = value_bound_slack(m, pol)
    # C = 0 here, while |c - J_c| exceeds 1 for the costly action
    assert out["c_total"] == 0.0
    assert out["adv_slack_c"] < 0 <= out["adv_slack_scaled_c"]


@pytest.mark.parametrize("name", ENV_NAMES)
def test_cesaro_slack(name):
    m = envs.build(name)
    out = cesaro_slack(m, random_policy(m, np.random.default_rng(3)), 100)
    assert out["recurrent_slack"] >= -1e-12
    assert out["any_start_slack"] >= -1e-12


def test_fisher_eigenvalues_regularized():
    m = envs.build("FunnelRing")
    out = fisher_eigenvalues(m, SoftmaxPolicy.uniform(m), 1e-3)
    assert abs(out["fisher_min_eig"]) < 1e-12
    assert out["fisher_min_eig_reg"] == pytest.approx(1e-3)
    assert out["fisher_min_nonzero_eig"] > 0


def test_condition_report_keys():
    m = envs.build("RandomUnichain")
    rep = condition_report(m, SoftmaxPolicy.uniform(m), n_pd_samples=50)
    for key in ("lambda_subspace", "c_gamma", "subspace_pd_slack", "kernel_inclusion_residual",
                "fisher_min_eig_reg", "c_hit", "c_tar", "v_slack_r", "adv_slack_c",
                "recurrent_slack", "any_start_slack"):
        assert key in rep
