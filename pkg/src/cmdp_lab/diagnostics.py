"""Numerical checks of the structural conditions the analysis relies on.

Every function takes a model and a policy and returns plain floats, so the
results can be dumped as JSON and asserted on directly.
"""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .model import CmdpModel, FeatureMap, SoftmaxPolicy, induced_kernel, validate_unichain
from .oracle import (_recurrent, c_gamma_from_lambda, cesaro_tv_curve, critic_ground_truth,
                     critic_sample_matrices, fisher_exact, hitting_constants, solve_poisson)

# When ker(M)^perp is trivial the curvature assumption holds for every lambda;
# the bound is then checked with this value.
LAMBDA_EMPTY_COMPLEMENT = 1.0

# width of the admissible range of each signal: rewards in [0, 1], costs in [-1, 1]
SIGNAL_WIDTH = {"r": 1.0, "c": 2.0}


def effective_lambda(lambda_subspace: float) -> float:
    return lambda_subspace if math.isfinite(lambda_subspace) else LAMBDA_EMPTY_COMPLEMENT


def diagnostic_c_gamma(lambda_subspace: float) -> float:
    """Unclamped critic weight for the positive-definiteness check."""
    return c_gamma_from_lambda(effective_lambda(lambda_subspace), hi=None)


def subspace_pd_check(model: CmdpModel, policy: SoftmaxPolicy, features: FeatureMap,
                      rng: np.random.Generator, n_samples: int = 1000, g: str = "r",
                      c_gamma: Optional[float] = None, recurrent=None) -> dict:
    """Smallest ``xi.A.xi / |xi|^2`` over random ``xi`` with zeta off the kernel."""
    gt = critic_ground_truth(model, policy, features, 1.0, g, recurrent)
    lam = effective_lambda(gt.lambda_subspace)
    c = diagnostic_c_gamma(gt.lambda_subspace) if c_gamma is None else c_gamma
    a = gt.a_matrix.copy()
    a[0, 0] = c
    xi = rng.normal(size=(n_samples, a.shape[0])) @ gt.projector().T
    quad = np.einsum("ni,ij,nj->n", xi, a, xi) / np.einsum("ni,ni->n", xi, xi)
    worst = float(quad.min())
    return {"lambda": lam, "c_gamma": c, "min_ratio": worst, "bound": lam / 2,
            "slack": worst - lam / 2}


def kernel_inclusion_residual(model: CmdpModel, policy: SoftmaxPolicy, features: FeatureMap,
                              c_gamma: float = 1.0, recurrent=None) -> float:
    """max ``|A(z) x|`` over recurrent transitions ``z`` and kernel basis vectors ``x``."""
    rec = _recurrent(model, recurrent)
    gt = critic_ground_truth(model, policy, features, c_gamma, "r", rec)
    basis = gt.kernel_vectors()
    if basis.shape[1] == 0:
        return 0.0
    kernel = induced_kernel(model, policy)
    worst = 0.0
    for s in sorted(rec):
        for s_next in np.flatnonzero(kernel[s] > 0):
            a_z = critic_sample_matrices(features, c_gamma, s, int(s_next))
            worst = max(worst, float(np.abs(a_z @ basis).max()))
    return worst


def value_bound_slack(model: CmdpModel, policy: SoftmaxPolicy, recurrent=None) -> dict:
    """Slack in ``|V| <= 2C`` and ``|A| <= 1 + 4C`` for reward and cost.

    Those constants presume ``|g - J| <= 1``.  Costs live in [-1, 1], where
    ``|c - J_c|`` can reach 2, so the ``*_scaled_*`` entries also report the
    bounds multiplied by the width of the signal's range.
    """
    consts = hitting_constants(model, policy, recurrent)
    c_total = consts.c_total
    out = {"c_hit": consts.c_hit, "c_tar": consts.c_tar, "c_total": c_total}
    for g in ("r", "c"):
        sol = solve_poisson(model, policy, g, recurrent)
        out[f"v_slack_{g}"] = float(2 * c_total - np.abs(sol.v).max())
        out[f"adv_slack_{g}"] = float(1 + 4 * c_total - np.abs(sol.adv).max())
        w = SIGNAL_WIDTH[g]
        out[f"v_slack_scaled_{g}"] = float(w * 2 * c_total - np.abs(sol.v).max())
        out[f"adv_slack_scaled_{g}"] = float(w * (1 + 4 * c_total) - np.abs(sol.adv).max())
    return out


def cesaro_slack(model: CmdpModel, policy: SoftmaxPolicy, horizon: int = 100,
                 recurrent=None) -> dict:
    """min over t and start states of the slack in the Cesàro TV bounds.

    Recurrent starts are compared with ``C_tar / t``, all starts with ``C / t``.
    """
    rec = _recurrent(model, recurrent)
    consts = hitting_constants(model, policy, rec)
    t = np.arange(1, horizon + 1)
    rec_slack, any_slack = np.inf, np.inf
    for s0 in range(model.n_states):
        tv = cesaro_tv_curve(model, policy, s0, horizon, rec)
        any_slack = min(any_slack, float(np.min(consts.c_total / t - tv)))
        if s0 in rec:
            rec_slack = min(rec_slack, float(np.min(consts.c_tar / t - tv)))
    return {"recurrent_slack": rec_slack, "any_start_slack": any_slack}


def fisher_eigenvalues(model: CmdpModel, policy: SoftmaxPolicy, eps_reg: float,
                       recurrent=None) -> dict:
    info = fisher_exact(model, policy, recurrent)
    return {"fisher_min_eig": info.min_eigenvalue(),
            "fisher_min_eig_reg": info.min_eigenvalue(eps_reg),
            "fisher_min_nonzero_eig": info.min_nonzero_eigenvalue()}


def condition_report(model: CmdpModel, policy: SoftmaxPolicy, features: Optional[FeatureMap] = None,
                     rng: Optional[np.random.Generator] = None, eps_reg: float = 1e-3,
                     n_pd_samples: int = 1000, horizon: int = 100) -> dict:
    features = features or FeatureMap.one_hot(model.n_states)
    rng = rng or np.random.default_rng(0)
    rec = validate_unichain(model).recurrent
    pd = subspace_pd_check(model, policy, features, rng, n_pd_samples, recurrent=rec)
    report = {
        "lambda_subspace": pd["lambda"],
        "c_gamma": pd["c_gamma"],
        "subspace_pd_slack": pd["slack"],
        "kernel_inclusion_residual": kernel_inclusion_residual(model, policy, features,
                                                               pd["c_gamma"], rec),
    }
    report.update(fisher_eigenvalues(model, policy, eps_reg, rec))
    report.update(value_bound_slack(model, policy, rec))
    report.update(cesaro_slack(model, policy, horizon, rec))
    return report
