"""Primal-dual natural actor-critic with per-epoch burn-in.

Each epoch runs, on one continuing chain: a burn-in of ``B`` steps, an MLMC
critic loop for the reward and for the cost, an MLMC NPG loop for each, and
finally the primal ascent / projected dual descent step.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, NonFiniteUpdate
from .estimators import (ChainSampler, RngStream, Trajectory, check_t_max, critic_terms,
                         draw_level, expected_length, mlmc_combine, npg_terms, trajectory_length)
from .model import CmdpModel, FeatureMap, SoftmaxPolicy, validate_unichain
from .trace import RegretTrace

log = logging.getLogger(__name__)

DEFAULT_T_MAX = 64


@dataclass(frozen=True)
class AlgoConfig:
    total_steps: int
    epochs: int
    inner_iters: int
    burn_in: int
    t_max: int
    alpha: float
    beta: float
    gamma_xi: float
    gamma_omega: float
    c_gamma: float
    eps_reg: float
    slater_delta: float
    seed: int = 0

    def __post_init__(self):
        for name in ("total_steps", "epochs", "inner_iters", "burn_in", "t_max", "seed"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < 0:
                raise ConfigurationError(f"{name} must be a non-negative integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        check_t_max(self.t_max)
        for name in ("alpha", "beta", "gamma_xi", "gamma_omega", "c_gamma", "eps_reg"):
            value = float(getattr(self, name))
            if not math.isfinite(value) or value < 0:
                raise ConfigurationError(f"{name} must be finite and non-negative, got {value!r}")
            object.__setattr__(self, name, value)
        if self.c_gamma <= 0:
            raise ConfigurationError("c_gamma must be positive")
        if not 0 < self.slater_delta <= 1:
            raise ConfigurationError(f"slater_delta must lie in (0, 1], got {self.slater_delta}")

    @property
    def lambda_max(self) -> float:
        return 2.0 / self.slater_delta

    @property
    def expected_epoch_length(self) -> float:
        return self.burn_in + 4 * self.inner_iters * expected_length(self.t_max)

    def replace(self, **changes) -> "AlgoConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "AlgoConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigurationError(f"unknown algorithm keys: {sorted(unknown)}")
        missing = {f.name for f in dataclasses.fields(cls)
                   if f.default is dataclasses.MISSING} - set(data)
        if missing:
            raise ConfigurationError(f"missing algorithm keys: {sorted(missing)}")
        return cls(**data)


def log_step_size(curvature: float, inner_iters: int, log_factor: float, kappa: float = 1.0,
                  cap: Optional[float] = None) -> float:
    """``kappa * log_factor / (curvature * H)``, optionally capped.

    Inner-loop steps of this shape give an ``O(log / H)`` error after ``H``
    iterations once ``kappa * log_factor`` is large enough to forget the start.
    """
    if curvature <= 0 or not math.isfinite(curvature):
        raise ConfigurationError(f"curvature must be positive and finite, got {curvature}")
    step = kappa * log_factor / (curvature * max(int(inner_iters), 1))
    return step if cap is None else min(step, cap)


def default_config(model: CmdpModel, total_steps: int, *, seed: int = 0,
                   t_max: int = DEFAULT_T_MAX, inner_iters: Optional[int] = None,
                   burn_in: Optional[int] = None, kappa_alpha: float = 10.0,
                   kappa_beta: float = 160.0, kappa_xi: float = 1.0, kappa_omega: float = 1.0,
                   gamma_xi_max: float = 0.1, gamma_omega_max: float = 0.5,
                   eps_reg: float = 1e-3, features: Optional[FeatureMap] = None,
                   theta0=None) -> AlgoConfig:
    """Parameter schedule with ``H ~ log T``, ``K ~ T / log T`` and ``alpha, beta ~ 1/sqrt(T)``.

    Problem constants (Slater margin, hitting time, critic curvature, Fisher
    curvature) are read from the exact oracle at the initial policy.  The
    critic and NPG steps follow ``8 ln T / (curvature * H)`` scaled by
    ``kappa_xi`` / ``kappa_omega`` and capped for stability.

    The default ``kappa_beta = 16 * kappa_alpha`` keeps the primal-dual orbit
    around the saddle point small: its logit amplitude scales like
    ``sqrt(alpha / beta)``.
    """
    from .oracle import (c_gamma_from_lambda, critic_feature_matrix, fisher_exact,
                         hitting_constants, solve_cmdp_lp)

    T = int(total_steps)
    if T < 2:
        raise ConfigurationError("total_steps must be at least 2")
    log2T = math.log2(T)
    policy = (SoftmaxPolicy.uniform(model) if theta0 is None
              else SoftmaxPolicy.for_model(model, theta0))
    features = features or FeatureMap.one_hot(model.n_states)
    structure = validate_unichain(model)
    lp = solve_cmdp_lp(model)
    delta = float(np.clip(lp.slater_delta, 1e-6, 1.0))
    consts = hitting_constants(model, policy, structure)
    lam_hat = critic_feature_matrix(model, policy, features, structure).lambda_subspace
    c_gamma = c_gamma_from_lambda(lam_hat)
    lam_eff = min(lam_hat, 1.0)
    mu_hat = fisher_exact(model, policy, structure).min_nonzero_eigenvalue() + eps_reg

    H = int(math.ceil(log2T)) if inner_iters is None else int(inner_iters)
    B = int(math.ceil((4 * consts.c_hit + 1) * log2T)) if burn_in is None else int(burn_in)
    epoch_len = B + 4 * H * (math.floor(math.log2(check_t_max(t_max))) + 1)
    K = T // epoch_len
    ln_t = math.log(T)
    gamma_xi = log_step_size(lam_eff, H, 8 * ln_t, kappa_xi, gamma_xi_max)
    gamma_omega = log_step_size(mu_hat, H, 8 * ln_t, kappa_omega, gamma_omega_max)
    return AlgoConfig(total_steps=T, epochs=K, inner_iters=H, burn_in=B, t_max=t_max,
                      alpha=kappa_alpha / math.sqrt(T), beta=kappa_beta / math.sqrt(T),
                      gamma_xi=gamma_xi, gamma_omega=gamma_omega, c_gamma=c_gamma,
                      eps_reg=eps_reg, slater_delta=delta, seed=seed)


@dataclass
class DualVariable:
    value: float = 0.0
    upper: float = 2.0

    def __post_init__(self):
        self.value = float(np.clip(self.value, 0.0, self.upper))

    def descend(self, beta: float, eta_c: float) -> float:
        self.value = float(np.clip(self.value - beta * eta_c, 0.0, self.upper))
        return self.value


@dataclass
class EpochRecord:
    k: int
    theta: np.ndarray
    lam: float
    eta_r: float
    eta_c: float
    xi_r: np.ndarray
    xi_c: np.ndarray
    omega_r: np.ndarray
    omega_c: np.ndarray
    omega: np.ndarray
    burn_in_hit: bool
    hit_step: Optional[int]
    samples_used: int
    j_r: float = float("nan")
    j_c: float = float("nan")


@dataclass
class BurnInResult:
    state: int
    hit: bool
    hit_step: Optional[int]
    trajectory: Trajectory


@dataclass
class PhaseResult:
    value: np.ndarray
    state: int
    trajectories: list = field(default_factory=list)

    @property
    def samples(self) -> int:
        return sum(len(t) for t in self.trajectories)


def _sampler(model, policy, sampler):
    return sampler if sampler is not None else ChainSampler(model, policy)


def _generator(rng) -> np.random.Generator:
    return rng.generator() if isinstance(rng, RngStream) else rng


def _stream(rng, phase: str, h: int) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.child(phase, h).generator()
    return rng


def burn_in(model: CmdpModel, policy: SoftmaxPolicy, s0: int, B: int, rng,
            recurrent=None, sampler: Optional[ChainSampler] = None) -> BurnInResult:
    """Advance ``B`` steps; report whether (and when) the recurrent class was entered.

    ``recurrent`` is only used for the diagnostic flag; it defaults to the
    oracle's recurrent class.
    """
    if B < 0:
        raise ConfigurationError("burn-in length must be non-negative")
    if recurrent is None:
        recurrent = validate_unichain(model).recurrent
    traj = _sampler(model, policy, sampler).rollout(int(s0), int(B), _generator(rng))
    member = np.isin(traj.states, np.fromiter(recurrent, dtype=np.int64))
    hit_step = int(np.argmax(member)) if member.any() else None
    return BurnInResult(traj.final_state, hit_step is not None, hit_step, traj)


def run_critic_phase(model: CmdpModel, policy: SoftmaxPolicy, features: FeatureMap,
                     config: AlgoConfig, g: str, state: int, rng,
                     sampler: Optional[ChainSampler] = None,
                     exact_target: Optional[np.ndarray] = None,
                     gradient_fn: Optional[Callable] = None) -> PhaseResult:
    """``H`` MLMC-TD iterations from ``xi = 0``; returns the final ``xi``.

    With ``exact_target`` the chain is still simulated (so sample accounting is
    unchanged) but the returned value is the supplied fixed point.
    ``gradient_fn(xi)``, when given, replaces the MLMC estimate inside the
    recursion (the noiseless surrogate).
    """
    sampler = _sampler(model, policy, sampler)
    xi = np.zeros(1 + features.dimension)
    result = PhaseResult(xi, int(state))
    for h in range(config.inner_iters):
        gen = _stream(rng, f"critic_{g}", h)
        q = draw_level(gen)
        traj = sampler.rollout(result.state, trajectory_length(q, config.t_max), gen)
        result.state = traj.final_state
        result.trajectories.append(traj)
        if exact_target is not None:
            continue
        if gradient_fn is not None:
            estimate = gradient_fn(xi)
        else:
            terms = critic_terms(features, config.c_gamma, xi, traj.s, traj.s_next, traj.signal(g))
            estimate, _ = mlmc_combine(terms, q, config.t_max)
        with np.errstate(over="ignore", invalid="ignore"):
            xi = xi - config.gamma_xi * estimate
        if not np.all(np.isfinite(xi)):
            raise NonFiniteUpdate(f"critic iterate for '{g}' diverged at h={h}")
    result.value = np.array(exact_target, dtype=float) if exact_target is not None else xi
    return result


def run_npg_phase(model: CmdpModel, policy: SoftmaxPolicy, features: FeatureMap, xi_g,
                  config: AlgoConfig, g: str, state: int, rng,
                  sampler: Optional[ChainSampler] = None,
                  exact_target: Optional[np.ndarray] = None,
                  gradient_fn: Optional[Callable] = None) -> PhaseResult:
    """``H`` MLMC-SGD iterations on the regularized NPG least-squares objective.

    ``gradient_fn(omega)`` overrides the MLMC estimate of the unregularized
    gradient, as in ``run_critic_phase``.
    """
    sampler = _sampler(model, policy, sampler)
    scores = policy.score_table()
    omega = np.zeros(policy.dim)
    result = PhaseResult(omega, int(state))
    for h in range(config.inner_iters):
        gen = _stream(rng, f"npg_{g}", h)
        q = draw_level(gen)
        traj = sampler.rollout(result.state, trajectory_length(q, config.t_max), gen)
        result.state = traj.final_state
        result.trajectories.append(traj)
        if exact_target is not None:
            continue
        if gradient_fn is not None:
            estimate = gradient_fn(omega)
        else:
            terms = npg_terms(scores, features, xi_g, omega, traj.s, traj.actions, traj.s_next,
                              traj.signal(g))
            estimate, _ = mlmc_combine(terms, q, config.t_max)
        omega = omega - config.gamma_omega * (estimate + config.eps_reg * omega)
        if not np.all(np.isfinite(omega)):
            raise NonFiniteUpdate(f"NPG iterate for '{g}' diverged at h={h}")
    result.value = np.array(exact_target, dtype=float) if exact_target is not None else omega
    return result


def primal_dual_step(theta, lam: float, omega_r, omega_c, eta_c: float, config: AlgoConfig):
    """Return ``(theta', lambda', omega)`` with ``omega = omega_r + lambda * omega_c``."""
    theta = np.asarray(theta, dtype=float)
    values = [theta, np.asarray(omega_r, float), np.asarray(omega_c, float), [lam, eta_c]]
    if not all(np.all(np.isfinite(v)) for v in values):
        raise NonFiniteUpdate("non-finite input to the primal-dual step")
    with np.errstate(over="ignore", invalid="ignore"):
        omega = np.asarray(omega_r, dtype=float) + lam * np.asarray(omega_c, dtype=float)
        new_theta = theta + config.alpha * omega
    new_lam = float(np.clip(lam - config.beta * eta_c, 0.0, config.lambda_max))
    if not (np.all(np.isfinite(new_theta)) and math.isfinite(new_lam)):
        raise NonFiniteUpdate("primal-dual step produced non-finite parameters")
    return new_theta, new_lam, omega


@dataclass
class RunResult:
    trace: RegretTrace
    epochs: list
    theta: np.ndarray
    lam: float
    config: AlgoConfig
    lagrangian: list = field(default_factory=list)
    lagrangian_drops: list = field(default_factory=list)


def _concat(chunks):
    if not chunks:
        return (np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0), np.zeros(0))
    return (np.concatenate([c.s for c in chunks]), np.concatenate([c.actions for c in chunks]),
            np.concatenate([c.rewards for c in chunks]), np.concatenate([c.costs for c in chunks]))


def run(model: CmdpModel, features_r: Optional[FeatureMap], features_c: Optional[FeatureMap],
        config: AlgoConfig, theta0=None, *, exact: bool = False, record_steps: bool = True,
        lagrangian_tol: float = 1e-12) -> RunResult:
    """Execute ``config.epochs`` epochs; deterministic given ``config.seed``.

    ``exact=True`` substitutes oracle fixed points for every estimator (the
    chain is still simulated for the trace) and logs any epoch where the
    Lagrangian ``J_r + lambda J_c`` decreases.
    """
    from .oracle import average_objective, critic_ground_truth, npg_exact, solve_cmdp_lp

    structure = validate_unichain(model)
    features_r = features_r or FeatureMap.one_hot(model.n_states, "r")
    features_c = features_c or FeatureMap.one_hot(model.n_states, "c")
    theta = (np.zeros(model.n_states * model.n_actions) if theta0 is None
             else np.array(theta0, dtype=float))
    policy = SoftmaxPolicy.for_model(model, theta)
    dual = DualVariable(0.0, config.lambda_max)
    root = RngStream(config.seed)
    state = int(root.child(0, "rollout", 0).generator().choice(model.n_states,
                                                                p=model.initial_dist))
    j_star = solve_cmdp_lp(model).j_r
    chunks, records = [], []
    lag, drops = [], []
    reward_sums, cost_sums = [], []

    for k in range(config.epochs):
        policy = policy.with_theta(theta)
        sampler = ChainSampler(model, policy)
        stream = root.child(k)
        b = burn_in(model, policy, state, config.burn_in, stream.child("burn_in", 0),
                    structure.recurrent, sampler)
        state = b.state
        epoch_chunks = [b.trajectory]
        j_r = average_objective(model, policy, "r", structure)
        j_c = average_objective(model, policy, "c", structure)

        targets = {}
        if exact:
            for g, feats in (("r", features_r), ("c", features_c)):
                gt = critic_ground_truth(model, policy, feats, config.c_gamma, g, structure)
                targets[g] = gt.xi_star
        xi = {}
        for g, feats in (("r", features_r), ("c", features_c)):
            res = run_critic_phase(model, policy, feats, config, g, state, stream, sampler,
                                   targets.get(g))
            xi[g], state = res.value, res.state
            epoch_chunks += res.trajectories
        omega = {}
        for g, feats in (("r", features_r), ("c", features_c)):
            target = npg_exact(model, policy, g, config.eps_reg, structure) if exact else None
            res = run_npg_phase(model, policy, feats, xi[g], config, g, state, stream, sampler,
                                target)
            omega[g], state = res.value, res.state
            epoch_chunks += res.trajectories

        eta_c = float(xi["c"][0]) if not exact else j_c
        lam = dual.value
        theta, new_lam, omega_k = primal_dual_step(theta, lam, omega["r"], omega["c"], eta_c,
                                                   config)
        dual.value = new_lam
        samples = sum(len(c) for c in epoch_chunks)
        reward_sums.append(sum(float(c.rewards.sum()) for c in epoch_chunks))
        cost_sums.append(sum(float(c.costs.sum()) for c in epoch_chunks))
        records.append(EpochRecord(k, policy.theta.copy(), lam, float(xi["r"][0]), eta_c,
                                   xi["r"], xi["c"], omega["r"], omega["c"], omega_k, b.hit,
                                   b.hit_step, samples, j_r, j_c))
        if record_steps:
            chunks += epoch_chunks
        if exact:
            lag.append(j_r + lam * j_c)
            if k and lag[-1] < lag[-2] - lagrangian_tol:
                drops.append(k)
                log.info("Lagrangian decreased at epoch %d: %.6g -> %.6g", k, lag[-2], lag[-1])

    states, actions, rewards, costs = _concat(chunks)
    trace = RegretTrace(
        states, actions, rewards, costs,
        np.array([r.j_r for r in records]), np.array([r.j_c for r in records]),
        np.array([r.lam for r in records]), np.array([r.burn_in_hit for r in records], bool),
        np.array([r.samples_used for r in records], dtype=np.int64), j_star,
        np.array(reward_sums), np.array(cost_sums))
    return RunResult(trace, records, theta, dual.value, config, lag, drops)


__all__ = [
    "AlgoConfig", "DualVariable", "EpochRecord", "BurnInResult", "PhaseResult", "RunResult",
    "DEFAULT_T_MAX", "default_config", "log_step_size", "burn_in", "run_critic_phase", "run_npg_phase",
    "primal_dual_step", "run",
]
