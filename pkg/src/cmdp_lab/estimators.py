"""Trajectory simulation and the stochastic critic/NPG/MLMC estimators.

Per-sample terms are computed in vectorized form over whole trajectories;
the single-transition functions ``critic_sample`` and ``npg_sample`` are the
reference definitions the vectorized ones are tested against.
"""
from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError
from .model import CmdpModel, FeatureMap, SoftmaxPolicy, validate_unichain

PHASES = {"burn_in": 0, "critic_r": 1, "critic_c": 2, "npg_r": 3, "npg_c": 4, "rollout": 5}


@dataclass(frozen=True)
class RngStream:
    """Named random stream: ``(seed, stream_id)`` fully determines the draws."""

    seed: int
    stream_id: tuple = ()

    def generator(self) -> np.random.Generator:
        key = tuple(int(x) for x in self.stream_id)
        return np.random.default_rng(np.random.SeedSequence(int(self.seed), spawn_key=key))

    def child(self, *ids) -> "RngStream":
        ids = tuple(PHASES[i] if isinstance(i, str) else int(i) for i in ids)
        return RngStream(self.seed, tuple(self.stream_id) + ids)


@dataclass(frozen=True)
class Transition:
    s: int
    a: int
    s_next: int
    r: float
    c: float

    def signal(self, g: str) -> float:
        if g == "r":
            return self.r
        if g == "c":
            return self.c
        raise ConfigurationError(f"signal must be 'r' or 'c', got {g!r}")


@dataclass
class Trajectory:
    """``n`` consecutive transitions; ``states`` has ``n + 1`` entries."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    costs: np.ndarray

    def __len__(self) -> int:
        return self.actions.size

    @property
    def s(self) -> np.ndarray:
        return self.states[:-1]

    @property
    def s_next(self) -> np.ndarray:
        return self.states[1:]

    @property
    def final_state(self) -> int:
        return int(self.states[-1])

    def signal(self, g: str) -> np.ndarray:
        if g == "r":
            return self.rewards
        if g == "c":
            return self.costs
        raise ConfigurationError(f"signal must be 'r' or 'c', got {g!r}")

    def transitions(self):
        for t in range(len(self)):
            yield Transition(int(self.states[t]), int(self.actions[t]), int(self.states[t + 1]),
                             float(self.rewards[t]), float(self.costs[t]))


class ChainSampler:
    """Samples ``(a, s')`` jointly from ``pi(a|s) P(s'|s, a)`` by inverse CDF.

    One uniform per step; the joint table is built once per policy.
    """

    def __init__(self, model: CmdpModel, policy: SoftmaxPolicy):
        S, A = model.n_states, model.n_actions
        joint = (policy.probs()[:, :, None] * model.transition).reshape(S, A * S)
        cum = np.cumsum(joint, axis=1)
        for s in range(S):
            # the last positive entry absorbs rounding so u < 1 always lands
            last = np.flatnonzero(joint[s] > 0)[-1]
            cum[s, last:] = 1.0
        self.model = model
        self._cum = cum
        self._cum_rows = [row.tolist() for row in cum]
        self._n_states = S
        self._reward = model.reward.tolist()
        self._cost = model.cost.tolist()

    def step(self, s: int, rng: np.random.Generator) -> Transition:
        idx = bisect_right(self._cum_rows[s], rng.random())
        a, s_next = divmod(idx, self._n_states)
        return Transition(s, a, s_next, self._reward[s][a], self._cost[s][a])

    def rollout(self, s0: int, n: int, rng: np.random.Generator) -> Trajectory:
        states = np.empty(n + 1, dtype=np.int64)
        actions = np.empty(n, dtype=np.int64)
        states[0] = s = int(s0)
        rows, S = self._cum_rows, self._n_states
        for t, u in enumerate(rng.random(n).tolist()):
            a, s = divmod(bisect_right(rows[s], u), S)
            actions[t] = a
            states[t + 1] = s
        src = states[:-1]
        return Trajectory(states, actions, self.model.reward[src, actions],
                          self.model.cost[src, actions])

    def batch_rollout(self, s0, n: int, rng: np.random.Generator):
        """Run independent chains in lockstep; returns (states, actions) arrays.

        ``states`` has shape (n_chains, n + 1), ``actions`` (n_chains, n).
        """
        s = np.array(s0, dtype=np.int64).ravel()
        states = np.empty((s.size, n + 1), dtype=np.int64)
        actions = np.empty((s.size, n), dtype=np.int64)
        states[:, 0] = s
        for t in range(n):
            u = rng.random(s.size)
            idx = np.sum(self._cum[s] <= u[:, None], axis=1)
            actions[:, t], s = np.divmod(idx, self._n_states)
            states[:, t + 1] = s
        return states, actions


def step_chain(model: CmdpModel, policy: SoftmaxPolicy, s: int,
               rng: np.random.Generator) -> Transition:
    return ChainSampler(model, policy).step(int(s), rng)


# ---------------------------------------------------------------- critic terms

def critic_sample(features: FeatureMap, c_gamma: float, xi, z: Transition, g: str = "r") -> np.ndarray:
    """``A(z) xi - b(z)`` for one transition, built from the explicit matrices."""
    xi = np.asarray(xi, dtype=float)
    phi_s, phi_n = features.phi[z.s], features.phi[z.s_next]
    m = phi_s.size
    if xi.shape != (m + 1,):
        raise ConfigurationError(f"xi must have {m + 1} entries")
    value = z.signal(g)
    a = np.zeros((m + 1, m + 1))
    a[0, 0] = c_gamma
    a[1:, 0] = phi_s
    a[1:, 1:] = np.outer(phi_s, phi_s - phi_n)
    b = np.concatenate([[c_gamma * value], value * phi_s])
    return a @ xi - b


def critic_terms(features: FeatureMap, c_gamma: float, xi, s, s_next, values) -> np.ndarray:
    """Row ``t`` equals ``critic_sample`` for transition ``t``; shape (n, 1 + m)."""
    phi = features.phi
    eta, zeta = float(xi[0]), np.asarray(xi[1:], dtype=float)
    v = phi @ zeta
    td = eta + v[s] - v[s_next] - values
    out = np.empty((len(values), 1 + phi.shape[1]))
    out[:, 0] = c_gamma * (eta - values)
    out[:, 1:] = phi[s] * td[:, None]
    return out


# ------------------------------------------------------------------- NPG terms

def td_advantage(features: FeatureMap, xi, s, s_next, values):
    """Critic-based advantage ``g - eta + zeta.(phi(s') - phi(s))``."""
    v = features.phi @ np.asarray(xi[1:], dtype=float)
    return values - float(xi[0]) + v[s_next] - v[s]


def npg_sample(policy: SoftmaxPolicy, features: FeatureMap, xi, omega, z: Transition,
               g: str = "r") -> np.ndarray:
    """``psi psi^T omega - A_hat psi`` for one transition, ``psi`` the policy score."""
    psi = policy.score_table()[z.s, z.a]
    adv = td_advantage(features, xi, z.s, z.s_next, z.signal(g))
    return psi * (psi @ np.asarray(omega, dtype=float)) - adv * psi


def npg_terms(score_table: np.ndarray, features: FeatureMap, xi, omega, s, a, s_next,
              values) -> np.ndarray:
    psi = score_table[s, a]
    adv = td_advantage(features, xi, s, s_next, values)
    return psi * (psi @ np.asarray(omega, dtype=float) - adv)[:, None]


# ------------------------------------------------------------------------ MLMC

def draw_level(rng: np.random.Generator) -> int:
    """Geometric level on {1, 2, ...} with ``Pr[Q = j] = 2**-j``."""
    return int(rng.geometric(0.5))


def check_t_max(t_max: int) -> int:
    t_max = int(t_max)
    if t_max < 1 or t_max & (t_max - 1):
        raise ConfigurationError(f"t_max must be a power of two, got {t_max}")
    return t_max


def trajectory_length(q: int, t_max: int) -> int:
    return 2 ** q if 2 ** q <= t_max else 1


def expected_length(t_max: int) -> float:
    j = int(np.log2(check_t_max(t_max)))
    return j + 2.0 ** -j


@dataclass
class MlmcDraw:
    level_q: int
    truncated: bool
    length: int
    level_averages: dict
    estimate: np.ndarray
    trajectory: Optional[Trajectory] = field(default=None, repr=False)


def mlmc_combine(terms, q: int, t_max: int):
    """Combine per-sample terms of one trajectory into the telescoped estimate.

    Returns ``(estimate, level_averages)``; ``terms`` must hold exactly
    ``trajectory_length(q, t_max)`` rows.
    """
    terms = np.asarray(terms, dtype=float)
    length = trajectory_length(q, t_max)
    if terms.shape[0] != length:
        raise ConfigurationError(f"expected {length} terms for level {q}, got {terms.shape[0]}")
    g0 = terms[0]
    if 2 ** q > t_max:
        return g0.copy(), {0: g0}
    top = terms.mean(axis=0)
    below = terms[: 2 ** (q - 1)].mean(axis=0)
    return g0 + 2 ** q * (top - below), {0: g0, q - 1: below, q: top}


def mlmc_estimate(rollout: Callable, rng: np.random.Generator, t_max: int):
    """Draw a level, request that many samples from ``rollout`` and combine.

    ``rollout(n)`` must return ``(terms, trajectory)`` where ``terms`` holds the
    ``n`` per-sample values of one continuous trajectory (``trajectory`` may be
    None).  Threading the chain state is the rollout's job.
    """
    t_max = check_t_max(t_max)
    q = draw_level(rng)
    length = trajectory_length(q, t_max)
    terms, traj = rollout(length)
    estimate, levels = mlmc_combine(terms, q, t_max)
    return estimate, MlmcDraw(q, 2 ** q > t_max, length, levels, estimate, traj)


def mlmc_expectation(stream, t_max: int) -> np.ndarray:
    """Exact expectation over the level of the estimator on a fixed stream."""
    t_max = check_t_max(t_max)
    stream = np.asarray(stream, dtype=float)
    top = int(np.log2(t_max))
    if stream.shape[0] < max(t_max, 1):
        raise ConfigurationError("stream must hold at least t_max samples")
    total = 0.5 ** top * stream[0]   # Pr[Q > top] = 2**-top, truncated to g0
    for j in range(1, top + 1):
        est, _ = mlmc_combine(stream[: 2 ** j], j, t_max)
        total = total + 0.5 ** j * est
    return total


# ------------------------------------------------------------ moment estimates

def _functional_values(model: CmdpModel, functional, states, actions):
    f = np.asarray(functional, dtype=float)
    if f.shape == (model.n_states, model.n_actions):
        return f[states[..., :-1], actions]
    if f.shape == (model.n_states, model.n_actions, model.n_states):
        return f[states[..., :-1], actions, states[..., 1:]]
    raise ConfigurationError("functional must be an (S, A) or (S, A, S) table")


def stationary_mean(model: CmdpModel, policy: SoftmaxPolicy, functional) -> float:
    from .oracle import occupancy

    f = np.asarray(functional, dtype=float)
    nu = occupancy(model, policy)
    if f.ndim == 3:
        f = np.einsum("sat,sat->sa", model.transition, f)
    return float(np.sum(nu * f))


def _default_start(model: CmdpModel) -> int:
    return min(validate_unichain(model).recurrent)


@dataclass(frozen=True)
class MlmcMoments:
    truth: float
    mean: float
    bias_sq: float
    mse: float
    variance: float
    mean_length: float
    n_trials: int

    @property
    def bias_sq_noise(self) -> float:
        """Expected Monte Carlo floor of ``bias_sq`` (variance of the mean)."""
        return self.variance / self.n_trials


def measure_mlmc_moments(model: CmdpModel, policy: SoftmaxPolicy, functional, t_max: int,
                         n_trials: int, rng: np.random.Generator, s0: Optional[int] = None,
                         truth: Optional[float] = None) -> MlmcMoments:
    """Monte Carlo bias and second moment of the MLMC estimate of a stationary mean.

    Every trial restarts the chain at ``s0`` (default: the smallest recurrent
    state) and draws its own level.  Trials sharing a level are simulated in
    lockstep.
    """
    t_max = check_t_max(t_max)
    if truth is None:
        truth = stationary_mean(model, policy, functional)
    s0 = _default_start(model) if s0 is None else int(s0)
    sampler = ChainSampler(model, policy)
    levels = rng.geometric(0.5, size=n_trials)
    estimates = np.empty(n_trials)
    lengths = np.empty(n_trials)
    for q in np.unique(levels):
        idx = np.flatnonzero(levels == q)
        length = trajectory_length(int(q), t_max)
        states, actions = sampler.batch_rollout(np.full(idx.size, s0), length, rng)
        vals = _functional_values(model, functional, states, actions)
        if 2 ** q > t_max:
            est = vals[:, 0]
        else:
            est = vals[:, 0] + 2 ** q * (vals.mean(axis=1) - vals[:, : 2 ** (q - 1)].mean(axis=1))
        estimates[idx] = est
        lengths[idx] = length
    err = estimates - truth
    mean = float(estimates.mean())
    return MlmcMoments(truth, mean, (mean - truth) ** 2, float(np.mean(err ** 2)),
                       float(estimates.var(ddof=1)) if n_trials > 1 else 0.0,
                       float(lengths.mean()), n_trials)


def sample_average_mse(model: CmdpModel, policy: SoftmaxPolicy, functional, sizes,
                       n_trials: int, rng: np.random.Generator, s0: Optional[int] = None,
                       truth: Optional[float] = None) -> dict:
    """MSE of the plain N-sample average for every N in ``sizes``.

    All sizes reuse prefixes of the same ``n_trials`` trajectories.  Returns
    ``{N: (mse, standard_error)}``.
    """
    sizes = sorted(int(n) for n in sizes)
    if truth is None:
        truth = stationary_mean(model, policy, functional)
    s0 = _default_start(model) if s0 is None else int(s0)
    sampler = ChainSampler(model, policy)
    states, actions = sampler.batch_rollout(np.full(n_trials, s0), sizes[-1], rng)
    vals = _functional_values(model, functional, states, actions)
    prefix = np.cumsum(vals, axis=1)
    out = {}
    for n in sizes:
        sq = (prefix[:, n - 1] / n - truth) ** 2
        out[n] = (float(sq.mean()), float(sq.std(ddof=1) / np.sqrt(n_trials)))
    return out


def empirical_transition_counts(model: CmdpModel, policy: SoftmaxPolicy, s: int, n: int,
                                rng: np.random.Generator) -> np.ndarray:
    """(A, S) counts of ``(a, s')`` after ``n`` one-step draws from state ``s``."""
    sampler = ChainSampler(model, policy)
    states, actions = sampler.batch_rollout(np.full(n, int(s)), 1, rng)
    counts = np.zeros((model.n_actions, model.n_states))
    np.add.at(counts, (actions[:, 0], states[:, 1]), 1)
    return counts


def exact_transition_law(model: CmdpModel, policy: SoftmaxPolicy):
    """Stationary law of ``(s, a, s')`` as an (S, A, S) array."""
    from .oracle import occupancy

    return occupancy(model, policy)[:, :, None] * model.transition


__all__ = [
    "PHASES", "RngStream", "Transition", "Trajectory", "ChainSampler", "step_chain",
    "critic_sample", "critic_terms", "td_advantage", "npg_sample", "npg_terms",
    "draw_level", "check_t_max", "trajectory_length", "expected_length", "MlmcDraw",
    "mlmc_combine", "mlmc_estimate", "mlmc_expectation", "stationary_mean", "MlmcMoments",
    "measure_mlmc_moments", "sample_average_mse", "empirical_transition_counts",
    "exact_transition_law",
]
