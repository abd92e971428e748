import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cmdp_lab import envs
from cmdp_lab.errors import ConfigurationError
from cmdp_lab.estimators import (ChainSampler, RngStream, Transition, critic_sample, critic_terms,
                                 draw_level, empirical_transition_counts, exact_transition_law,
                                 expected_length, measure_mlmc_moments, mlmc_combine,
                                 mlmc_estimate, mlmc_expectation, npg_sample, npg_terms,
                                 sample_average_mse, stationary_mean, step_chain,
                                 trajectory_length)
from cmdp_lab.model import CmdpModel, FeatureMap, SoftmaxPolicy
from cmdp_lab.oracle import critic_ground_truth, fisher_exact

from conftest import random_policy


def uniform(name, **kw):
    m = envs.build(name, **kw)
    return m, SoftmaxPolicy.uniform(m)


# ---------------------------------------------------------------- sampling

def test_step_chain_deterministic_cases():
    rng = np.random.default_rng(0)
    m, pol = uniform("TwoRing")
    assert all(step_chain(m, pol, 0, rng).s_next == 1 for _ in range(50))
    m, pol = uniform("TransientFunnel", p=1.0)
    assert all(step_chain(m, pol, 0, rng).s_next == 1 for _ in range(50))


def test_transition_frequencies_in_binomial_bands():
    m = envs.build("RandomUnichain")
    pol = random_policy(m, np.random.default_rng(1))
    n = 100_000
    law = pol.probs()[:, :, None] * m.transition
    for s in range(m.n_states):
        counts = empirical_transition_counts(m, pol, s, n, np.random.default_rng(s))
        p = law[s]
        band = 3 * np.sqrt(n * p * (1 - p)) + 1e-9
        assert np.all(np.abs(counts - n * p) <= band)


def test_rollout_records_signals():
    m = envs.build("FunnelRing")
    pol = random_policy(m, np.random.default_rng(2))
    traj = ChainSampler(m, pol).rollout(0, 200, np.random.default_rng(3))
    assert len(traj) == 200 and traj.states.size == 201
    assert np.array_equal(traj.rewards, m.reward[traj.s, traj.actions])
    assert np.all(m.transition[traj.s, traj.actions, traj.s_next] > 0)
    z = list(traj.transitions())
    assert z[5] == Transition(int(traj.states[5]), int(traj.actions[5]), int(traj.states[6]),
                              float(traj.rewards[5]), float(traj.costs[5]))
    with pytest.raises(ConfigurationError):
        traj.signal("x")


def test_batch_rollout_matches_law():
    m = envs.build("RandomUnichain")
    pol = random_policy(m, np.random.default_rng(4))
    states, actions = ChainSampler(m, pol).batch_rollout(np.full(50_000, 3), 2,
                                                         np.random.default_rng(5))
    two_step = np.linalg.matrix_power(np.einsum("sa,sat->st", pol.probs(), m.transition), 2)[3]
    freq = np.bincount(states[:, 2], minlength=m.n_states) / 50_000
    assert np.all(np.abs(freq - two_step) <= 3 * np.sqrt(two_step * (1 - two_step) / 50_000) + 1e-9)


def test_rng_stream_reproducible_and_distinct():
    a = RngStream(3, (1, 2, 3)).generator().random(5)
    b = RngStream(3, (1, 2, 3)).generator().random(5)
    c = RngStream(3, (1, 2, 4)).generator().random(5)
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    assert RngStream(1).child(0, "critic_c", 7).stream_id == (0, 2, 7)


# ------------------------------------------------------------ critic terms

def test_critic_sample_zero_iterate():
    f = FeatureMap.one_hot(2)
    z = Transition(0, 0, 1, 0.7, 0.0)
    assert np.allclose(critic_sample(f, 2.0, np.zeros(3), z), [-1.4, -0.7, 0.0])


def test_critic_sample_hand_expansion():
    # one-hot on TwoRing, z = (0 -> 1): zeta-block = phi0 * (eta + zeta0 - zeta1 - g)
    f = FeatureMap.one_hot(2)
    xi = np.array([0.3, 0.2, -0.4])
    out = critic_sample(f, 1.5, xi, Transition(0, 0, 1, 1.0, 0.0))
    assert np.allclose(out, [1.5 * (0.3 - 1.0), 0.3 + 0.2 + 0.4 - 1.0, 0.0])
    same = critic_sample(f, 1.5, xi, Transition(1, 0, 1, 1.0, 0.0))
    assert np.allclose(same[1:], [0.0, 0.3 - 1.0])


def test_critic_terms_match_reference():
    m = envs.build("RandomUnichain")
    pol = random_policy(m, np.random.default_rng(6))
    f = FeatureMap.one_hot(m.n_states)
    traj = ChainSampler(m, pol).rollout(0, 50, np.random.default_rng(7))
    xi = np.random.default_rng(8).normal(size=m.n_states + 1)
    vec = critic_terms(f, 3.0, xi, traj.s, traj.s_next, traj.costs)
    ref = np.array([critic_sample(f, 3.0, xi, z, "c") for z in traj.transitions()])
    assert np.allclose(vec, ref, atol=1e-14)


@pytest.mark.parametrize("name", ["TwoRing", "FunnelRing", "RandomUnichain"])
def test_critic_exact_expectation(name):
    m = envs.build(name)
    pol = random_policy(m, np.random.default_rng(9))
    f = FeatureMap.one_hot(m.n_states)
    gt = critic_ground_truth(m, pol, f, 2.5, "r")
    law = exact_transition_law(m, pol)
    xi = np.random.default_rng(10).normal(size=m.n_states + 1)
    avg = np.zeros(m.n_states + 1)
    for (s, a, t), w in np.ndenumerate(law):
        if w > 0:
            avg += w * critic_sample(f, 2.5, xi, Transition(s, a, t, m.reward[s, a], m.cost[s, a]))
    assert np.allclose(avg, gt.a_matrix @ xi - gt.b_vector, atol=1e-10)


# --------------------------------------------------------------- NPG terms

def test_npg_sample_examples():
    m, pol = uniform("ConstrainedSelfLoop")
    f = FeatureMap.one_hot(1)
    z = Transition(0, 0, 0, 1.0, -1.0)
    assert np.allclose(npg_sample(pol, f, np.zeros(2), np.zeros(2), z), [-0.5, 0.5])
    # zero TD error and zero omega
    assert np.allclose(npg_sample(pol, f, np.array([1.0, 0.3]), np.zeros(2), z), 0.0)


def test_npg_terms_match_reference():
    m = envs.build("FunnelRing")
    pol = random_policy(m, np.random.default_rng(11))
    f = FeatureMap.one_hot(m.n_states)
    rng = np.random.default_rng(12)
    traj = ChainSampler(m, pol).rollout(0, 40, rng)
    xi, omega = rng.normal(size=m.n_states + 1), rng.normal(size=pol.dim)
    vec = npg_terms(pol.score_table(), f, xi, omega, traj.s, traj.actions, traj.s_next, traj.rewards)
    ref = np.array([npg_sample(pol, f, xi, omega, z) for z in traj.transitions()])
    assert np.allclose(vec, ref, atol=1e-14)


def test_npg_exact_expectation():
    m = envs.build("RandomUnichain")
    pol = random_policy(m, np.random.default_rng(13))
    f = FeatureMap.one_hot(m.n_states)
    rng = np.random.default_rng(14)
    xi, omega = rng.normal(size=m.n_states + 1), rng.normal(size=pol.dim)
    law = exact_transition_law(m, pol)
    psi = pol.score_table()
    v = xi[1:]
    # critic-parameterized gradient: E[(g - eta + v(s') - v(s)) psi(s, a)]
    adv = m.cost[:, :, None] - xi[0] + v[None, None, :] - v[:, None, None]
    grad_hat = np.einsum("sat,sat,sad->d", law, adv, psi)
    expected = fisher_exact(m, pol).matrix @ omega - grad_hat
    avg = np.zeros(pol.dim)
    for (s, a, t), w in np.ndenumerate(law):
        if w > 0:
            avg += w * npg_sample(pol, f, xi, omega, Transition(s, a, t, m.reward[s, a], m.cost[s, a]), "c")
    assert np.allclose(avg, expected, atol=1e-10)


def test_per_sample_means_monte_carlo():
    m = envs.build("FunnelRing")
    pol = random_policy(m, np.random.default_rng(15))
    f = FeatureMap.one_hot(m.n_states)
    xi = np.array([0.5, 0.0, 0.1, -0.2, 0.3])
    traj = ChainSampler(m, pol).rollout(1, 100_000, np.random.default_rng(16))
    terms = critic_terms(f, 2.0, xi, traj.s, traj.s_next, traj.rewards)
    gt = critic_ground_truth(m, pol, f, 2.0, "r")
    # batch means absorb the Markov correlation in the error bars
    batches = terms.reshape(100, 1000, -1).mean(axis=1)
    se = batches.std(axis=0, ddof=1) / 10
    assert np.all(np.abs(terms.mean(axis=0) - (gt.a_matrix @ xi - gt.b_vector)) <= 3 * se + 1e-12)


# -------------------------------------------------------------------- MLMC

def test_level_law():
    rng = np.random.default_rng(17)
    q = rng.geometric(0.5, size=1_000_000)
    assert draw_level(np.random.default_rng(0)) >= 1
    for j in range(1, 11):
        p = 2.0 ** -j
        assert abs(np.mean(q == j) - p) <= 3 * np.sqrt(p * (1 - p) / q.size)


def test_length_formula():
    assert [trajectory_length(q, 8) for q in (1, 2, 3, 4, 9)] == [2, 4, 8, 1, 1]
    assert expected_length(8) == 3.125
    assert expected_length(1) == 1.0
    with pytest.raises(ConfigurationError):
        expected_length(6)


def test_mlmc_expectation_example():
    assert mlmc_expectation([1.0, 2.0, 3.0, 4.0], 4) == pytest.approx(2.5)


def test_t_max_one_returns_first_sample():
    rng = np.random.default_rng(18)
    for _ in range(20):
        est, draw = mlmc_estimate(lambda n: (np.array([[7.0]] * n), None), rng, 1)
        assert est[0] == 7.0 and draw.length == 1 and draw.truncated


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 8), st.integers(0, 2 ** 31 - 1))
def test_telescoping_identity(log_t, seed):
    t_max = 2 ** log_t
    stream = np.random.default_rng(seed).normal(size=(t_max, 3))
    assert np.allclose(mlmc_expectation(stream, t_max), stream.mean(axis=0), atol=1e-12)


def test_mlmc_combine_levels():
    terms = np.arange(1.0, 9.0)[:, None]
    est, levels = mlmc_combine(terms, 3, 8)
    assert levels[0][0] == 1.0 and levels[2][0] == 2.5 and levels[3][0] == 4.5
    assert est[0] == pytest.approx(1.0 + 8 * (4.5 - 2.5))
    with pytest.raises(ConfigurationError):
        mlmc_combine(terms[:5], 3, 8)


def test_mlmc_draws_reproducible():
    m = envs.build("FunnelRing")
    pol = SoftmaxPolicy.uniform(m)
    sampler = ChainSampler(m, pol)

    def draw(seed):
        rng = RngStream(seed, (0, 1, 0)).generator()
        return mlmc_estimate(lambda n: (sampler.rollout(1, n, rng).rewards[:, None],
                                        None), rng, 64)

    (e1, d1), (e2, d2) = draw(5), draw(5)
    assert np.array_equal(e1, e2) and d1.level_q == d2.level_q and d1.length == d2.length


def test_mlmc_moments_constant_functional():
    m, pol = uniform("FunnelRing")
    mom = measure_mlmc_moments(m, pol, np.full((4, 2), 0.3), 16, 2000, np.random.default_rng(19))
    assert mom.bias_sq == pytest.approx(0.0, abs=1e-24) and mom.variance == pytest.approx(0.0, abs=1e-24)
    assert mom.mean_length == pytest.approx(expected_length(16), rel=0.1)


def test_iid_chain_sample_average_mse():
    P = np.tile(np.array([0.2, 0.5, 0.3]), (3, 1, 1)).reshape(3, 1, 3)
    reward = np.array([[0.0], [0.5], [1.0]])
    m = CmdpModel(P, reward, np.zeros((3, 1)), [1 / 3] * 3)
    pol = SoftmaxPolicy.uniform(m)
    truth = stationary_mean(m, pol, reward)
    var = float(np.sum(np.array([0.2, 0.5, 0.3]) * (reward[:, 0] - truth) ** 2))
    # the first sample sits at s0, so start from a draw of the stationary law through one extra step
    f = np.broadcast_to(reward[None, :, 0][:, None, :], (3, 1, 3))   # value of s'
    out = sample_average_mse(m, pol, f, [4, 16, 64], 20_000, np.random.default_rng(20), truth=truth)
    for n, (mse, se) in out.items():
        assert abs(mse - var / n) <= 3 * se
