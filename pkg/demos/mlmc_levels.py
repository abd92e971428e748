"""The multilevel Monte Carlo estimator on a chain with a transient entry.

Estimates the stationary occupancy of ring state 1 in FunnelRing (uniform
policy) from chains started in the transient state.  The bias from the
transient phase and the ring's period dies out as T_max grows, while the mean
trajectory length grows only like log2(T_max).
"""
import numpy as np

from cmdp_lab import SoftmaxPolicy, envs
from cmdp_lab.estimators import expected_length, measure_mlmc_moments

model = envs.build("FunnelRing")
policy = SoftmaxPolicy.uniform(model)
indicator = np.zeros((model.n_states, model.n_actions))
indicator[1] = 1.0
rng = np.random.default_rng(7)

print(f"{'T_max':>6} {'bias^2':>10} {'noise':>10} {'E[len]':>7} {'theory':>7}")
for t_max in (2, 4, 16, 64, 256):
    m = measure_mlmc_moments(model, policy, indicator, t_max, 100_000, rng, s0=0)
    print(f"{t_max:6d} {m.bias_sq:10.2e} {m.bias_sq_noise:10.2e} "
          f"{m.mean_length:7.3f} {expected_length(t_max):7.3f}")
