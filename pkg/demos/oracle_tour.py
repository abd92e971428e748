"""Walk through the exact oracle on every catalog environment.

For the uniform policy, prints the stationary distribution, both gains, the
hitting constants and the constrained optimum from the occupancy LP.

    python demos/oracle_tour.py
"""
import numpy as np

from cmdp_lab import SoftmaxPolicy, envs
from cmdp_lab.oracle import hitting_constants, solve_cmdp_lp, solve_poisson, stationary

np.set_printoptions(precision=3, suppress=True)

for spec in envs.catalog():
    model = spec.build()
    policy = SoftmaxPolicy.uniform(model)
    sol = stationary(model, policy)
    reward, cost = solve_poisson(model, policy, "r"), solve_poisson(model, policy, "c")
    consts = hitting_constants(model, policy)
    lp = solve_cmdp_lp(model)
    print(f"== {model.name}: {model.n_states} states, {model.n_actions} actions")
    print(f"   stationary d     {sol.dist}  (recurrent {sorted(sol.recurrent_support)})")
    print(f"   uniform policy   J_r={reward.gain:.4f}  J_c={cost.gain:.4f}")
    print(f"   constants        C_hit={consts.c_hit:.3f}  C_tar={consts.c_tar:.3f}")
    print(f"   optimum          J_r*={lp.j_r:.4f}  J_c={lp.j_c:.4f}  slater={lp.slater_delta:.3f}")
    print(f"   optimal policy\n{lp.policy_probs()}")
