"""One primal-dual natural actor-critic run on ConstrainedSelfLoop.

The unconstrained optimum always takes the costly action; the constraint
pushes the policy to a 50/50 mix.  The dual variable reacts to the sign of the
cost estimate, and with noisy estimates the policy wanders around the saddle
point rather than settling on it.
"""
from cmdp_lab import envs
from cmdp_lab.pdnac import default_config, run

model = envs.build("ConstrainedSelfLoop")
config = default_config(model, 2 ** 15, seed=3)
print(f"K={config.epochs} epochs, H={config.inner_iters}, B={config.burn_in}, "
      f"alpha={config.alpha:.3g}, beta={config.beta:.3g}")
result = run(model, None, None, config, record_steps=False)
trace = result.trace
for k in range(0, config.epochs, max(config.epochs // 12, 1)):
    print(f"epoch {k:3d}  lambda={trace.epoch_lambda[k]:.3f}  "
          f"J_r={trace.epoch_j_r[k]:.3f}  J_c={trace.epoch_j_c[k]:+.3f}")
print(f"realized T={trace.total_steps}, regret={trace.regret():.2f}, "
      f"clipped violation={trace.violation_clipped():.2f}")
