"""A small horizon sweep with exponent fits, written to demos/out/sweep.

Uses the same harness as ``cmdp-lab sweep``; the full-size version of this
experiment is part of the acceptance suite.
"""
import logging
from pathlib import Path

from cmdp_lab.errors import DegenerateFit
from cmdp_lab.harness import RunConfig, sweep

logging.basicConfig(level=logging.INFO, format="%(message)s")
out = Path(__file__).parent / "out" / "sweep"
config = RunConfig(env="FunnelRing", algo={"total_steps": 2 ** 10}, n_seeds=4, seed=1)
table = sweep(config, [2 ** j for j in range(10, 15)], out)
for row in table.rows:
    print(f"T={row['T']:6d}  regret={row['regret']:8.2f}  "
          f"violation={row['violation_clipped']:7.2f}  J_r(final)={row['final_j_r']:.3f}")
for column in ("regret", "violation_clipped"):
    try:
        fit = table.fit(column)
        print(f"{column}: exponent {fit.slope:.2f} [{fit.ci_low:.2f}, {fit.ci_high:.2f}]")
    except DegenerateFit as exc:
        print(f"{column}: no fit ({exc})")
print(f"csv and fits written to {out}")
