"""Per-step and per-epoch records of a run, with regret and violation accounting."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

STEP_COLUMNS = ("t", "state", "action", "reward", "cost")
EPOCH_COLUMNS = ("k", "j_r", "j_c", "lambda", "burn_in_hit", "samples_used")


def _empty(dtype):
    return np.zeros(0, dtype=dtype)


@dataclass
class RegretTrace:
    states: np.ndarray = field(default_factory=lambda: _empty(np.int64))
    actions: np.ndarray = field(default_factory=lambda: _empty(np.int64))
    rewards: np.ndarray = field(default_factory=lambda: _empty(float))
    costs: np.ndarray = field(default_factory=lambda: _empty(float))
    epoch_j_r: np.ndarray = field(default_factory=lambda: _empty(float))
    epoch_j_c: np.ndarray = field(default_factory=lambda: _empty(float))
    epoch_lambda: np.ndarray = field(default_factory=lambda: _empty(float))
    epoch_burn_in_hit: np.ndarray = field(default_factory=lambda: _empty(bool))
    epoch_samples: np.ndarray = field(default_factory=lambda: _empty(np.int64))
    j_r_star: float = float("nan")
    epoch_reward_sum: np.ndarray = field(default_factory=lambda: _empty(float))
    epoch_cost_sum: np.ndarray = field(default_factory=lambda: _empty(float))

    @property
    def total_steps(self) -> int:
        """Sample count, known even when per-step rows were not kept."""
        return int(self.epoch_samples.sum()) if self.epoch_samples.size else int(self.rewards.size)

    @property
    def steps_recorded(self) -> bool:
        return self.rewards.size == self.total_steps

    @property
    def n_epochs(self) -> int:
        return int(self.epoch_j_r.size)

    def regret(self) -> float:
        """``sum_t (J_r* - r_t)`` over every recorded step."""
        return float(self.total_steps * self.j_r_star - self._reward_total())

    def _reward_total(self) -> float:
        if self.epoch_reward_sum.size:
            return float(self.epoch_reward_sum.sum())
        return float(self.rewards.sum())

    def cumulative_regret(self) -> np.ndarray:
        """Per-step running regret; needs recorded steps."""
        return np.cumsum(self.j_r_star - self.rewards)

    def epoch_regret(self) -> np.ndarray:
        """Running regret at the end of each epoch."""
        return np.cumsum(self.epoch_samples * self.j_r_star - self.epoch_reward_sum)

    def oracle_regret(self) -> float:
        """Regret with each step's reward replaced by its epoch's exact gain."""
        return float(np.sum(self.epoch_samples * (self.j_r_star - self.epoch_j_r)))

    def violation_signed(self) -> float:
        return float(np.sum(-self.epoch_j_c))

    def violation_clipped(self) -> float:
        return float(np.sum(np.maximum(0.0, -self.epoch_j_c)))

    def empirical_violation(self) -> float:
        """Clipped violation of the realized costs, ``max(0, -sum_t c_t)``."""
        total = self.epoch_cost_sum.sum() if self.epoch_cost_sum.size else self.costs.sum()
        return float(max(0.0, -total))

    def burn_in_failures(self) -> int:
        return int(np.sum(~self.epoch_burn_in_hit))

    def step_rows(self):
        if not self.steps_recorded:
            raise ValueError("per-step rows were not recorded for this run")
        return zip(range(self.total_steps), self.states.tolist(), self.actions.tolist(),
                   self.rewards.tolist(), self.costs.tolist())

    def epoch_rows(self):
        return zip(range(self.n_epochs), self.epoch_j_r.tolist(), self.epoch_j_c.tolist(),
                   self.epoch_lambda.tolist(), [int(b) for b in self.epoch_burn_in_hit],
                   self.epoch_samples.tolist())

    def summary(self) -> dict:
        return {
            "T": self.total_steps,
            "K": self.n_epochs,
            "j_r_star": self.j_r_star,
            "final_j_r": float(self.epoch_j_r[-1]) if self.n_epochs else None,
            "final_j_c": float(self.epoch_j_c[-1]) if self.n_epochs else None,
            "regret": self.regret() if self.total_steps else 0.0,
            "oracle_regret": self.oracle_regret(),
            "violation_signed": self.violation_signed(),
            "violation_clipped": self.violation_clipped(),
            "empirical_violation": self.empirical_violation(),
            "burn_in_failures": self.burn_in_failures(),
        }
