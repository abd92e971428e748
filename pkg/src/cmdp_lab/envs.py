"""Catalog of small unichain CMDPs with known structure.

Constraint thresholds are folded into the cost tables, so every instance uses
the canonical form ``J_c >= 0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import GenerationFailed, Infeasible, MultipleRecurrentClasses, UnknownEnvironment
from .model import CmdpModel, SoftmaxPolicy, validate_unichain

MAX_ATTEMPTS = 1000


def two_ring() -> CmdpModel:
    """Deterministic 2-cycle with one action: periodic, no transient states."""
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = P[1, 0, 0] = 1.0
    return CmdpModel(P, [[0.0], [1.0]], [[1.0], [0.0]], [1.0, 0.0], name="TwoRing")


def transient_funnel(p: float = 0.5) -> CmdpModel:
    """State 0 leaks into the absorbing state 1 with probability p per step."""
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    P = np.zeros((2, 2, 2))
    P[0, :, 0] = 1 - p
    P[0, :, 1] = p
    P[1, :, 1] = 1.0
    reward = [[0.0, 0.0], [1.0, 1.0]]
    cost = [[0.5, -0.5], [0.5, -0.5]]
    return CmdpModel(P, reward, cost, [1.0, 0.0], name="TransientFunnel")


def constrained_self_loop() -> CmdpModel:
    """One state, two actions; the reward-maximizing action breaks the constraint."""
    P = np.ones((1, 2, 1))
    return CmdpModel(P, [[1.0, 0.0]], [[-1.0, 1.0]], [1.0], name="ConstrainedSelfLoop")


def periodic_ring(k: int = 3) -> CmdpModel:
    """Deterministic k-cycle; actions only change reward and cost."""
    if k < 1:
        raise ValueError("k must be positive")
    P = np.zeros((k, 2, k))
    for s in range(k):
        P[s, :, (s + 1) % k] = 1.0
    reward = np.tile([1.0, 0.3], (k, 1))
    cost = np.tile([-0.6, 0.8], (k, 1))
    rho = np.zeros(k)
    rho[0] = 1.0
    return CmdpModel(P, reward, cost, rho, name="PeriodicRingK")


def funnel_ring(p: float = 0.5, k: int = 3, n_transient: int = 1) -> CmdpModel:
    """A transient chain that advances with probability p, feeding a k-cycle.

    On the ring, action 0 pays reward 1 at cost -0.5 and action 1 pays 0.2 at
    cost +1, so the constrained optimum plays action 0 with probability 2/3
    (gain 11/15) while the uniform policy is feasible but suboptimal.
    """
    if not 0 < p <= 1 or k < 1 or n_transient < 1:
        raise ValueError("need 0 < p <= 1, k >= 1 and n_transient >= 1")
    n = n_transient + k
    P = np.zeros((n, 2, n))
    for s in range(n_transient):
        P[s, :, s] = 1 - p
        P[s, :, s + 1] = p
    for i in range(k):
        s = n_transient + i
        P[s, :, n_transient + (i + 1) % k] = 1.0
    reward = np.zeros((n, 2))
    cost = np.zeros((n, 2))
    reward[n_transient:] = [1.0, 0.2]
    cost[n_transient:] = [-0.5, 1.0]
    rho = np.zeros(n)
    rho[0] = 1.0
    return CmdpModel(P, reward, cost, rho, name="FunnelRing")


def random_unichain(n_states: int = 6, n_actions: int = 2, n_transient: int = 2,
                    seed: int = 0) -> CmdpModel:
    """Sparse random CMDP with a prescribed transient prefix.

    Each row gets 2-3 successors.  Recurrent rows only point inside the
    recurrent block; draws are rejected until the support graph has exactly
    the intended recurrent class and the cost constraint is strictly feasible.
    """
    from .oracle import solve_cmdp_lp

    if not 0 <= n_transient < n_states:
        raise ValueError("need 0 <= n_transient < n_states")
    rng = np.random.default_rng(seed)
    recurrent = np.arange(n_transient, n_states)
    rho = np.full(n_states, 1.0 / n_states)
    for _ in range(MAX_ATTEMPTS):
        P = np.zeros((n_states, n_actions, n_states))
        for s in range(n_states):
            pool = recurrent if s >= n_transient else np.arange(n_states)
            for a in range(n_actions):
                k = min(int(rng.integers(2, 4)), pool.size)
                succ = rng.choice(pool, size=k, replace=False)
                P[s, a, succ] = rng.dirichlet(np.ones(k))
        reward = rng.uniform(0.0, 1.0, (n_states, n_actions))
        cost = rng.uniform(-1.0, 1.0, (n_states, n_actions))
        model = CmdpModel(P, reward, cost, rho, name="RandomUnichain")
        try:
            structure = validate_unichain(model)
        except MultipleRecurrentClasses:
            continue
        if structure.recurrent != frozenset(int(s) for s in recurrent):
            continue
        try:
            lp = solve_cmdp_lp(model)
        except Infeasible:
            continue
        if lp.slater_delta > 1e-3:
            return model
    raise GenerationFailed(f"no valid instance after {MAX_ATTEMPTS} attempts (seed={seed})")


@dataclass(frozen=True)
class EnvSpec:
    name: str
    builder: Callable[..., CmdpModel]
    params: dict = field(default_factory=dict)
    notes: str = ""

    def build(self, **overrides) -> CmdpModel:
        return self.builder(**{**self.params, **overrides})

    def ground_truth(self) -> dict:
        """Constrained optimum and unichain constants under the uniform policy."""
        from .oracle import hitting_constants, solve_cmdp_lp

        model = self.build()
        lp = solve_cmdp_lp(model)
        consts = hitting_constants(model, SoftmaxPolicy.uniform(model))
        return {"j_r_star": lp.j_r, "j_c_star": lp.j_c, "slater_delta": lp.slater_delta,
                "c_hit": consts.c_hit, "c_tar": consts.c_tar}

    def summary(self) -> dict:
        return {"name": self.name, "params": dict(self.params), "notes": self.notes}


_CATALOG = (
    EnvSpec("TwoRing", two_ring, {}, "periodic recurrent class, no transient states"),
    EnvSpec("TransientFunnel", transient_funnel, {"p": 0.5},
            "transient state with geometric exit; C_hit = 1/p"),
    EnvSpec("ConstrainedSelfLoop", constrained_self_loop, {},
            "single state, active constraint, J_r* = 0.5"),
    EnvSpec("PeriodicRingK", periodic_ring, {"k": 3}, "k-cycle, exercises periodicity"),
    EnvSpec("FunnelRing", funnel_ring, {"p": 0.5, "k": 3, "n_transient": 1},
            "transient prefix feeding a k-cycle: C_hit > 0 and periodic"),
    EnvSpec("RandomUnichain", random_unichain,
            {"n_states": 6, "n_actions": 2, "n_transient": 2, "seed": 7},
            "seeded sparse random instance with transient states"),
)
_BY_NAME = {spec.name: spec for spec in _CATALOG}


def catalog() -> list:
    return list(_CATALOG)


def get_spec(name: str) -> EnvSpec:
    try:
        return _BY_NAME[name]
    except KeyError:
        raise UnknownEnvironment(f"unknown environment {name!r}; known: {sorted(_BY_NAME)}") from None


def build(name: str, **params) -> CmdpModel:
    return get_spec(name).build(**params)
