"""Tabular CMDPs, softmax policies and critic feature maps.

All containers are frozen dataclasses holding read-only numpy arrays, so they
can be shared freely between threads.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ConfigurationError, MultipleRecurrentClasses

ROW_TOL = 1e-12
SIGNALS = ("r", "c")


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class CmdpModel:
    """The tuple (S, A, r, c, P, rho) of a finite constrained MDP.

    ``transition[s, a, s']`` is the probability of moving to ``s'``; rewards
    live in [0, 1] and costs in [-1, 1].  The constraint is ``J_c >= 0``.
    """

    transition: np.ndarray
    reward: np.ndarray
    cost: np.ndarray
    initial_dist: np.ndarray
    name: str = ""

    def __post_init__(self):
        P = _frozen(self.transition)
        r = _frozen(self.reward)
        c = _frozen(self.cost)
        rho = _frozen(self.initial_dist)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ConfigurationError(f"transition must have shape (S, A, S), got {P.shape}")
        S, A = P.shape[:2]
        if S < 1 or A < 1:
            raise ConfigurationError("need at least one state and one action")
        if r.shape != (S, A) or c.shape != (S, A):
            raise ConfigurationError(
                f"reward/cost must have shape {(S, A)}, got {r.shape} and {c.shape}")
        if rho.shape != (S,):
            raise ConfigurationError(f"initial_dist must have shape {(S,)}, got {rho.shape}")
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(r)) and np.all(np.isfinite(c))):
            raise ConfigurationError("model contains non-finite entries")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=2) - 1.0) > ROW_TOL):
            raise ConfigurationError("every transition row must be a probability vector")
        if np.any(r < 0) or np.any(r > 1):
            raise ConfigurationError("rewards must lie in [0, 1]")
        if np.any(c < -1) or np.any(c > 1):
            raise ConfigurationError("costs must lie in [-1, 1]")
        if np.any(rho < 0) or abs(rho.sum() - 1.0) > ROW_TOL:
            raise ConfigurationError("initial_dist must be a probability vector")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "cost", c)
        object.__setattr__(self, "initial_dist", rho)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def signal(self, g: str) -> np.ndarray:
        """Return the reward table for ``g='r'`` or the cost table for ``g='c'``."""
        if g == "r":
            return self.reward
        if g == "c":
            return self.cost
        raise ConfigurationError(f"signal must be 'r' or 'c', got {g!r}")

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "cost": self.cost.tolist(),
            "initial_dist": self.initial_dist.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict, name: str = "") -> "CmdpModel":
        required = {"n_states", "n_actions", "transition", "reward", "cost", "initial_dist"}
        missing = required - set(data)
        if missing:
            raise ConfigurationError(f"model document is missing fields {sorted(missing)}")
        model = cls(np.asarray(data["transition"], dtype=float),
                    np.asarray(data["reward"], dtype=float),
                    np.asarray(data["cost"], dtype=float),
                    np.asarray(data["initial_dist"], dtype=float),
                    name=data.get("name", name))
        if (model.n_states, model.n_actions) != (data["n_states"], data["n_actions"]):
            raise ConfigurationError("n_states/n_actions disagree with the array shapes")
        return model


def load_model(path: Union[str, Path]) -> CmdpModel:
    path = Path(path)
    with open(path) as fh:
        data = json.load(fh)
    return CmdpModel.from_dict(data, name=data.get("name", path.stem))


def save_model(model: CmdpModel, path: Union[str, Path]) -> None:
    doc = model.to_dict()
    if model.name:
        doc["name"] = model.name
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def _tabular_features(n_states: int, n_actions: int) -> np.ndarray:
    return np.eye(n_states * n_actions).reshape(n_states, n_actions, n_states * n_actions)


@dataclass(frozen=True)
class SoftmaxPolicy:
    """Softmax policy ``pi(a|s) ∝ exp(theta . psi(s, a) / temperature)``.

    With ``features=None`` the policy is tabular: ``theta`` has one logit per
    state-action pair, laid out row-major as ``theta[s * n_actions + a]``.
    Passing a feature tensor of shape (S, A, d) gives the linear-score variant.
    Probabilities stay strictly positive as long as logit gaps (after dividing
    by the temperature) stay below about 700, the range of ``exp`` in doubles.
    """

    theta: np.ndarray
    n_states: int
    n_actions: int
    temperature: float = 1.0
    features: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        theta = _frozen(self.theta).ravel()
        theta.setflags(write=False)
        if self.temperature <= 0:
            raise ConfigurationError("temperature must be positive")
        if self.features is None:
            expected = self.n_states * self.n_actions
        else:
            feats = _frozen(self.features)
            if feats.ndim != 3 or feats.shape[:2] != (self.n_states, self.n_actions):
                raise ConfigurationError(
                    f"policy features must have shape ({self.n_states}, {self.n_actions}, d)")
            object.__setattr__(self, "features", feats)
            expected = feats.shape[2]
        if theta.shape != (expected,):
            raise ConfigurationError(f"theta must have {expected} entries, got {theta.size}")
        if not np.all(np.isfinite(theta)):
            raise ConfigurationError("theta contains non-finite entries")
        object.__setattr__(self, "theta", theta)

    @classmethod
    def uniform(cls, model: CmdpModel, temperature: float = 1.0) -> "SoftmaxPolicy":
        return cls(np.zeros(model.n_states * model.n_actions), model.n_states,
                   model.n_actions, temperature)

    @classmethod
    def for_model(cls, model: CmdpModel, theta, temperature: float = 1.0,
                  features=None) -> "SoftmaxPolicy":
        return cls(np.asarray(theta, dtype=float), model.n_states, model.n_actions,
                   temperature, features)

    @property
    def dim(self) -> int:
        return self.theta.size

    def with_theta(self, theta) -> "SoftmaxPolicy":
        return SoftmaxPolicy(theta, self.n_states, self.n_actions, self.temperature,
                             self.features)

    def feature_tensor(self) -> np.ndarray:
        if self.features is None:
            return _tabular_features(self.n_states, self.n_actions)
        return self.features

    def logits(self) -> np.ndarray:
        if self.features is None:
            z = self.theta.reshape(self.n_states, self.n_actions)
        else:
            z = self.features @ self.theta
        return z / self.temperature

    def probs(self) -> np.ndarray:
        """Return the (S, A) table of action probabilities."""
        z = self.logits()
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def score_table(self) -> np.ndarray:
        """Return grad_theta log pi(a|s) for every pair, shape (S, A, d)."""
        feats = self.feature_tensor()
        pi = self.probs()
        mean = np.einsum("sa,sad->sd", pi, feats)
        return (feats - mean[:, None, :]) / self.temperature


def action_distribution(policy: SoftmaxPolicy, s: int) -> np.ndarray:
    return policy.probs()[s]


def score(policy: SoftmaxPolicy, s: int, a: int) -> np.ndarray:
    """grad_theta log pi_theta(a|s) as a flat vector of length ``policy.dim``."""
    feats = policy.feature_tensor()[s]
    pi = action_distribution(policy, s)
    return (feats[a] - pi @ feats) / policy.temperature


def _check_compatible(model: CmdpModel, policy: SoftmaxPolicy) -> None:
    if (policy.n_states, policy.n_actions) != (model.n_states, model.n_actions):
        raise ConfigurationError(
            f"policy is for {policy.n_states}x{policy.n_actions}, model is "
            f"{model.n_states}x{model.n_actions}")


def induced_kernel(model: CmdpModel, policy: SoftmaxPolicy) -> np.ndarray:
    """State-to-state kernel ``P_pi[s, s'] = sum_a pi(a|s) P(s'|s, a)``."""
    _check_compatible(model, policy)
    return np.einsum("sa,sat->st", policy.probs(), model.transition)


@dataclass(frozen=True)
class FeatureMap:
    """Critic features: row ``phi[s]`` is the feature vector of state ``s``."""

    phi: np.ndarray
    target: str = "r"

    def __post_init__(self):
        phi = _frozen(self.phi)
        if phi.ndim != 2:
            raise ConfigurationError("phi must be a (n_states, m) array")
        if np.any(np.linalg.norm(phi, axis=1) > 1 + 1e-12):
            raise ConfigurationError("feature vectors must have norm at most 1")
        if self.target not in SIGNALS:
            raise ConfigurationError(f"target must be 'r' or 'c', got {self.target!r}")
        object.__setattr__(self, "phi", phi)

    @classmethod
    def one_hot(cls, n_states: int, target: str = "r") -> "FeatureMap":
        return cls(np.eye(n_states), target)

    @property
    def dimension(self) -> int:
        return self.phi.shape[1]

    def __call__(self, s: int) -> np.ndarray:
        return self.phi[s]


@dataclass(frozen=True)
class UnichainStructure:
    recurrent: frozenset
    transient: frozenset

    @property
    def recurrent_list(self) -> list:
        return sorted(self.recurrent)

    @property
    def transient_list(self) -> list:
        return sorted(self.transient)


def support_graph(model: CmdpModel) -> np.ndarray:
    """Adjacency of the union support graph: s -> s' iff some action reaches s'."""
    return np.any(model.transition > 0, axis=1)


def validate_unichain(model: CmdpModel) -> UnichainStructure:
    """Find the single closed communicating class of the support graph.

    Every softmax policy has full support, so the union graph is the support
    of ``P_pi`` for all of them and the answer does not depend on ``theta``.
    """
    adj = support_graph(model)
    n_comp, labels = connected_components(csr_matrix(adj), directed=True,
                                          connection="strong")
    closed = []
    for comp in range(n_comp):
        members = np.flatnonzero(labels == comp)
        outside = np.ones(model.n_states, dtype=bool)
        outside[members] = False
        if not adj[np.ix_(members, outside)].any():
            closed.append(members)
    if len(closed) != 1:
        raise MultipleRecurrentClasses(closed)
    recurrent = frozenset(int(s) for s in closed[0])
    transient = frozenset(range(model.n_states)) - recurrent
    return UnichainStructure(recurrent, transient)
