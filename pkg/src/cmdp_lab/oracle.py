"""Exact ground truth for tabular unichain CMDPs.

Everything here is a dense linear-algebra computation on the known model:
stationary distributions, gains and bias functions, hitting-time constants,
policy gradients, Fisher matrices, natural gradients, critic fixed points and
the constrained optimum.  These are the references the stochastic estimators
are tested against.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import gcd
from typing import Optional

import numpy as np

from .errors import ConfigurationError, Infeasible, SingularSystemError
from .lp import simplex
from .model import (CmdpModel, FeatureMap, SoftmaxPolicy, UnichainStructure, induced_kernel,
                    validate_unichain)

RANK_TOL = 1e-8
ZERO_TOL = 1e-12   # below this the whole matrix is treated as roundoff


@dataclass(frozen=True)
class StationarySolution:
    dist: np.ndarray
    recurrent_support: frozenset


@dataclass(frozen=True)
class PoissonSolution:
    gain: float
    v: np.ndarray
    q: np.ndarray
    adv: np.ndarray
    dist: np.ndarray


@dataclass(frozen=True)
class UnichainConstants:
    c_hit: float
    c_tar: float
    c_tar_per_state: dict
    hit_times: np.ndarray  # expected steps to enter the recurrent class, per state

    @property
    def c_total(self) -> float:
        return self.c_hit + self.c_tar


def _solve(a, b, what):
    try:
        x = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"{what}: {exc}") from exc
    if not np.all(np.isfinite(x)) or np.linalg.cond(a) > 1e13:
        raise SingularSystemError(f"{what}: system is numerically singular")
    return x


def _recurrent(model, recurrent):
    if recurrent is None:
        return validate_unichain(model).recurrent
    if isinstance(recurrent, UnichainStructure):
        return recurrent.recurrent
    return frozenset(recurrent)


def stationary_distribution(kernel: np.ndarray, recurrent) -> StationarySolution:
    """Solve ``d^T P = d^T, sum(d) = 1`` on the recurrent class, zero elsewhere.

    Uses a direct solve rather than power iteration, so periodic classes are
    handled exactly (the result is the Cesàro limit).
    """
    kernel = np.asarray(kernel, dtype=float)
    rec = sorted(recurrent)
    sub = kernel[np.ix_(rec, rec)]
    if np.any(np.abs(sub.sum(axis=1) - 1.0) > 1e-10):
        raise SingularSystemError("recurrent set is not closed under the kernel")
    k = len(rec)
    system = sub.T - np.eye(k)
    system[-1, :] = 1.0
    rhs = np.zeros(k)
    rhs[-1] = 1.0
    d_rec = _solve(system, rhs, "stationary distribution")
    d_rec[np.abs(d_rec) < 1e-15] = 0.0
    if np.any(d_rec < -1e-10):
        raise SingularSystemError("stationary solve produced negative mass; not unichain")
    dist = np.zeros(kernel.shape[0])
    dist[rec] = np.clip(d_rec, 0.0, None)
    dist /= dist.sum()
    return StationarySolution(dist, frozenset(rec))


def stationary(model: CmdpModel, policy: SoftmaxPolicy, recurrent=None) -> StationarySolution:
    return stationary_distribution(induced_kernel(model, policy), _recurrent(model, recurrent))


def occupancy(model: CmdpModel, policy: SoftmaxPolicy, recurrent=None) -> np.ndarray:
    """State-action occupancy ``nu(s, a) = d(s) pi(a|s)``."""
    return stationary(model, policy, recurrent).dist[:, None] * policy.probs()


def average_objective(model: CmdpModel, policy: SoftmaxPolicy, g="r", recurrent=None) -> float:
    """Long-run average of a signal; ``g`` is 'r', 'c' or an (S, A) table."""
    table = model.signal(g) if isinstance(g, str) else np.asarray(g, dtype=float)
    return float(np.sum(occupancy(model, policy, recurrent) * table))


def solve_poisson(model: CmdpModel, policy: SoftmaxPolicy, g="r", recurrent=None) -> PoissonSolution:
    """Gain and normalized bias function of a signal.

    Solves ``(I - P_pi) V + J 1 = g_pi`` together with ``d.V = 0`` as one
    augmented square system, then fills Q and the advantage from the Bellman
    equation.
    """
    table = model.signal(g) if isinstance(g, str) else np.asarray(g, dtype=float)
    pi = policy.probs()
    kernel = induced_kernel(model, policy)
    d = stationary_distribution(kernel, _recurrent(model, recurrent)).dist
    n = model.n_states
    system = np.zeros((n + 1, n + 1))
    system[:n, :n] = np.eye(n) - kernel
    system[:n, n] = 1.0
    system[n, :n] = d
    rhs = np.append(np.sum(pi * table, axis=1), 0.0)
    sol = _solve(system, rhs, "Poisson equation")
    v, gain = sol[:n], float(sol[n])
    q = table - gain + model.transition @ v
    return PoissonSolution(gain, v, q, q - v[:, None], d)


def hitting_constants(model: CmdpModel, policy: SoftmaxPolicy, recurrent=None) -> UnichainConstants:
    """C_hit (worst expected entry time into the recurrent class) and C_tar.

    ``C_tar`` depends on a reference recurrent state that is left unspecified
    in the definition; the maximum over all recurrent states is returned and
    the per-state values are kept in ``c_tar_per_state``.
    """
    kernel = induced_kernel(model, policy)
    rec_set = _recurrent(model, recurrent)
    rec = sorted(rec_set)
    trans = [s for s in range(model.n_states) if s not in rec_set]
    hit = np.zeros(model.n_states)
    if trans:
        sub = kernel[np.ix_(trans, trans)]
        hit[trans] = _solve(np.eye(len(trans)) - sub, np.ones(len(trans)), "hitting time")
    d = stationary_distribution(kernel, rec_set).dist
    mfpt = mean_first_passage(kernel[np.ix_(rec, rec)])
    per_state = {}
    for i, s in enumerate(rec):
        per_state[s] = float(np.sum(d[rec] * mfpt[i]))
    c_hit = float(hit.max()) if trans else 0.0
    return UnichainConstants(c_hit, max(per_state.values()), per_state, hit)


def mean_first_passage(kernel: np.ndarray) -> np.ndarray:
    """``m[i, j] = E_i[inf{t >= 0: s_t = j}]`` for an irreducible kernel."""
    n = kernel.shape[0]
    m = np.zeros((n, n))
    for j in range(n):
        others = [i for i in range(n) if i != j]
        if not others:
            continue
        sub = kernel[np.ix_(others, others)]
        m[others, j] = _solve(np.eye(n - 1) - sub, np.ones(n - 1), "first passage")
    return m


def period(kernel: np.ndarray, recurrent) -> int:
    """Period of the recurrent class: gcd of level differences along edges."""
    rec = sorted(recurrent)
    root = rec[0]
    level = {root: 0}
    frontier = [root]
    while frontier:
        nxt = []
        for u in frontier:
            for v in np.flatnonzero(kernel[u] > 0):
                v = int(v)
                if v not in level:
                    level[v] = level[u] + 1
                    nxt.append(v)
        frontier = nxt
    p = 0
    for u in rec:
        for v in np.flatnonzero(kernel[u] > 0):
            p = gcd(p, abs(level[u] + 1 - level[int(v)]))
    return p


def policy_gradient_exact(model: CmdpModel, policy: SoftmaxPolicy, g="r", recurrent=None) -> np.ndarray:
    """``sum_{s,a} d(s) pi(a|s) A(s,a) grad log pi(a|s)``."""
    sol = solve_poisson(model, policy, g, recurrent)
    nu = sol.dist[:, None] * policy.probs()
    return np.einsum("sa,sa,sad->d", nu, sol.adv, policy.score_table())


@dataclass(frozen=True)
class FisherInfo:
    matrix: np.ndarray

    def solve(self, v, eps_reg: float) -> np.ndarray:
        """Return ``(F + eps_reg I)^{-1} v``."""
        f = self.matrix + eps_reg * np.eye(self.matrix.shape[0])
        return np.linalg.solve(f, v)

    def pinv_solve(self, v) -> np.ndarray:
        return np.linalg.pinv(self.matrix, rcond=RANK_TOL, hermitian=True) @ v

    def min_eigenvalue(self, eps_reg: float = 0.0) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0] + eps_reg)

    def min_nonzero_eigenvalue(self) -> float:
        w = np.linalg.eigvalsh(self.matrix)
        top = w[-1]
        if top <= 0:
            return 0.0
        nz = w[w > RANK_TOL * top]
        return float(nz[0])


def fisher_exact(model: CmdpModel, policy: SoftmaxPolicy, recurrent=None) -> FisherInfo:
    nu = occupancy(model, policy, recurrent)
    psi = policy.score_table()
    return FisherInfo(np.einsum("sa,sad,sae->de", nu, psi, psi))


def npg_exact(model: CmdpModel, policy: SoftmaxPolicy, g="r", eps_reg: float = 1e-3,
              recurrent=None) -> np.ndarray:
    """Regularized natural gradient ``(F + eps_reg I)^{-1} grad J_g``."""
    if eps_reg <= 0:
        raise ConfigurationError("eps_reg must be positive; use npg_min_norm for eps=0")
    grad = policy_gradient_exact(model, policy, g, recurrent)
    return fisher_exact(model, policy, recurrent).solve(grad, eps_reg)


def npg_min_norm(model: CmdpModel, policy: SoftmaxPolicy, g="r", recurrent=None) -> np.ndarray:
    """Unregularized minimum-norm natural gradient ``F^+ grad J_g``."""
    grad = policy_gradient_exact(model, policy, g, recurrent)
    return fisher_exact(model, policy, recurrent).pinv_solve(grad)


def npg_objective(model: CmdpModel, policy: SoftmaxPolicy, omega, g="r", eps_reg: float = 0.0,
                  recurrent=None) -> float:
    """``0.5 w.(F + eps I).w - w.grad J_g``; its minimizers are the natural gradients."""
    omega = np.asarray(omega, dtype=float)
    f = fisher_exact(model, policy, recurrent).matrix
    grad = policy_gradient_exact(model, policy, g, recurrent)
    return float(0.5 * omega @ f @ omega + 0.5 * eps_reg * omega @ omega - omega @ grad)


@dataclass(frozen=True)
class CriticFeatureMatrix:
    m_matrix: np.ndarray          # E[phi(s) (phi(s) - phi(s'))^T]
    mean_phi: np.ndarray          # E[phi(s)]
    kernel_basis: np.ndarray      # (m, k) orthonormal basis of ker(M)
    lambda_subspace: float        # min x.M.x over unit x orthogonal to ker(M)

    def kernel_projector(self) -> np.ndarray:
        """Projector onto ker(M)^perp in zeta space."""
        m = self.m_matrix.shape[0]
        return np.eye(m) - self.kernel_basis @ self.kernel_basis.T


def critic_feature_matrix(model: CmdpModel, policy: SoftmaxPolicy, features: FeatureMap,
                          recurrent=None) -> CriticFeatureMatrix:
    if features.phi.shape[0] != model.n_states:
        raise ConfigurationError("feature map has the wrong number of states")
    kernel = induced_kernel(model, policy)
    d = stationary_distribution(kernel, _recurrent(model, recurrent)).dist
    phi = features.phi
    next_phi = kernel @ phi
    m_mat = np.einsum("s,si,sj->ij", d, phi, phi - next_phi)
    mean_phi = d @ phi
    _, sv, vt = np.linalg.svd(m_mat)
    top = sv[0] if sv.size else 0.0
    rank = int(np.sum(sv > RANK_TOL * top)) if top > ZERO_TOL else 0
    kernel_basis = vt[rank:].T.copy()
    if rank == 0:
        lam = float("inf")
    else:
        comp = vt[:rank].T
        sym = 0.5 * (m_mat + m_mat.T)
        lam = float(np.linalg.eigvalsh(comp.T @ sym @ comp)[0])
    return CriticFeatureMatrix(m_mat, mean_phi, kernel_basis, lam)


@dataclass(frozen=True)
class CriticGroundTruth:
    a_matrix: np.ndarray
    b_vector: np.ndarray
    xi_star: np.ndarray
    kernel_basis: np.ndarray      # basis of ker(M) in zeta coordinates
    lambda_subspace: float
    c_gamma: float
    feature_matrix: CriticFeatureMatrix

    def projector(self) -> np.ndarray:
        """Projection of xi = (eta, zeta) onto ker(A)^perp = R x ker(M)^perp."""
        m = self.kernel_basis.shape[0]
        proj = np.eye(m + 1)
        proj[1:, 1:] = self.feature_matrix.kernel_projector()
        return proj

    def kernel_vectors(self) -> np.ndarray:
        """Basis of ker(A) embedded in xi space, shape (1 + m, k)."""
        k = self.kernel_basis.shape[1]
        return np.vstack([np.zeros((1, k)), self.kernel_basis])

    def projected_error(self, xi) -> float:
        diff = self.projector() @ (np.asarray(xi, dtype=float) - self.xi_star)
        return float(diff @ diff)


def critic_sample_matrices(features: FeatureMap, c_gamma: float, s: int, s_next: int):
    """Per-transition critic matrix A(z) (without the signal-dependent b)."""
    phi_s, phi_n = features.phi[s], features.phi[s_next]
    m = phi_s.size
    a = np.zeros((m + 1, m + 1))
    a[0, 0] = c_gamma
    a[1:, 0] = phi_s
    a[1:, 1:] = np.outer(phi_s, phi_s - phi_n)
    return a


def critic_ground_truth(model: CmdpModel, policy: SoftmaxPolicy, features: FeatureMap,
                        c_gamma: float, g="r", recurrent=None) -> CriticGroundTruth:
    """Stationary expectations of the per-transition critic terms and their fixed point."""
    table = model.signal(g) if isinstance(g, str) else np.asarray(g, dtype=float)
    fm = critic_feature_matrix(model, policy, features, recurrent)
    nu = occupancy(model, policy, recurrent)
    gain = float(np.sum(nu * table))
    m = features.dimension
    a = np.zeros((m + 1, m + 1))
    a[0, 0] = c_gamma
    a[1:, 0] = fm.mean_phi
    a[1:, 1:] = fm.m_matrix
    b = np.empty(m + 1)
    b[0] = c_gamma * gain
    b[1:] = np.sum(nu * table, axis=1) @ features.phi
    # drop sub-threshold components so pinv sees exactly the decided kernel
    a_clean = a.copy()
    a_clean[1:, 1:] = fm.m_matrix @ fm.kernel_projector()
    xi_star = np.linalg.pinv(a_clean, rcond=RANK_TOL) @ b
    return CriticGroundTruth(a, b, xi_star, fm.kernel_basis, fm.lambda_subspace, c_gamma, fm)


def c_gamma_from_lambda(lam: float, lo: float = 1.0, hi: Optional[float] = 10.0,
                        fallback: float = 2.0) -> float:
    """Critic weight ``lam + sqrt(1/lam^2 - 1)`` clamped to [lo, hi].

    The radical is only real for ``lam <= 1``; above that (or for an empty
    kernel complement, ``lam = inf``) ``fallback`` is used.  ``hi=None`` leaves
    the upper end open, which is what the positive-definiteness bound needs
    when ``lam`` is small.
    """
    if not np.isfinite(lam) or lam > 1.0:
        return fallback
    if lam <= 0:
        if hi is None:
            raise ValueError("lambda must be positive for an unclamped critic weight")
        return hi
    value = max(lam + np.sqrt(1.0 / lam ** 2 - 1.0), lo)
    return float(value if hi is None else min(value, hi))


@dataclass(frozen=True)
class LpSolution:
    occupancy: np.ndarray   # (S, A)
    j_r: float
    j_c: float
    slater_delta: float

    def policy_probs(self) -> np.ndarray:
        """Policy read off the occupancy; uniform on states with no mass."""
        mass = self.occupancy.sum(axis=1, keepdims=True)
        n_a = self.occupancy.shape[1]
        with np.errstate(invalid="ignore", divide="ignore"):
            p = np.where(mass > 1e-12, self.occupancy / mass, 1.0 / n_a)
        return p


def _occupancy_constraints(model: CmdpModel):
    S, A = model.n_states, model.n_actions
    n = S * A
    flow = np.zeros((S, n))
    for s in range(S):
        for a in range(A):
            col = s * A + a
            flow[s, col] += 1.0
            flow[:, col] -= model.transition[s, a]
    return np.vstack([flow, np.ones((1, n))]), np.append(np.zeros(S), 1.0)


def solve_cmdp_lp(model: CmdpModel) -> LpSolution:
    """Optimal constrained gain via the occupancy-measure linear program.

    Maximizes ``sum nu r`` over stationary occupancies with ``sum nu c >= 0``.
    ``slater_delta`` is the largest achievable average cost.
    """
    S, A = model.n_states, model.n_actions
    n = S * A
    a_eq, b_eq = _occupancy_constraints(model)
    r = model.reward.ravel()
    c = model.cost.ravel()

    best_cost = simplex(-c, a_eq, b_eq)
    if best_cost.status != "optimal":
        raise Infeasible(f"occupancy polytope is empty ({best_cost.status})")
    slater = -best_cost.objective
    if slater < -1e-12:
        raise Infeasible(f"no occupancy satisfies the constraint (max J_c = {slater:.3g})")

    # add slack for the cost row: c.nu - slack = 0
    a_full = np.zeros((a_eq.shape[0] + 1, n + 1))
    a_full[:-1, :n] = a_eq
    a_full[-1, :n] = c
    a_full[-1, n] = -1.0
    b_full = np.append(b_eq, 0.0)
    res = simplex(np.append(-r, 0.0), a_full, b_full)
    if res.status != "optimal":
        raise Infeasible(f"constrained program failed ({res.status})")
    nu = np.clip(res.x[:n], 0.0, None).reshape(S, A)
    return LpSolution(nu, float(np.sum(nu * model.reward)), float(np.sum(nu * model.cost)),
                      float(slater))


def compat_error_exact(model: CmdpModel, policy: SoftmaxPolicy, lam: float, omega,
                       recurrent=None) -> float:
    """``0.5 E_nu[(A_r + lam A_c - omega.psi)^2]`` with exact advantages."""
    rec = _recurrent(model, recurrent)
    adv = solve_poisson(model, policy, "r", rec).adv + lam * solve_poisson(model, policy, "c", rec).adv
    nu = occupancy(model, policy, rec)
    fitted = policy.score_table() @ np.asarray(omega, dtype=float)
    return float(0.5 * np.sum(nu * (adv - fitted) ** 2))


def cesaro_tv(model: CmdpModel, policy: SoftmaxPolicy, s0: int, t: int, recurrent=None) -> float:
    """TV distance between ``(1/t) sum_{i=1..t} P_pi^i(s0, .)`` and ``d``."""
    if t < 1:
        raise ConfigurationError("t must be at least 1")
    kernel = induced_kernel(model, policy)
    d = stationary_distribution(kernel, _recurrent(model, recurrent)).dist
    row = np.zeros(model.n_states)
    row[s0] = 1.0
    acc = np.zeros_like(row)
    for _ in range(t):
        row = row @ kernel
        acc += row
    return float(0.5 * np.abs(acc / t - d).sum())


def cesaro_tv_curve(model: CmdpModel, policy: SoftmaxPolicy, s0: int, t_max: int,
                    recurrent=None) -> np.ndarray:
    """TV distances for t = 1..t_max in one pass."""
    kernel = induced_kernel(model, policy)
    d = stationary_distribution(kernel, _recurrent(model, recurrent)).dist
    row = np.zeros(model.n_states)
    row[s0] = 1.0
    acc = np.zeros_like(row)
    out = np.empty(t_max)
    for t in range(1, t_max + 1):
        row = row @ kernel
        acc += row
        out[t - 1] = 0.5 * np.abs(acc / t - d).sum()
    return out


def optimal_policy_from_lp(model: CmdpModel, lp: Optional[LpSolution] = None) -> np.ndarray:
    lp = lp or solve_cmdp_lp(model)
    return lp.policy_probs()
