"""Exact average-reward MaxEnt solver for tabular MDPs.

Soft relative value iteration finds the entropy-regularized reward rate
``theta`` and bias ``V`` solving

    V[s] = alpha * logsumexp_a((r[s, a] - theta + sum_s' P[s, a, s'] V[s']) / alpha)

with ``V[anchor] = 0``.  The optimal policy is the softmax of the Q table.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, ConvergenceError
from .mdp_core import TabularMdp, linear_reward

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 100_000


@dataclass(frozen=True, eq=False)
class SoftSolution:
    theta: float
    bias: np.ndarray
    policy: np.ndarray
    alpha: float
    residual: float = 0.0
    iterations: int = 0

    def to_dict(self) -> dict:
        return {
            "theta": self.theta,
            "bias": self.bias.tolist(),
            "policy": self.policy.tolist(),
            "alpha": self.alpha,
            "residual": self.residual,
            "iterations": self.iterations,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "SoftSolution":
        return cls(
            theta=float(doc["theta"]),
            bias=np.asarray(doc["bias"], dtype=float),
            policy=np.asarray(doc["policy"], dtype=float),
            alpha=float(doc["alpha"]),
            residual=float(doc.get("residual", 0.0)),
            iterations=int(doc.get("iterations", 0)),
        )


@dataclass(frozen=True, eq=False)
class StationaryDist:
    """Stationary distribution over flattened state-action pairs ``s * n_actions + a``."""

    rho: np.ndarray
    residual: float = 0.0
    iterations: int = 0

    def by_state_action(self, n_actions: int) -> np.ndarray:
        return self.rho.reshape(-1, n_actions)


def _soft_backup(r, P, V, alpha):
    return alpha * logsumexp((r + P @ V) / alpha, axis=1)


def _soft_policy(r, P, V, theta, alpha):
    Q = r - theta + P @ V
    logits = Q / alpha
    return np.exp(logits - logsumexp(logits, axis=1, keepdims=True)), Q


def bellman_residual(mdp: TabularMdp, lam, solution: SoftSolution) -> float:
    """Sup-norm violation of the soft Bellman optimality system by ``solution``."""
    r = linear_reward(mdp, lam)
    V = solution.bias
    return float(
        np.max(np.abs(_soft_backup(r - solution.theta, mdp.transitions, V, solution.alpha) - V))
    )


def _is_deterministic(P) -> bool:
    return bool(np.all((P == 0.0) | (P == 1.0)))


def _squaring_warm_start(r, P, alpha, anchor, max_doublings=64):
    """Bias estimate from repeated squaring of the exponentiated backup matrix.

    With deterministic transitions ``exp(V / alpha)`` obeys a linear recursion
    ``z <- G z``, so soft RVI is normalized power iteration on the positive
    matrix ``G``.  Squaring ``G`` advances 2**k sweeps at once, which removes
    the slow drift between weakly coupled basins.  Returns None when the
    exponentiation under- or overflows.
    """
    G = np.einsum("sa,sat->st", np.exp((r - r.max()) / alpha), P)
    z = np.ones(len(G))
    V_prev = None
    for _ in range(max_doublings):
        z = G @ z
        z /= z.max()
        G = G @ G
        G /= G.max()
        if not np.all(np.isfinite(G)) or not np.all(z > 0):
            return None
        V = alpha * (np.log(z) - np.log(z[anchor]))
        if V_prev is not None and np.max(np.abs(V - V_prev)) < 1e-13 * (1 + np.max(np.abs(V))):
            return V
        V_prev = V
    return V_prev


def solve_soft_avg(
    mdp: TabularMdp,
    lam,
    alpha: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    anchor: int = 0,
    init_bias=None,
    accelerate: bool = True,
) -> SoftSolution:
    """Solve the average-reward MaxEnt control problem by soft relative value iteration.

    ``theta`` is read off each sweep as the anchor's backed-up value and the
    iteration stops once the span of successive bias updates drops below ``tol``.
    With ``accelerate`` and deterministic transitions the sweeps are warm
    started from a repeated-squaring estimate; the returned solution still
    passes the same span test.
    """
    if not alpha > 0:
        raise ConfigError(f"temperature must be positive, got {alpha}")
    r = linear_reward(mdp, lam)
    P = mdp.transitions
    V = np.zeros(mdp.n_states) if init_bias is None else np.array(init_bias, dtype=float)
    V = V - V[anchor]
    if accelerate and init_bias is None and _is_deterministic(P):
        warm = _squaring_warm_start(r, P, alpha, anchor)
        if warm is not None:
            V = warm
    theta = 0.0
    span = np.inf
    for it in range(1, max_iter + 1):
        W = _soft_backup(r, P, V, alpha)
        theta = W[anchor]
        V_new = W - theta
        diff = V_new - V
        span = diff.max() - diff.min()
        V = V_new
        if span < tol:
            break
    else:
        raise ConvergenceError(
            f"soft RVI did not converge in {max_iter} sweeps (alpha={alpha}, lambda={list(np.atleast_1d(lam))})",
            residual=span,
        )
    # theta consistent with the returned V
    theta = float(_soft_backup(r, P, V, alpha)[anchor])
    pi, _ = _soft_policy(r, P, V, theta, alpha)
    residual = float(np.max(np.abs(_soft_backup(r - theta, P, V, alpha) - V)))
    return SoftSolution(theta=theta, bias=V, policy=pi, alpha=float(alpha),
                        residual=residual, iterations=it)


def policy_chain(mdp: TabularMdp, policy) -> np.ndarray:
    """State-action transition matrix ``M[(s,a), (s',a')] = P(s'|s,a) pi(a'|s')``."""
    pi = np.asarray(policy, dtype=float)
    if pi.shape != (mdp.n_states, mdp.n_actions):
        raise ConfigError(f"policy shape {pi.shape} does not match MDP")
    if np.any(pi < 0) or not np.allclose(pi.sum(axis=1), 1.0, atol=1e-10):
        raise ConfigError("policy rows must be probability vectors")
    n = mdp.n_states * mdp.n_actions
    return np.einsum("sat,tb->satb", mdp.transitions, pi).reshape(n, n)


def _tv_residual(rho, M):
    return 0.5 * np.abs(rho @ M - rho).sum()


def stationary_distribution(
    chain,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    damping: float = 0.0,
    init=None,
    accelerate: bool = True,
) -> StationaryDist:
    """Stationary distribution of a row-stochastic ``chain`` by power iteration.

    ``damping`` mixes in the identity (lazy chain) to break periodicity; it does
    not move the fixed point.  With ``accelerate``, iteration switches to
    repeated squaring of the chain after 1000 slow sweeps.
    """
    M = np.asarray(chain, dtype=float)
    if not 0.0 <= damping < 1.0:
        raise ConfigError("damping must lie in [0, 1)")
    n = M.shape[0]
    A = M if damping == 0.0 else damping * np.eye(n) + (1.0 - damping) * M
    rho = np.full(n, 1.0 / n) if init is None else np.array(init, dtype=float)
    rho = rho / rho.sum()
    residual = _tv_residual(rho, M)
    it = 0
    while residual >= tol:
        if it >= max_iter:
            raise ConvergenceError("power iteration did not converge", residual=residual)
        it += 1
        rho = rho @ A
        rho = np.clip(rho, 0.0, None)
        rho /= rho.sum()
        if accelerate and it >= 1000 and it % 10 == 0:
            A = A @ A
            A /= A.sum(axis=1, keepdims=True)
        if it % 10 == 0 or it < 1000:
            residual = _tv_residual(rho, M)
    return StationaryDist(rho=rho, residual=float(residual), iterations=it)


def policy_reward_rate(
    mdp: TabularMdp,
    lam,
    alpha: float,
    policy,
    rho: StationaryDist | None = None,
    damping: float = 0.0,
) -> float:
    """Entropy-regularized reward rate of a fixed policy under task ``lam``."""
    pi = np.asarray(policy, dtype=float)
    if rho is None:
        rho = stationary_distribution(policy_chain(mdp, pi), damping=damping)
    r = linear_reward(mdp, lam)
    with np.errstate(divide="ignore"):
        log_pi = np.where(pi > 0, np.log(np.where(pi > 0, pi, 1.0)), 0.0)
    return float(np.sum(rho.by_state_action(mdp.n_actions) * (r - alpha * log_pi)))


def stationary_feature_means(mdp: TabularMdp, rho: StationaryDist) -> np.ndarray:
    return rho.rho @ mdp.features.reshape(-1, mdp.n_features)
