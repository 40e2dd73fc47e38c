"""Cost accounting along curricula.

Two routes to the excess work of a protocol:

* ``excess_work_quadratic`` integrates the linear-response quadratic form
  ``lam_dot . zeta(lam) . lam_dot`` over the protocol's time axis;
* ``excess_work_direct`` sums ``d_lam . (E_eq[phi] - E_inst[phi])`` from an
  explicit rollout of the occupancy distribution, with no linearization.

Time in both is measured in the protocol's own units.  To compare them the
protocol must run on the MDP clock, i.e. ``protocol.rescaled(m * n_stages)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ConvergenceError
from .maxent_solver import (
    policy_chain,
    policy_reward_rate,
    solve_soft_avg,
    stationary_distribution,
    stationary_feature_means,
)
from .manifold import Protocol
from .mdp_core import TabularMdp


def linear_protocol(lam0, lam1, n_steps: int) -> Protocol:
    """Straight-line interpolation in ``n_steps`` uniform steps over t in [0, 1]."""
    lam0 = np.asarray(lam0, dtype=float)
    lam1 = np.asarray(lam1, dtype=float)
    if lam0.shape != lam1.shape:
        raise ConfigError("endpoint dimensions differ")
    if n_steps < 1:
        raise ConfigError("n_steps must be at least 1")
    t = np.linspace(0.0, 1.0, n_steps + 1)
    return Protocol(t, lam0[None, :] + t[:, None] * (lam1 - lam0)[None, :])


def excess_work_quadratic(protocol: Protocol, field) -> float:
    """Trapezoid rule for the integral of ``lam_dot^T zeta(lam) lam_dot`` dt."""
    if len(protocol) < 2:
        return 0.0
    if np.all(protocol.points == protocol.points[0]):
        return 0.0
    for x in protocol.points:
        if not field.contains(x):
            raise ConfigError(f"protocol sample {x.tolist()} lies outside the field")
    vel = np.gradient(protocol.points, protocol.times, axis=0)
    integrand = np.array([v @ field.metric(x) @ v for x, v in zip(protocol.points, vel)])
    return float(np.trapezoid(integrand, protocol.times))


@dataclass(frozen=True, eq=False)
class RolloutRecord:
    """Per-stage rollout of the agent's occupancy along a curriculum.

    ``inst_means[k]`` averages ``E_p[phi]`` over the ``m`` relaxation steps
    of stage ``k`` (starting right after the task switch); ``end_means[k]``
    is the value after the last of them and ``occupancy[k]`` the matching
    distribution.
    """

    occupancy: np.ndarray
    eq_means: np.ndarray
    inst_means: np.ndarray
    end_means: np.ndarray
    theta: np.ndarray
    relax_steps: int

    def __len__(self):
        return len(self.theta)


def _stage_solutions(mdp, protocol, alpha):
    out = []
    for k, lam in enumerate(protocol.points):
        try:
            sol = solve_soft_avg(mdp, lam, alpha)
            M = policy_chain(mdp, sol.policy)
            rho = stationary_distribution(M)
        except ConvergenceError as exc:
            raise ConvergenceError(f"stage {k} (lambda={lam.tolist()}) failed: {exc}",
                                   exc.residual, k) from exc
        out.append((sol, M, rho))
    return out


def nonequilibrium_rollout(mdp: TabularMdp, protocol: Protocol, alpha: float,
                           relax_steps: int = 20) -> RolloutRecord:
    """Track the occupancy when the policy jumps to each stage's optimum and relaxes ``relax_steps`` steps."""
    if relax_steps < 1:
        raise ConfigError("relax_steps must be at least 1")
    phi = mdp.features.reshape(-1, mdp.n_features)
    stages = _stage_solutions(mdp, protocol, alpha)
    p = stages[0][2].rho.copy()
    occupancy, eq_means, inst_means, end_means, theta = [], [], [], [], []
    for k, (sol, M, rho) in enumerate(stages):
        eq = stationary_feature_means(mdp, rho)
        if k == 0:
            inst = eq.copy()
        else:
            acc = np.zeros(mdp.n_features)
            for _ in range(relax_steps):
                acc += p @ phi
                p = p @ M
            inst = acc / relax_steps
        occupancy.append(p.copy())
        eq_means.append(eq)
        inst_means.append(inst)
        end_means.append(p @ phi)
        theta.append(sol.theta)
    return RolloutRecord(np.array(occupancy), np.array(eq_means), np.array(inst_means),
                         np.array(end_means), np.array(theta), relax_steps)


def excess_work_direct(record: RolloutRecord, protocol: Protocol) -> float:
    """Sum of ``d_lam_k . (E_eq_k[phi] - E_inst_k[phi])`` over stages."""
    if len(record) != len(protocol):
        raise ConfigError(f"record has {len(record)} stages, protocol has {len(protocol)}")
    if len(protocol) < 2:
        return 0.0
    d_lam = np.diff(protocol.points, axis=0)
    lag = record.eq_means[1:] - record.inst_means[1:]
    return float(np.sum(d_lam * lag))


@dataclass(frozen=True, eq=False)
class RegretTrace:
    stage_regret: np.ndarray
    cumulative: np.ndarray
    theta_opt: np.ndarray

    @property
    def total(self) -> float:
        return float(self.cumulative[-1])


def regret_along_protocol(mdp: TabularMdp, protocol: Protocol, alpha: float) -> RegretTrace:
    """Lag regret: the previous stage's optimal policy evaluated at the current task."""
    stages = _stage_solutions(mdp, protocol, alpha)
    regret = np.zeros(len(stages))
    for k in range(1, len(stages)):
        prev_sol, _, prev_rho = stages[k - 1]
        sol, _, rho = stages[k]
        lam = protocol.points[k]
        # both rates go through the same stationary-distribution estimator, so
        # an unchanged policy scores exactly zero regret
        best = policy_reward_rate(mdp, lam, alpha, sol.policy, rho=rho)
        regret[k] = best - policy_reward_rate(mdp, lam, alpha, prev_sol.policy, rho=prev_rho)
    theta = np.array([s[0].theta for s in stages])
    return RegretTrace(regret, np.cumsum(regret), theta)
