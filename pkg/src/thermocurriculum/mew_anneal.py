"""Minimum-excess-work (MEW) temperature annealing.

The inverse temperature ``beta = 1/alpha`` scales the reward, so its friction
is the lag-summed autocovariance of recent rewards.  Each update moves beta by

    d_beta = eta / (beta * sqrt(zeta + eps))

so cooling slows down while rewards fluctuate and speeds up once they settle.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ConvergenceError
from .friction import friction_sampled
from .maxent_solver import policy_reward_rate, solve_soft_avg
from .mdp_core import TabularMdp, linear_reward


@dataclass(frozen=True)
class AnnealConfig:
    eta: float
    recency_N: int = 5000
    epsilon: float = 1e-8
    alpha_0: float = 0.2
    max_lag_T: int | None = None
    steps_between_updates: int = 1
    alpha_min: float = 1e-3
    resolve_rel_change: float = 1e-3

    def __post_init__(self):
        if self.max_lag_T is None:
            object.__setattr__(self, "max_lag_T", self.recency_N // 2)
        if not self.eta >= 0:
            raise ConfigError("thermodynamic speed must be non-negative")
        if not (self.epsilon > 0 and self.alpha_0 > 0 and self.alpha_min > 0):
            raise ConfigError("epsilon, alpha_0 and alpha_min must be positive")
        if not self.recency_N > self.max_lag_T >= 1:
            raise ConfigError("need recency_N > max_lag_T >= 1")
        if self.steps_between_updates < 1:
            raise ConfigError("steps_between_updates must be at least 1")


@dataclass
class AnnealTrace:
    step: list = field(default_factory=list)
    alpha: list = field(default_factory=list)
    beta: list = field(default_factory=list)
    zeta: list = field(default_factory=list)
    mean_reward: list = field(default_factory=list)
    delta_beta: list = field(default_factory=list)
    stop_reason: str = "budget"
    final_policy: np.ndarray | None = None
    rewards_seen: float = 0.0

    def __len__(self):
        return len(self.step)

    @property
    def final_alpha(self) -> float:
        return self.alpha[-1] if self.alpha else float("nan")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "alpha", "beta", "zeta", "mean_reward", "delta_beta"])
            for row in zip(self.step, self.alpha, self.beta, self.zeta,
                           self.mean_reward, self.delta_beta):
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def mew_step(beta: float, zeta: float, eta: float, epsilon: float = 1e-8) -> float:
    """One MEW update of the inverse temperature."""
    if not all(math.isfinite(v) for v in (beta, zeta, eta, epsilon)):
        raise ConfigError("non-finite input to mew_step")
    if beta <= 0 or zeta < 0:
        raise ConfigError("need beta > 0 and zeta >= 0")
    return beta + eta / (beta * math.sqrt(zeta + epsilon))


def scalar_friction(recent_rewards, max_lag_T: int) -> float:
    rewards = np.asarray(recent_rewards, dtype=float)
    if rewards.ndim != 1 or len(rewards) < max_lag_T + 1:
        raise ConfigError(f"need at least {max_lag_T + 1} rewards, got {rewards.size}")
    return float(friction_sampled(rewards, max_lag_T).zeta[0, 0])


class MewController:
    """Stateful MEW schedule fed one reward at a time."""

    def __init__(self, config: AnnealConfig):
        self.config = config
        self.beta = 1.0 / config.alpha_0
        self.buffer = deque(maxlen=config.recency_N)
        self.n_seen = 0

    @property
    def alpha(self) -> float:
        return 1.0 / self.beta

    def observe(self, reward: float):
        self.buffer.append(float(reward))
        self.n_seen += 1

    def ready(self) -> bool:
        return len(self.buffer) > self.config.max_lag_T

    def update(self):
        """Apply one temperature update; returns ``(zeta, delta_beta)``."""
        cfg = self.config
        zeta = scalar_friction(np.fromiter(self.buffer, float, len(self.buffer)), cfg.max_lag_T)
        new_beta = mew_step(self.beta, zeta, cfg.eta, cfg.epsilon)
        delta = new_beta - self.beta
        self.beta = new_beta
        return zeta, delta


class _TabularAgent:
    """On-policy simulator that re-solves exactly when the temperature drifts."""

    def __init__(self, mdp, lam, alpha, seed, resolve_rel_change=1e-3):
        self.mdp = mdp
        self.lam = np.asarray(lam, dtype=float)
        self.rewards = linear_reward(mdp, lam)
        self.rng = np.random.default_rng(seed)
        self.cum_P = np.cumsum(mdp.transitions, axis=2)
        self.resolve_rel_change = resolve_rel_change
        self.solution = None
        self.solved_alpha = None
        self.set_alpha(alpha)
        self.state = int(self.rng.integers(mdp.n_states))

    def set_alpha(self, alpha):
        if self.solved_alpha is not None and \
                abs(alpha - self.solved_alpha) < self.resolve_rel_change * self.solved_alpha:
            return
        try:
            init = None if self.solution is None else self.solution.bias
            self.solution = solve_soft_avg(self.mdp, self.lam, alpha, init_bias=init)
        except ConvergenceError as exc:
            raise ConvergenceError(f"solver failed at alpha={alpha}: {exc}", exc.residual, alpha) from exc
        self.solved_alpha = alpha
        self.cum_pi = np.cumsum(self.solution.policy, axis=1)

    def step(self) -> float:
        s = self.state
        a = min(int(np.searchsorted(self.cum_pi[s], self.rng.random(), side="right")),
                self.mdp.n_actions - 1)
        reward = self.rewards[s, a]
        self.state = min(int(np.searchsorted(self.cum_P[s, a], self.rng.random(), side="right")),
                         self.mdp.n_states - 1)
        return float(reward)


def run_anneal(mdp: TabularMdp, lam, config: AnnealConfig, total_env_steps: int,
               seed: int = 0) -> AnnealTrace:
    """Anneal the temperature with MEW while acting on-policy in ``mdp``.

    Temperature updates start once the reward buffer holds more than
    ``max_lag_T`` entries and then happen every ``steps_between_updates``
    environment steps.  Stops early if alpha would drop below ``alpha_min``.
    """
    controller = MewController(config)
    agent = _TabularAgent(mdp, lam, controller.alpha, seed, config.resolve_rel_change)
    trace = AnnealTrace()
    reward_sum = 0.0
    for t in range(1, total_env_steps + 1):
        r = agent.step()
        reward_sum += r
        controller.observe(r)
        if t % config.steps_between_updates or not controller.ready():
            continue
        if config.eta == 0:
            zeta, delta = scalar_friction(list(controller.buffer), config.max_lag_T), 0.0
        else:
            zeta, delta = controller.update()
        if controller.alpha < config.alpha_min:
            trace.stop_reason = "alpha_min"
            break
        trace.step.append(t)
        trace.alpha.append(controller.alpha)
        trace.beta.append(controller.beta)
        trace.zeta.append(zeta)
        trace.mean_reward.append(float(np.mean(controller.buffer)))
        trace.delta_beta.append(delta)
        agent.set_alpha(controller.alpha)
    trace.final_policy = agent.solution.policy
    trace.rewards_seen = reward_sum / max(t, 1)
    return trace


def run_fixed_schedule(mdp: TabularMdp, lam, alpha_at, total_env_steps: int, seed: int = 0,
                       steps_between_updates: int = 1, resolve_rel_change: float = 1e-3):
    """Act on-policy under a prescribed temperature schedule ``alpha_at(step)``.

    Returns ``(final_policy, final_alpha, mean_reward)``.
    """
    alpha = alpha_at(0)
    agent = _TabularAgent(mdp, lam, alpha, seed, resolve_rel_change)
    reward_sum = 0.0
    for t in range(1, total_env_steps + 1):
        reward_sum += agent.step()
        if t % steps_between_updates == 0:
            alpha = alpha_at(t)
            agent.set_alpha(alpha)
    return agent.solution.policy, alpha, reward_sum / max(total_env_steps, 1)


def linear_beta_schedule(alpha_0: float, alpha_end: float, total_env_steps: int):
    """Inverse temperature rising linearly from ``1/alpha_0`` to ``1/alpha_end``."""
    b0, b1 = 1.0 / alpha_0, 1.0 / alpha_end

    def alpha_at(t):
        frac = min(max(t / total_env_steps, 0.0), 1.0)
        return 1.0 / (b0 + frac * (b1 - b0))

    return alpha_at


def compare_schedules(mdp: TabularMdp, lam, mew_config: AnnealConfig, total_env_steps: int,
                      seeds=(0,), constant_alphas=(0.2, 0.05), alpha_eval: float | None = None):
    """Run MEW, a matched-endpoint linear-beta schedule and constant temperatures.

    Every final policy is scored by its entropy-regularized reward rate at
    ``alpha_eval`` (default: the MEW run's final temperature for that seed).
    Returns a list of row dicts.
    """
    rows = []
    steps = mew_config.steps_between_updates
    for seed in seeds:
        trace = run_anneal(mdp, lam, mew_config, total_env_steps, seed)
        target = trace.final_alpha if len(trace) else mew_config.alpha_0
        a_eval = target if alpha_eval is None else alpha_eval
        rows.append({"schedule": "mew", "seed": seed, "final_alpha": target,
                     "theta_at_target": policy_reward_rate(mdp, lam, a_eval, trace.final_policy),
                     "mean_reward": trace.rewards_seen})
        sched = linear_beta_schedule(mew_config.alpha_0, target, total_env_steps)
        pi, a_end, mean_r = run_fixed_schedule(mdp, lam, sched, total_env_steps, seed, steps,
                                               mew_config.resolve_rel_change)
        rows.append({"schedule": "linear_beta", "seed": seed, "final_alpha": a_end,
                     "theta_at_target": policy_reward_rate(mdp, lam, a_eval, pi),
                     "mean_reward": mean_r})
        for a in constant_alphas:
            pi, a_end, mean_r = run_fixed_schedule(mdp, lam, lambda t, a=a: a, total_env_steps,
                                                   seed, steps, mew_config.resolve_rel_change)
            rows.append({"schedule": f"constant_{a:g}", "seed": seed, "final_alpha": a_end,
                         "theta_at_target": policy_reward_rate(mdp, lam, a_eval, pi),
                         "mean_reward": mean_r})
    return rows


def write_rows_csv(rows, path):
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})
