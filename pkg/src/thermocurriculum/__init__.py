"""Thermodynamic curriculum tools for average-reward MaxEnt RL on tabular MDPs."""

__version__ = "0.1.0"

from .errors import ConfigError, ConvergenceError, DegenerateMetricError
from .mdp_core import GridWorldSpec, TabularMdp, build_gridworld, linear_reward
from .maxent_solver import (
    SoftSolution,
    StationaryDist,
    policy_chain,
    policy_reward_rate,
    solve_soft_avg,
    stationary_distribution,
)
from .friction import FrictionTensor, friction_exact, friction_sampled, scalar_field
from .manifold import (
    AnalyticMetric,
    ExactMetric,
    FrictionField,
    LambdaGrid,
    Protocol,
    build_metric_field,
    christoffel_fd,
    constant_speed_reparam,
    geodesic_graph,
    geodesic_shoot,
)
from .protocol_eval import (
    RolloutRecord,
    excess_work_direct,
    excess_work_quadratic,
    linear_protocol,
    nonequilibrium_rollout,
    regret_along_protocol,
)
from .mew_anneal import AnnealConfig, AnnealTrace, compare_schedules, mew_step, run_anneal, scalar_friction
