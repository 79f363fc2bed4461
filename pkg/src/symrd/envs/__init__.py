"""Episodic construction MDPs for TSP, ATSP, CVRP and FFSP."""

from symrd.envs.base import (
    BudgetLedger,
    InfeasibleActionError,
    InstanceTooLargeError,
    InvalidTrajectoryError,
    Solution,
    StepContext,
    TerminalStateError,
    Trajectory,
)
from symrd.envs.core import (
    State,
    episodic_reward,
    feasible_mask,
    initial_state,
    make_decoder,
    n_actions,
    path_cost,
    replay,
    solution_cost,
    solution_of,
    step,
    trajectory_cost,
    trajectory_of,
)
from symrd.envs.oracle import brute_force_best

__all__ = [
    "BudgetLedger",
    "InfeasibleActionError",
    "InstanceTooLargeError",
    "InvalidTrajectoryError",
    "Solution",
    "State",
    "StepContext",
    "TerminalStateError",
    "Trajectory",
    "brute_force_best",
    "episodic_reward",
    "feasible_mask",
    "initial_state",
    "make_decoder",
    "n_actions",
    "path_cost",
    "replay",
    "solution_cost",
    "solution_of",
    "step",
    "trajectory_cost",
    "trajectory_of",
]
