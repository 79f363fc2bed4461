"""Task dispatch and the single-episode API."""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from symrd.envs import ffsp, routing
from symrd.envs.base import (
    BudgetLedger,
    InvalidTrajectoryError,
    Solution,
    TerminalStateError,
    Trajectory,
)
from symrd.instances import ProblemInstance, Task


def make_decoder(instances, orders=None):
    """Batched decoder for same-task, same-size instances."""
    task = instances[0].task
    if task is Task.FFSP:
        return ffsp.FFSPDecoder(list(instances), orders)
    if task is Task.CVRP:
        return routing.CVRPDecoder(list(instances))
    return routing.TourDecoder(list(instances))


def n_actions(inst: ProblemInstance) -> int:
    return inst.size if inst.task in (Task.TSP, Task.ATSP) else inst.size + 1


def _check_task(inst: ProblemInstance, traj: Trajectory) -> None:
    if traj.task is not inst.task:
        raise InvalidTrajectoryError(f"{traj.task.value} trajectory for {inst.task.value} instance")


def solution_of(inst: ProblemInstance, traj: Trajectory) -> Solution:
    """Canonical solution of a complete trajectory (no reward evaluation)."""
    _check_task(inst, traj)
    if inst.task is Task.FFSP:
        return ffsp.canonical_ffsp(inst, traj)
    if inst.task is Task.CVRP:
        return routing.canonical_cvrp(inst, traj)
    return routing.canonical_tour(inst, traj)


def solution_cost(inst: ProblemInstance, sol: Solution) -> float:
    if inst.task is Task.FFSP:
        return ffsp.ffsp_cost(inst, sol)
    if inst.task is Task.CVRP:
        return routing.cvrp_cost(inst, sol)
    return routing.tour_cost(inst, sol)


def trajectory_cost(inst: ProblemInstance, traj: Trajectory) -> float:
    """Cost of a trajectory without touching any ledger (diagnostics only)."""
    return solution_cost(inst, solution_of(inst, traj))


def path_cost(inst: ProblemInstance, traj: Trajectory) -> float:
    """Cost accumulated along the trajectory's own action order.

    Independent of the canonical form, so it can cross-check that symmetric
    trajectories really cost the same.
    """
    _check_task(inst, traj)
    if inst.task is Task.FFSP:
        return float(ffsp.replay(inst, traj).makespan())
    if inst.task is Task.CVRP:
        routing.split_routes(inst, traj)
        path = traj.actions
    else:
        routing.validate_tour(inst, traj)
        path = traj.actions + traj.actions[:1]
    d = inst.distance_matrix()
    return float(sum(float(d[path[i], path[i + 1]]) for i in range(len(path) - 1)))


def episodic_reward(inst: ProblemInstance, traj: Trajectory, ledger: BudgetLedger) -> float:
    """Terminal reward ``-cost``; the one operation charged to the budget."""
    cost = trajectory_cost(inst, traj)
    ledger.charge(1)
    return -cost


@dataclass(frozen=True, eq=False)
class State:
    instance: ProblemInstance
    prefix: tuple[int, ...]
    machine_order: tuple[int, ...] | None
    _decoder: object

    @property
    def terminal(self) -> bool:
        return bool(self._decoder.done[0])

    @property
    def remaining_capacity(self) -> int | None:
        if self.instance.task is not Task.CVRP:
            return None
        return int(self._decoder.cap[0])

    @property
    def position(self) -> int | None:
        if self.instance.task is not Task.CVRP:
            return None
        return max(int(self._decoder.last[0]), 0)

    @property
    def time(self) -> int | None:
        if self.instance.task is not Task.FFSP:
            return None
        return self._decoder.sims[0].time

    @property
    def machine(self) -> int | None:
        if self.instance.task is not Task.FFSP or self.terminal:
            return None
        return self._decoder.sims[0].machine


def initial_state(inst: ProblemInstance, machine_order=None) -> State:
    dec = make_decoder([inst], None if machine_order is None else [machine_order])
    order = dec.sims[0].order if inst.task is Task.FFSP else None
    return State(inst, (), order, dec)


def feasible_mask(state: State) -> np.ndarray:
    if state.terminal:
        raise TerminalStateError("no actions in a terminal state")
    return state._decoder.mask()[0]


def step(state: State, action: int) -> State:
    if state.terminal:
        raise TerminalStateError("no actions in a terminal state")
    dec = copy.deepcopy(state._decoder)
    dec.step(np.array([int(action)]))
    return State(state.instance, state.prefix + (int(action),), state.machine_order, dec)


def trajectory_of(state: State) -> Trajectory:
    if not state.terminal:
        raise InvalidTrajectoryError("state is not terminal")
    return Trajectory(state.instance.task, state.prefix, state.machine_order)


def replay(inst: ProblemInstance, traj: Trajectory) -> State:
    """Step through ``traj`` from the initial state, checking every mask."""
    _check_task(inst, traj)
    state = initial_state(inst, traj.machine_order)
    for i, a in enumerate(traj.actions):
        if state.terminal:
            raise InvalidTrajectoryError(f"trajectory continues after termination at step {i}")
        mask = feasible_mask(state)
        if not 0 <= a < mask.size or not mask[a]:
            raise InvalidTrajectoryError(f"infeasible action {a} at step {i}")
        state = step(state, a)
    if not state.terminal:
        raise InvalidTrajectoryError("trajectory is not complete")
    return state
