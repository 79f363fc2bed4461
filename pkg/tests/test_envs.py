from __future__ import annotations

import numpy as np
import pytest

from oracles import cvrp_optimum, ffsp_optimum, tour_optimum
from symrd import ProblemInstance, Task, generate
from symrd.envs import (
    BudgetLedger,
    InfeasibleActionError,
    InstanceTooLargeError,
    InvalidTrajectoryError,
    TerminalStateError,
    Trajectory,
    brute_force_best,
    episodic_reward,
    feasible_mask,
    initial_state,
    path_cost,
    replay,
    solution_cost,
    solution_of,
    step,
    trajectory_cost,
    trajectory_of,
)
from symrd.policy import run_policy, zero_params

SQUARE = ProblemInstance(Task.TSP, 4, coords=[[0, 0], [1, 0], [1, 1], [0, 1]])

# optimum of generate("ATSP", 5, 1, 7)[0], from an enumeration of all 5! visiting orders
ATSP5_SEED7_OPT = 1.9795383723844377


def cvrp(demands, capacity, seed=0):
    rng = np.random.default_rng(seed)
    n = len(demands)
    return ProblemInstance(Task.CVRP, n, coords=rng.random((n + 1, 2)), demands=demands, capacity=capacity)


def ffsp(*stages):
    return ProblemInstance(Task.FFSP, len(stages[0][0]), proc=tuple(np.array(s) for s in stages))


def random_trajs(insts, seed=0):
    return run_policy(zero_params(insts[0].task, 2), insts, "sample", rng=np.random.default_rng(seed)).trajectories


# initial state / masks / steps


def test_tsp_initial_state():
    s = initial_state(SQUARE)
    assert s.prefix == ()
    assert feasible_mask(s).tolist() == [True] * 4


def test_tsp_mask_after_prefix():
    s = step(step(initial_state(SQUARE), 0), 1)
    assert s.prefix == (0, 1)
    assert np.nonzero(feasible_mask(s))[0].tolist() == [2, 3]
    assert step(s, 2).prefix == (0, 1, 2)


def test_tsp_step_is_pure():
    s = step(initial_state(SQUARE), 0)
    a, b = step(s, 1), step(s, 2)
    assert a.prefix == (0, 1) and b.prefix == (0, 2) and s.prefix == (0,)


def test_infeasible_step():
    s = step(initial_state(SQUARE), 0)
    with pytest.raises(InfeasibleActionError):
        step(s, 0)


def test_terminal_state_errors():
    s = initial_state(SQUARE)
    for a in (0, 1, 2, 3):
        s = step(s, a)
    assert s.terminal
    with pytest.raises(TerminalStateError):
        feasible_mask(s)
    with pytest.raises(TerminalStateError):
        step(s, 0)
    assert trajectory_of(s).actions == (0, 1, 2, 3)


def test_cvrp_initial_state_only_depot():
    inst = cvrp([2, 3, 4], 10)
    s = initial_state(inst)
    assert s.position == 0 and s.remaining_capacity == 10
    assert np.nonzero(feasible_mask(s))[0].tolist() == [0]


def test_cvrp_capacity_mask():
    inst = cvrp([7, 5, 2], 10)
    s = step(step(initial_state(inst), 0), 1)
    assert s.remaining_capacity == 3
    assert np.nonzero(feasible_mask(s))[0].tolist() == [0, 3]


def test_cvrp_capacity_decrement_and_reset():
    inst = cvrp([4, 5], 10)
    s = step(step(initial_state(inst), 0), 1)
    assert s.remaining_capacity == 6 and s.position == 1
    s = step(s, 0)
    assert s.remaining_capacity == 10 and s.position == 0
    # no empty route: depot twice in a row is masked while customers remain
    assert not feasible_mask(s)[0]


def test_cvrp_must_return_to_depot():
    inst = cvrp([1, 1], 10)
    s = initial_state(inst)
    for a in (0, 1, 2):
        s = step(s, a)
    assert not s.terminal
    assert np.nonzero(feasible_mask(s))[0].tolist() == [0]
    assert step(s, 0).terminal


def test_ffsp_initial_state():
    inst = ffsp([[3, 5], [4, 4]])
    s = initial_state(inst)
    assert s.time == 0 and s.machine == 0
    assert feasible_mask(s).tolist() == [True, True, True]


def test_ffsp_precedence():
    inst = ffsp([[3, 3]], [[2, 2]])
    s = step(initial_state(inst), 0)  # job 0 starts stage 1 on machine 0 at t=0
    # stage-2 machine acts next at t=0 but job 0 is still running: only skip-free wait
    while not s.terminal and s.time < 3:
        m = feasible_mask(s)
        if s.machine == 1:
            assert not m[0]
        s = step(s, int(np.nonzero(m)[0][0]))


def test_ffsp_ready_time_advances():
    inst = ffsp([[3, 5]])
    s = step(initial_state(inst), 1)
    assert s._decoder.sims[0].ready[0] == 5
    s = step(s, 0)
    assert s.terminal and s._decoder.sims[0].makespan() == 8


# rewards and costs


def test_unit_square_reward():
    ledger = BudgetLedger()
    assert episodic_reward(SQUARE, Trajectory(Task.TSP, (0, 1, 2, 3)), ledger) == -4.0
    assert ledger.calls == 1


@pytest.mark.parametrize("order", [(0, 1), (1, 0)])
def test_serial_ffsp_reward(order):
    inst = ffsp([[3, 5]])
    assert episodic_reward(inst, Trajectory(Task.FFSP, order, (0,)), BudgetLedger()) == -8.0


def test_invalid_trajectory_reward():
    ledger = BudgetLedger()
    with pytest.raises(InvalidTrajectoryError):
        episodic_reward(SQUARE, Trajectory(Task.TSP, (0, 1, 1, 3)), ledger)
    with pytest.raises(InvalidTrajectoryError):
        episodic_reward(SQUARE, Trajectory(Task.TSP, (0, 1, 2)), ledger)
    assert ledger.calls == 0


@pytest.mark.parametrize("task,n", [("TSP", 7), ("ATSP", 6), ("CVRP", 8), ("FFSP", 5)])
def test_reward_matches_canonical_cost(task, n):
    insts = list(generate(task, n, 10, 1))
    for inst, tr in zip(insts, random_trajs(insts)):
        r = episodic_reward(inst, tr, BudgetLedger())
        c = solution_cost(inst, solution_of(inst, tr))
        assert abs(-r - c) <= 1e-9 * c
        assert abs(path_cost(inst, tr) - c) <= 1e-9 * c


# the mapping C


def test_tsp_canonical_rotation():
    inst = generate("TSP", 4, 1, 0)[0]
    assert solution_of(inst, Trajectory(Task.TSP, (2, 3, 0, 1))).form == (0, 1, 2, 3)


def test_tsp_canonical_reflection():
    inst = generate("TSP", 4, 1, 0)[0]
    assert solution_of(inst, Trajectory(Task.TSP, (3, 2, 1, 0))).form == (0, 1, 2, 3)


def test_atsp_canonical_rotation_only():
    inst = generate("ATSP", 4, 1, 0)[0]
    assert solution_of(inst, Trajectory(Task.ATSP, (3, 2, 1, 0))).form == (0, 3, 2, 1)


def test_cvrp_canonical_routes():
    inst = cvrp([1, 1, 1], 10)
    sol = solution_of(inst, Trajectory(Task.CVRP, (0, 2, 1, 0, 3, 0)))
    assert sol.form == ((1, 2), (3,))


def test_ffsp_solution_ignores_tie_break_order():
    inst = ffsp([[3, 5], [4, 2]])
    a = solution_of(inst, Trajectory(Task.FFSP, (0, 1), (0, 1)))
    b = solution_of(inst, Trajectory(Task.FFSP, (1, 0), (1, 0)))
    assert a == b


@pytest.mark.parametrize("task,n", [("TSP", 6), ("ATSP", 6), ("CVRP", 7), ("FFSP", 4)])
def test_canonical_idempotent(task, n):
    insts = list(generate(task, n, 10, 2))
    for inst, tr in zip(insts, random_trajs(insts)):
        sol = solution_of(inst, tr)
        if task == "FFSP":
            continue  # the schedule form is already its own canonical form
        again = solution_of(inst, Trajectory(inst.task, _flatten(task, sol.form)))
        assert again == sol


def _flatten(task, form):
    if task == "CVRP":
        out = [0]
        for r in form:
            out += [*r, 0]
        return tuple(out)
    return form


def test_replay_validates():
    inst = cvrp([5, 5], 10)
    assert replay(inst, Trajectory(Task.CVRP, (0, 1, 2, 0))).terminal
    with pytest.raises(InvalidTrajectoryError):
        replay(inst, Trajectory(Task.CVRP, (0, 0, 1, 2, 0)))
    with pytest.raises(InvalidTrajectoryError):
        replay(inst, Trajectory(Task.CVRP, (0, 1, 2, 0, 0)))


def test_trajectory_cost_is_ledger_free():
    ledger = BudgetLedger()
    trajectory_cost(SQUARE, Trajectory(Task.TSP, (0, 1, 2, 3)))
    assert ledger.calls == 0


# brute-force oracle


def test_oracle_unit_square():
    sol, cost = brute_force_best(SQUARE)
    assert cost == pytest.approx(4.0, abs=1e-12)
    assert sol.form == (0, 1, 2, 3)


def test_oracle_atsp_frozen_value():
    _, cost = brute_force_best(generate("ATSP", 5, 1, 7)[0])
    assert cost == pytest.approx(ATSP5_SEED7_OPT, rel=1e-12)


@pytest.mark.parametrize("task,n", [("TSP", 6), ("ATSP", 6), ("CVRP", 6)])
def test_oracle_matches_naive_enumeration(task, n):
    for inst in generate(task, n, 5, 3):
        ref = tour_optimum(inst) if task != "CVRP" else cvrp_optimum(inst)
        assert brute_force_best(inst)[1] == pytest.approx(ref, rel=1e-9)


@pytest.mark.parametrize("shape,n", [((1, 2), 4), ((2, 2), 3), ((2, 1), 3)])
def test_ffsp_oracle_matches_exhaustive_decoder_search(shape, n):
    stages, machines = shape
    for inst in generate("FFSP", n, 4, 8, stages=stages, machines=machines):
        assert brute_force_best(inst)[1] == ffsp_optimum(inst)


@pytest.mark.parametrize("task,n", [("TSP", 8), ("CVRP", 7), ("FFSP", 4)])
def test_oracle_beats_random_trajectories(task, n):
    inst = generate(task, n, 1, 4)[0]
    _, best = brute_force_best(inst)
    trajs = random_trajs([inst] * 100, seed=5)
    assert all(best <= trajectory_cost(inst, t) + 1e-9 for t in trajs)


def test_oracle_solution_cost_consistent():
    inst = generate("CVRP", 7, 1, 9)[0]
    sol, cost = brute_force_best(inst)
    assert solution_cost(inst, sol) == pytest.approx(cost)


@pytest.mark.parametrize("task,n", [("TSP", 11), ("ATSP", 11), ("CVRP", 9), ("FFSP", 7)])
def test_oracle_too_large(task, n):
    with pytest.raises(InstanceTooLargeError):
        brute_force_best(generate(task, n, 1, 0)[0])
