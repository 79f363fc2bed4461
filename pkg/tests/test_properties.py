from __future__ import annotations

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from symrd import ProblemInstance, Task, generate
from symrd.envs import BudgetLedger, Trajectory, episodic_reward, replay, solution_of, trajectory_of
from symrd.envs.routing import routes_to_actions
from symrd.symmetry import TransformSpec, apply_transform, sample_symmetric, verify_preserving
from symrd.verification import random_trajectories

FAST = settings(max_examples=60, deadline=None)


@st.composite
def tours(draw, task):
    n = draw(st.integers(3, 9))
    inst = generate(task, n, 1, draw(st.integers(0, 10_000)))[0]
    perm = draw(st.permutations(range(n)))
    return inst, Trajectory(task, perm)


@st.composite
def cvrp_trajectories(draw):
    n = draw(st.integers(1, 8))
    demands = draw(st.lists(st.integers(1, 9), min_size=n, max_size=n))
    rng = np.random.default_rng(draw(st.integers(0, 10_000)))
    inst = ProblemInstance(Task.CVRP, n, coords=rng.random((n + 1, 2)), demands=demands, capacity=9 * n)
    order = draw(st.permutations(range(1, n + 1)))
    cuts = draw(st.lists(st.booleans(), min_size=n - 1, max_size=n - 1))
    routes, cur = [], [order[0]]
    for c, x in zip(cuts, order[1:]):
        if c:
            routes.append(tuple(cur))
            cur = []
        cur.append(x)
    routes.append(tuple(cur))
    return inst, Trajectory(Task.CVRP, routes_to_actions(routes))


def _canonical_idempotent(inst, tr):
    sol = solution_of(inst, tr)
    if inst.task is Task.CVRP:
        again = Trajectory(Task.CVRP, routes_to_actions(sol.form))
    else:
        again = Trajectory(inst.task, sol.form)
    assert solution_of(inst, again) == sol


@FAST
@given(tours(Task.TSP))
def test_tsp_canonical_idempotent(case):
    _canonical_idempotent(*case)


@FAST
@given(tours(Task.ATSP))
def test_atsp_canonical_idempotent(case):
    _canonical_idempotent(*case)


@FAST
@given(cvrp_trajectories())
def test_cvrp_canonical_idempotent(case):
    _canonical_idempotent(*case)


@FAST
@given(tours(Task.TSP), st.integers(0, 20), st.booleans())
def test_tsp_group_action_preserves(case, shift, flip):
    inst, tr = case
    out = apply_transform(inst, tr, TransformSpec(Task.TSP, shift=shift, flip=flip))
    assert verify_preserving(inst, tr, out)


@FAST
@given(tours(Task.ATSP), st.integers(0, 20))
def test_atsp_shift_preserves(case, shift):
    inst, tr = case
    assert verify_preserving(inst, tr, apply_transform(inst, tr, TransformSpec(Task.ATSP, shift=shift)))


@FAST
@given(cvrp_trajectories(), st.integers(0, 2**31))
def test_cvrp_sample_symmetric_preserves(case, seed):
    inst, tr = case
    out = sample_symmetric(inst, tr, np.random.default_rng(seed))
    assert verify_preserving(inst, tr, out)
    r_in, r_out = episodic_reward(inst, tr, BudgetLedger()), episodic_reward(inst, out, BudgetLedger())
    assert abs(r_in - r_out) <= 1e-9 * abs(r_in)


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 6), st.integers(1, 3), st.integers(1, 3), st.integers(0, 10_000))
def test_ffsp_sample_symmetric_preserves(n, stages, machines, seed):
    inst = generate("FFSP", n, 1, seed, stages=stages, machines=machines)[0]
    rng = np.random.default_rng(seed)
    tr = random_trajectories([inst], rng)[0]
    assert verify_preserving(inst, tr, sample_symmetric(inst, tr, rng))


@FAST
@given(st.sampled_from([Task.TSP, Task.ATSP, Task.CVRP, Task.FFSP]), st.integers(0, 10_000))
def test_replay_round_trip(task, seed):
    n = 5 if task is not Task.FFSP else 4
    inst = generate(task, n, 1, seed)[0]
    tr = random_trajectories([inst], np.random.default_rng(seed))[0]
    state = replay(inst, tr)
    assert state.terminal and trajectory_of(state) == tr
    assert solution_of(inst, trajectory_of(state)) == solution_of(inst, tr)
