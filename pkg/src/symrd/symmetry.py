"""Solution-preserving trajectory transformations.

TSP tours are symmetric under cyclic shifts and (symmetric case only)
reversal; CVRP trajectories under route reordering and flipping routes of
two or more customers; FFSP trajectories under any change of the machine
tie-break order. None of these operations evaluates a reward.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from symrd.envs import Solution, Trajectory, path_cost, solution_of
from symrd.envs import ffsp, routing
from symrd.envs.base import InstanceTooLargeError, InvalidTrajectoryError
from symrd.instances import ProblemInstance, Task

MAX_ORBIT_TOUR = 8
MAX_ORBIT_ROUTES = 4
MAX_ORBIT_JOBS = 5
MAX_ORBIT_MACHINES = 4
# FFSP sampling is exactly uniform over the deduplicated orbit up to this many machines.
EXACT_FFSP_MACHINES = 5


@dataclass(frozen=True)
class TransformSpec:
    task: Task
    shift: int = 0
    flip: bool = False
    route_perm: tuple[int, ...] | None = None
    route_flips: tuple[int, ...] | None = None
    machine_order: tuple[int, ...] | None = None


@dataclass(frozen=True)
class Orbit:
    solution: Solution
    members: tuple[Trajectory, ...]

    def __len__(self) -> int:
        return len(self.members)


def apply_transform(inst: ProblemInstance, traj: Trajectory, spec: TransformSpec) -> Trajectory:
    task = inst.task
    if task in (Task.TSP, Task.ATSP):
        routing.validate_tour(inst, traj)
        if spec.flip and task is Task.ATSP:
            raise ValueError("reversal does not preserve ATSP tours")
        a = traj.actions
        k = spec.shift % len(a)
        out = a[k:] + a[:k]
        if spec.flip:
            out = out[::-1]
        return Trajectory(task, out)
    if task is Task.CVRP:
        routes = routing.split_routes(inst, traj)
        perm = spec.route_perm if spec.route_perm is not None else tuple(range(len(routes)))
        flips = spec.route_flips if spec.route_flips is not None else (0,) * len(routes)
        if sorted(perm) != list(range(len(routes))) or len(flips) != len(routes):
            raise ValueError("route permutation does not match the number of routes")
        new = [routes[i][::-1] if flips[i] else routes[i] for i in perm]
        return Trajectory(task, routing.routes_to_actions(new))
    sol = solution_of(inst, traj)
    return ffsp.replay_schedule(inst, sol.form, spec.machine_order)


def identity_spec(inst: ProblemInstance, traj: Trajectory) -> TransformSpec:
    if inst.task is Task.CVRP:
        return TransformSpec(inst.task)
    if inst.task is Task.FFSP:
        return TransformSpec(inst.task, machine_order=traj.machine_order)
    return TransformSpec(inst.task)


def random_spec(inst: ProblemInstance, traj: Trajectory, rng: np.random.Generator) -> TransformSpec:
    """Uniform draw over the transformation group acting on ``traj``."""
    task = inst.task
    if task in (Task.TSP, Task.ATSP):
        shift = int(rng.integers(inst.size))
        flip = bool(rng.integers(2)) if task is Task.TSP else False
        return TransformSpec(task, shift=shift, flip=flip)
    if task is Task.CVRP:
        routes = routing.split_routes(inst, traj)
        perm = tuple(int(i) for i in rng.permutation(len(routes)))
        # a one-customer route is its own reversal, so it gets no flip bit
        flips = tuple(int(rng.integers(2)) if len(r) > 1 else 0 for r in routes)
        return TransformSpec(task, route_perm=perm, route_flips=flips)
    G = sum(inst.machines_per_stage)
    return TransformSpec(task, machine_order=tuple(int(g) for g in rng.permutation(G)))


def sample_symmetric(inst: ProblemInstance, traj: Trajectory, rng: np.random.Generator) -> Trajectory:
    """Uniform draw from the orbit of ``solution_of(traj)``."""
    if inst.task is Task.FFSP and sum(inst.machines_per_stage) <= EXACT_FFSP_MACHINES:
        members = _ffsp_orbit(inst, solution_of(inst, traj))
        return members[int(rng.integers(len(members)))]
    return apply_transform(inst, traj, random_spec(inst, traj, rng))


def _ffsp_orbit(inst: ProblemInstance, sol: Solution) -> tuple[Trajectory, ...]:
    G = sum(inst.machines_per_stage)
    seen: dict[tuple, Trajectory] = {}
    for order in itertools.permutations(range(G)):
        tr = ffsp.replay_schedule(inst, sol.form, order)
        seen.setdefault(ffsp.decisions(inst, tr), tr)
    return tuple(seen.values())


def enumerate_orbit(inst: ProblemInstance, sol: Solution) -> Orbit:
    """Every trajectory whose canonical solution is ``sol``."""
    task = inst.task
    if task in (Task.TSP, Task.ATSP):
        if inst.size > MAX_ORBIT_TOUR:
            raise InstanceTooLargeError(f"tour orbits limited to N <= {MAX_ORBIT_TOUR}")
        base = Trajectory(task, sol.form)
        flips = (False, True) if task is Task.TSP else (False,)
        members = {
            apply_transform(inst, base, TransformSpec(task, shift=k, flip=f))
            for k in range(inst.size)
            for f in flips
        }
        return Orbit(sol, tuple(sorted(members, key=lambda t: t.actions)))
    if task is Task.CVRP:
        routes = sol.form
        if len(routes) > MAX_ORBIT_ROUTES:
            raise InstanceTooLargeError(f"CVRP orbits limited to {MAX_ORBIT_ROUTES} routes")
        options = [(r,) if len(r) == 1 else (r, r[::-1]) for r in routes]
        members = set()
        for perm in itertools.permutations(range(len(routes))):
            for choice in itertools.product(*(options[i] for i in perm)):
                members.add(Trajectory(task, routing.routes_to_actions(choice)))
        return Orbit(sol, tuple(sorted(members, key=lambda t: t.actions)))
    if inst.size > MAX_ORBIT_JOBS or sum(inst.machines_per_stage) > MAX_ORBIT_MACHINES:
        raise InstanceTooLargeError(
            f"FFSP orbits limited to {MAX_ORBIT_JOBS} jobs and {MAX_ORBIT_MACHINES} machines"
        )
    return Orbit(sol, _ffsp_orbit(inst, sol))


def orbit_size(inst: ProblemInstance, sol: Solution) -> int:
    task = inst.task
    if task is Task.TSP:
        return 2 * inst.size
    if task is Task.ATSP:
        return inst.size
    if task is Task.CVRP:
        k = len(sol.form)
        m = sum(1 for r in sol.form if len(r) >= 2)
        return math.factorial(k) * 2**m
    raise ValueError("FFSP orbit size has no closed form; use enumerate_orbit")


def trajectory_key(inst: ProblemInstance, traj: Trajectory) -> tuple:
    """Identity of a trajectory as the policy sees it."""
    if inst.task is Task.FFSP:
        return ffsp.decisions(inst, traj)
    return traj.actions


def hamming_distance(a: Trajectory, b: Trajectory) -> int:
    if len(a.actions) != len(b.actions):
        raise ValueError("Hamming distance needs equal-length trajectories")
    return sum(x != y for x, y in zip(a.actions, b.actions))


def verify_preserving(inst: ProblemInstance, traj: Trajectory, transformed: Trajectory) -> bool:
    """True iff both trajectories give the same solution at the same cost.

    Costs are summed along each trajectory's own order, outside any budget
    ledger.
    """
    try:
        s1 = solution_of(inst, traj)
        s2 = solution_of(inst, transformed)
    except InvalidTrajectoryError:
        return False
    if s1 != s2:
        return False
    c1, c2 = path_cost(inst, traj), path_cost(inst, transformed)
    return abs(c1 - c2) <= 1e-9 * max(abs(c1), abs(c2), 1e-12)
