"""TSP, ATSP and CVRP episodes.

Decoders step a whole batch of same-size instances at once; the policy
drives them during sampling, greedy decoding and teacher forcing.
"""

from __future__ import annotations

import numpy as np

from symrd.envs.base import (
    InfeasibleActionError,
    InvalidTrajectoryError,
    Solution,
    StepContext,
    Trajectory,
)
from symrd.instances import ProblemInstance, Task


class TourDecoder:
    """Batched TSP/ATSP construction: visit every city once."""

    pad_action = 0

    def __init__(self, instances: list[ProblemInstance]):
        self.B = len(instances)
        self.n = instances[0].size
        self.n_actions = self.n
        self.dist = np.stack([inst.distance_matrix() for inst in instances])
        self.visited = np.zeros((self.B, self.n), dtype=bool)
        self.first = np.full(self.B, -1)
        self.last = np.full(self.B, -1)
        self.t = 0
        self.done = np.zeros(self.B, dtype=bool)
        self._rows = np.broadcast_to(np.arange(self.n), (self.B, self.n))

    def mask(self) -> np.ndarray:
        m = ~self.visited
        if self.done.any():
            m[self.done] = False
            m[self.done, self.pad_action] = True
        return m

    def context(self) -> StepContext:
        if self.t == 0:
            edge = np.zeros((self.B, self.n))
        else:
            edge = self.dist[np.arange(self.B), self.last]
        extras = np.full((self.B, 1), 1.0 - self.t / self.n)
        return StepContext(self._rows, self.last.copy(), self.first.copy(), extras, edge[..., None])

    def step(self, actions) -> None:
        actions = np.asarray(actions, dtype=np.int64)
        live = ~self.done
        idx = np.nonzero(live)[0]
        a = actions[idx]
        if np.any(a < 0) or np.any(a >= self.n) or np.any(self.visited[idx, a]):
            raise InfeasibleActionError("city already visited or out of range")
        self.visited[idx, a] = True
        if self.t == 0:
            self.first[idx] = a
        self.last[idx] = a
        self.t += 1
        if self.t == self.n:
            self.done[:] = True


class CVRPDecoder:
    """Batched CVRP construction; node 0 is the depot.

    Episodes start and end with a depot action. Two depot visits in a row
    are infeasible while customers remain, so routes are never empty.
    """

    pad_action = 0

    def __init__(self, instances: list[ProblemInstance]):
        self.B = len(instances)
        self.n = instances[0].size
        self.n_actions = self.n + 1
        self.dist = np.stack([inst.distance_matrix() for inst in instances])
        self.demand = np.zeros((self.B, self.n + 1), dtype=np.int64)
        self.demand[:, 1:] = np.stack([inst.demands for inst in instances])
        self.Q = np.array([inst.capacity for inst in instances], dtype=np.int64)
        self.cap = self.Q.copy()
        self.visited = np.zeros((self.B, self.n + 1), dtype=bool)
        self.n_left = np.full(self.B, self.n)
        self.last = np.full(self.B, -1)
        self.done = np.zeros(self.B, dtype=bool)
        self._rows = np.broadcast_to(np.arange(self.n + 1), (self.B, self.n + 1))

    def mask(self) -> np.ndarray:
        m = (~self.visited) & (self.demand <= self.cap[:, None])
        m[:, 0] = self.last > 0
        start = self.last < 0
        m[start] = False
        m[start, 0] = True
        finished = (self.n_left == 0) & ~start
        m[finished, 1:] = False
        m[finished, 0] = True
        if self.done.any():
            m[self.done] = False
            m[self.done, self.pad_action] = True
        return m

    def context(self) -> StepContext:
        pos = np.maximum(self.last, 0)
        edge = self.dist[np.arange(self.B), pos]
        first = np.where(self.last < 0, -1, 0)
        extras = np.stack([self.cap / self.Q, self.n_left / self.n], axis=1)
        return StepContext(self._rows, self.last.copy(), first, extras, edge[..., None])

    def step(self, actions) -> None:
        actions = np.asarray(actions, dtype=np.int64)
        mask = self.mask()
        live = ~self.done
        idx = np.nonzero(live)[0]
        a = actions[idx]
        if np.any(a < 0) or np.any(a > self.n) or not np.all(mask[idx, a]):
            raise InfeasibleActionError("infeasible CVRP action")
        depot = a == 0
        di, ci = idx[depot], idx[~depot]
        started = self.last[di] >= 0
        self.cap[di] = self.Q[di]
        self.done[di] = started & (self.n_left[di] == 0)
        ca = a[~depot]
        self.visited[ci, ca] = True
        self.cap[ci] -= self.demand[ci, ca]
        self.n_left[ci] -= 1
        self.last[idx] = a


# ---------------------------------------------------------------------------
# Scalar validation, canonical forms and costs.


def validate_tour(inst: ProblemInstance, traj: Trajectory) -> None:
    if len(traj.actions) != inst.size or sorted(traj.actions) != list(range(inst.size)):
        raise InvalidTrajectoryError("tour must visit each city exactly once")


def canonical_tour(inst: ProblemInstance, traj: Trajectory) -> Solution:
    validate_tour(inst, traj)
    a = list(traj.actions)
    k = a.index(0)
    cyc = a[k:] + a[:k]
    if inst.task is Task.TSP and cyc[-1] < cyc[1]:
        cyc = [cyc[0]] + cyc[1:][::-1]
    return Solution(inst.task, tuple(cyc))


def tour_cost(inst: ProblemInstance, sol: Solution) -> float:
    d = inst.distance_matrix()
    cyc = sol.form
    total = 0.0
    for i in range(len(cyc)):
        total += float(d[cyc[i], cyc[(i + 1) % len(cyc)]])
    return total


def split_routes(inst: ProblemInstance, traj: Trajectory) -> list[tuple[int, ...]]:
    """Validate a CVRP action sequence and return its routes in visiting order."""
    a = traj.actions
    n, cap_max = inst.size, inst.capacity
    if len(a) < 3 or a[0] != 0 or a[-1] != 0:
        raise InvalidTrajectoryError("CVRP trajectory must start and end at the depot")
    seen = set()
    routes: list[tuple[int, ...]] = []
    cur: list[int] = []
    load = 0
    for prev, x in zip(a, a[1:]):
        if x == 0:
            if prev == 0:
                raise InvalidTrajectoryError("empty route")
            routes.append(tuple(cur))
            cur, load = [], 0
            continue
        if not 1 <= x <= n or x in seen:
            raise InvalidTrajectoryError(f"invalid or repeated customer {x}")
        load += int(inst.demands[x - 1])
        if load > cap_max:
            raise InvalidTrajectoryError("capacity exceeded")
        seen.add(x)
        cur.append(x)
    if len(seen) != n:
        raise InvalidTrajectoryError("not all customers visited")
    return routes


def canonical_routes(routes) -> tuple[tuple[int, ...], ...]:
    flipped = [r if r[0] < r[-1] else r[::-1] for r in routes]
    return tuple(sorted((tuple(r) for r in flipped), key=lambda r: r[0]))


def canonical_cvrp(inst: ProblemInstance, traj: Trajectory) -> Solution:
    return Solution(Task.CVRP, canonical_routes(split_routes(inst, traj)))


def routes_to_actions(routes) -> tuple[int, ...]:
    out = [0]
    for r in routes:
        out.extend(r)
        out.append(0)
    return tuple(out)


def cvrp_cost(inst: ProblemInstance, sol: Solution) -> float:
    d = inst.distance_matrix()
    total = 0.0
    for r in sol.form:
        path = (0, *r, 0)
        for i in range(len(path) - 1):
            total += float(d[path[i], path[i + 1]])
    return total
