"""Flexible flow shop decoding.

Machines are numbered globally, stage-major. At each event time every idle
machine gets one turn, in the order given by the trajectory's machine
order: it starts an available job or skips. A machine with nothing to
start is passed over without an action. Once every machine has had its
turn, time jumps to the next completion event.

Skipping is refused when it could stall the shop: no machine is busy and
no machine later in the current round has a job it could start.
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


class FFSPSim:
    """Single-instance FFSP episode state."""

    def __init__(self, inst: ProblemInstance, order=None):
        self.inst = inst
        self.N = inst.size
        self.S = inst.n_stages
        self.stage_of: list[int] = []
        self.local: list[int] = []
        for s, m in enumerate(inst.machines_per_stage):
            self.stage_of.extend([s] * m)
            self.local.extend(range(m))
        self.G = len(self.stage_of)
        if order is None:
            order = tuple(range(self.G))
        order = tuple(int(g) for g in order)
        if sorted(order) != list(range(self.G)):
            raise InvalidTrajectoryError("machine order must permute all machines")
        self.order = order
        self.time = 0
        self.cursor = 0
        self.ready = [0] * self.G
        self.assigned = np.zeros((self.S, self.N), dtype=bool)
        big = np.iinfo(np.int64).max
        self.job_ready = np.full((self.S, self.N), big, dtype=np.int64)
        self.job_ready[0] = 0
        self.completion = np.zeros((self.S, self.N), dtype=np.int64)
        self.last_job = [-1] * self.G
        self.schedule: list[list[tuple[int, int]]] = [[] for _ in range(self.G)]
        self.trace: list[int] = []
        self.remaining = self.S * self.N
        self.done = False
        self._advance()

    def copy(self) -> "FFSPSim":
        new = object.__new__(FFSPSim)
        new.__dict__.update(self.__dict__)
        new.ready = list(self.ready)
        new.assigned = self.assigned.copy()
        new.job_ready = self.job_ready.copy()
        new.completion = self.completion.copy()
        new.last_job = list(self.last_job)
        new.schedule = [list(x) for x in self.schedule]
        new.trace = list(self.trace)
        return new

    def key(self) -> tuple:
        """Hashable summary of everything that affects future decisions."""
        return (
            self.time,
            self.cursor,
            tuple(self.ready),
            self.assigned.tobytes(),
            self.job_ready.tobytes(),
        )

    def _jobs_for(self, g: int) -> np.ndarray:
        s = self.stage_of[g]
        return ~self.assigned[s] & (self.job_ready[s] <= self.time)

    def _advance(self) -> None:
        while not self.done:
            while self.cursor < self.G:
                g = self.order[self.cursor]
                if self.ready[g] <= self.time and self._jobs_for(g).any():
                    return
                self.cursor += 1
            later = [r for r in self.ready if r > self.time]
            if not later:
                raise RuntimeError("flow shop stalled")  # excluded by the skip rule
            self.time = min(later)
            self.cursor = 0

    @property
    def machine(self) -> int:
        return self.order[self.cursor]

    def skip_allowed(self) -> bool:
        if any(r > self.time for r in self.ready):
            return True
        for pos in range(self.cursor + 1, self.G):
            g = self.order[pos]
            if self.ready[g] <= self.time and self._jobs_for(g).any():
                return True
        return False

    def mask(self) -> np.ndarray:
        m = np.zeros(self.N + 1, dtype=bool)
        m[: self.N] = self._jobs_for(self.machine)
        m[self.N] = self.skip_allowed()
        return m

    def proc_time(self, g: int, job: int) -> int:
        return int(self.inst.proc[self.stage_of[g]][self.local[g], job])

    def step(self, a: int) -> None:
        if self.done:
            raise InfeasibleActionError("episode already finished")
        g = self.machine
        self.trace.append(g)
        if a == self.N:
            if not self.skip_allowed():
                raise InfeasibleActionError("skip would stall the shop")
        else:
            if not 0 <= a < self.N or not self._jobs_for(g)[a]:
                raise InfeasibleActionError(f"job {a} not available to machine {g}")
            s = self.stage_of[g]
            end = self.time + self.proc_time(g, a)
            self.ready[g] = end
            self.assigned[s, a] = True
            self.completion[s, a] = end
            if s + 1 < self.S:
                self.job_ready[s + 1, a] = end
            self.last_job[g] = a
            self.schedule[g].append((a, self.time))
            self.remaining -= 1
            if self.remaining == 0:
                self.done = True
                return
        self.cursor += 1
        self._advance()

    def makespan(self) -> int:
        return int(self.completion[self.S - 1].max())


class FFSPDecoder:
    """Batch wrapper over independent :class:`FFSPSim` episodes."""

    def __init__(self, instances: list[ProblemInstance], orders=None):
        self.B = len(instances)
        self.n = instances[0].size
        self.n_actions = self.n + 1
        self.pad_action = self.n
        if orders is None:
            orders = [None] * self.B
        self.sims = [FFSPSim(inst, o) for inst, o in zip(instances, orders)]
        self.done = np.array([s.done for s in self.sims], dtype=bool)
        self._scale = 10.0 * self.n

    def mask(self) -> np.ndarray:
        m = np.zeros((self.B, self.n_actions), dtype=bool)
        for b, sim in enumerate(self.sims):
            if sim.done:
                m[b, self.pad_action] = True
            else:
                m[b] = sim.mask()
        return m

    def context(self) -> StepContext:
        B, A, N = self.B, self.n_actions, self.n
        cand = np.zeros((B, A), dtype=np.int64)
        last = np.full(B, -1)
        extras = np.zeros((B, 4))
        edge = np.zeros((B, A, 1))
        base = np.arange(A)
        for b, sim in enumerate(self.sims):
            if sim.done:
                cand[b] = base
                continue
            g = sim.machine
            s = sim.stage_of[g]
            cand[b] = s * A + base
            if sim.last_job[g] >= 0:
                last[b] = s * A + sim.last_job[g]
            M = sim.inst.machines_per_stage[s]
            extras[b] = (
                s / sim.S,
                sim.local[g] / M,
                sim.time / self._scale,
                sim.assigned[s].mean(),
            )
            edge[b, :N, 0] = sim.inst.proc[s][sim.local[g]] / 10.0
        return StepContext(cand, last, np.full(B, -1), extras, edge)

    def step(self, actions) -> None:
        for b, sim in enumerate(self.sims):
            if not sim.done:
                sim.step(int(actions[b]))
        self.done = np.array([s.done for s in self.sims], dtype=bool)


def replay(inst: ProblemInstance, traj: Trajectory) -> FFSPSim:
    sim = FFSPSim(inst, traj.machine_order)
    for i, a in enumerate(traj.actions):
        if sim.done:
            raise InvalidTrajectoryError(f"trajectory continues after termination at step {i}")
        sim.step(a)
    if not sim.done:
        raise InvalidTrajectoryError("trajectory ends before all jobs are scheduled")
    return sim


def schedule_form(sim: FFSPSim) -> tuple:
    return tuple(tuple(x) for x in sim.schedule)


def canonical_ffsp(inst: ProblemInstance, traj: Trajectory) -> Solution:
    return Solution(Task.FFSP, schedule_form(replay(inst, traj)))


def ffsp_cost(inst: ProblemInstance, sol: Solution) -> float:
    stage_of: list[int] = []
    local: list[int] = []
    for s, m in enumerate(inst.machines_per_stage):
        stage_of.extend([s] * m)
        local.extend(range(m))
    last_stage = inst.n_stages - 1
    end = 0
    for g, jobs in enumerate(sol.form):
        if stage_of[g] != last_stage:
            continue
        for job, start in jobs:
            end = max(end, start + int(inst.proc[last_stage][local[g], job]))
    return float(end)


def decisions(inst: ProblemInstance, traj: Trajectory) -> tuple[tuple[int, int], ...]:
    """(acting machine, action) pairs; equal pairs mean an identical episode."""
    sim = replay(inst, traj)
    return tuple(zip(sim.trace, traj.actions))


def replay_schedule(inst: ProblemInstance, schedule: tuple, order) -> Trajectory:
    """Decode a fixed schedule under another machine order.

    Each machine, on its turn, starts the next job of its own schedule if
    that job starts now and skips otherwise. Returns the resulting
    action sequence.
    """
    sim = FFSPSim(inst, order)
    ptr = [0] * sim.G
    actions: list[int] = []
    while not sim.done:
        g = sim.machine
        jobs = schedule[g]
        if ptr[g] < len(jobs) and jobs[ptr[g]][1] == sim.time:
            a = jobs[ptr[g]][0]
            ptr[g] += 1
        else:
            a = sim.N
        sim.step(a)
        actions.append(a)
    if schedule_form(sim) != tuple(schedule):
        raise InvalidTrajectoryError("schedule is not reproducible under this machine order")
    return Trajectory(Task.FFSP, tuple(actions), sim.order)
