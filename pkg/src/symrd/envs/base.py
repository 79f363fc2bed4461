"""Shared episode types: trajectories, solutions, budget ledger, errors."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from symrd.instances import Task


class InvalidTrajectoryError(ValueError):
    pass


class InfeasibleActionError(InvalidTrajectoryError):
    pass


class TerminalStateError(RuntimeError):
    pass


class InstanceTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class Trajectory:
    """Action sequence that fully determines an episode.

    FFSP trajectories also carry the machine tie-break order they were
    decoded under (a permutation of global machine indices); routing
    trajectories leave it as ``None``.
    """

    task: Task
    actions: tuple[int, ...]
    machine_order: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "task", Task.parse(self.task))
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))
        if self.machine_order is not None:
            object.__setattr__(self, "machine_order", tuple(int(m) for m in self.machine_order))

    def __len__(self) -> int:
        return len(self.actions)


@dataclass(frozen=True)
class Solution:
    """Canonical solution form; equality identifies symmetric trajectories."""

    task: Task
    form: tuple


class StepContext(NamedTuple):
    """What the policy sees at one decoding step, for a batch of episodes.

    Row indices point into the per-instance feature table built by the
    policy; ``-1`` means "none yet" and selects a learned placeholder.
    """

    cand_rows: np.ndarray  # (B, A) int
    last_row: np.ndarray  # (B,) int
    first_row: np.ndarray  # (B,) int
    extras: np.ndarray  # (B, dx)
    edge: np.ndarray  # (B, A, 1)


@dataclass
class BudgetLedger:
    """Monotone counter of reward-function evaluations."""

    calls: int = 0
    events: list = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def charge(self, n: int = 1, step: int | None = None) -> int:
        if n < 0:
            raise ValueError("ledger only increases")
        with self._lock:
            self.calls += n
            if step is not None:
                self.events.append((step, n))
            return self.calls
