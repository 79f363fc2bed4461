"""Metrics that never charge a training budget ledger."""

from __future__ import annotations

import heapq
import itertools
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from symrd.envs import InstanceTooLargeError, Trajectory, brute_force_best, solution_of, trajectory_cost
from symrd.instances import ProblemInstance, Task
from symrd.policy import PolicyParams, greedy_batch, log_probs
from symrd.symmetry import apply_transform, identity_spec, orbit_size, sample_symmetric

MAX_ENTROPY_N = 7


@dataclass(frozen=True)
class MetricRecord:
    name: str
    K: int
    value: float
    count: int
    seed: int | None = None

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"metric {self.name} is not finite")


def _instances(data) -> list[ProblemInstance]:
    return list(getattr(data, "instances", data))


def greedy_costs(params: PolicyParams, data) -> np.ndarray:
    insts = _instances(data)
    if not insts:
        raise ValueError("empty dataset")
    trajs = greedy_batch(params, insts)
    return np.array([trajectory_cost(inst, tr) for inst, tr in zip(insts, trajs)])


def validate_cost(params: PolicyParams, data) -> float:
    """Mean greedy-rollout cost over a dataset."""
    return float(greedy_costs(params, data).mean())


def l1_symmetry_gap(
    params: PolicyParams,
    data,
    samples_per_instance: int = 10,
    rng: np.random.Generator | None = None,
    transform: str = "uniform",
) -> float:
    """Mean ``|log pi(tau) - log pi(tau_sym)|`` with tau the greedy rollout."""
    if samples_per_instance < 1:
        raise ValueError("need at least one draw per instance")
    rng = np.random.default_rng(0) if rng is None else rng
    insts = _instances(data)
    base = greedy_batch(params, insts)
    lp_base = log_probs(params, insts, base)
    rep_insts, rep_trajs, owner = [], [], []
    for b, (inst, tr) in enumerate(zip(insts, base)):
        for _ in range(samples_per_instance):
            if transform == "identity":
                sym = apply_transform(inst, tr, identity_spec(inst, tr))
            else:
                sym = sample_symmetric(inst, tr, rng)
            rep_insts.append(inst)
            rep_trajs.append(sym)
            owner.append(b)
    lp_sym = log_probs(params, rep_insts, rep_trajs)
    return float(np.abs(lp_base[owner] - lp_sym).mean())


@dataclass(frozen=True)
class EntropyDecomposition:
    H_traj: float
    H_sol: float
    E_cond: float
    H_uniform_bound: float


def _all_trajectories(inst: ProblemInstance) -> list[Trajectory]:
    return [Trajectory(inst.task, p) for p in itertools.permutations(range(inst.size))]


def _plogp(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def entropy_decomposition_exact(params: PolicyParams, inst: ProblemInstance) -> EntropyDecomposition:
    """Trajectory entropy split into solution entropy and orbit entropy.

    Enumerates every trajectory, so only tour tasks with small N qualify.
    """
    if inst.task not in (Task.TSP, Task.ATSP):
        raise ValueError("exact entropy enumeration supports TSP and ATSP")
    if inst.size > MAX_ENTROPY_N:
        raise InstanceTooLargeError(f"entropy enumeration limited to N <= {MAX_ENTROPY_N}")
    trajs = _all_trajectories(inst)
    lp = log_probs(params, [inst] * len(trajs), trajs)
    p = np.exp(lp)
    groups: dict = defaultdict(list)
    for i, tr in enumerate(trajs):
        groups[solution_of(inst, tr)].append(i)
    H_traj = float(-(p * lp).sum())
    p_sol = np.array([p[idx].sum() for idx in groups.values()])
    H_sol = _plogp(p_sol)
    E_cond = 0.0
    E_log_orbit = 0.0
    for (sol, idx), px in zip(groups.items(), p_sol):
        if px <= 0:
            continue
        cond = p[idx] / px
        E_cond += px * _plogp(cond)
        E_log_orbit += px * math.log(orbit_size(inst, sol))
    return EntropyDecomposition(H_traj, H_sol, float(E_cond), H_sol + E_log_orbit)


class TopK:
    """Best ``k`` rewards over distinct keys (for example canonical solutions)."""

    def __init__(self, k: int):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = k
        self._heap: list[tuple[float, int]] = []
        self._keys: dict = {}
        self._counter = itertools.count()

    def offer(self, reward: float, key) -> None:
        if key in self._keys:
            return
        if len(self._heap) < self.k:
            tag = next(self._counter)
            heapq.heappush(self._heap, (reward, tag))
            self._keys[key] = tag
        elif reward > self._heap[0][0]:
            tag = next(self._counter)
            heapq.heapreplace(self._heap, (reward, tag))
            self._keys[key] = tag

    def mean(self) -> float:
        return float(np.mean([r for r, _ in self._heap])) if self._heap else float("nan")


def auc_topk(history, K_max: float, k: int = 10, reward_range: tuple[float, float] | None = None) -> float:
    """Normalized area under a top-k curve over ``[0, K_max]``.

    ``history`` holds ``(K, value)`` pairs. A value is either the running
    top-k mean already or the list of rewards seen so far, in which case the
    mean of its ``k`` largest entries is used. The curve is held flat before
    its first point and after its last. With ``reward_range=(lo, hi)`` values
    are mapped through ``(v - lo) / (hi - lo)`` first.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not history:
        raise ValueError("empty history")
    if K_max <= 0:
        raise ValueError("K_max must be positive")
    pts = []
    for K, v in history:
        if np.ndim(v):
            v = float(np.mean(sorted(v, reverse=True)[:k]))
        if reward_range is not None:
            lo, hi = reward_range
            v = (v - lo) / (hi - lo)
        pts.append((float(K), float(v)))
    pts.sort(key=lambda t: t[0])
    Ks = np.array([0.0] + [K for K, _ in pts] + [float(K_max)])
    vs = np.array([pts[0][1]] + [v for _, v in pts] + [pts[-1][1]])
    keep = Ks <= K_max
    Ks, vs = Ks[keep], vs[keep]
    if Ks[-1] < K_max:
        Ks = np.append(Ks, K_max)
        vs = np.append(vs, vs[-1])
    area = float(np.sum((Ks[1:] - Ks[:-1]) * (vs[1:] + vs[:-1]) / 2.0))
    return area / K_max


def optimality_gap(params: PolicyParams, data, optimal_costs=None) -> float:
    """Mean relative excess of greedy cost over the exact optimum."""
    insts = _instances(data)
    costs = greedy_costs(params, insts)
    if optimal_costs is None:
        optimal_costs = [brute_force_best(inst)[1] for inst in insts]
    opt = np.asarray(optimal_costs, dtype=float)
    return float(((costs - opt) / opt).mean())
