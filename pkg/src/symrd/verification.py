"""Property suites behind ``symrd verify`` and the acceptance tests."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from symrd.envs import BudgetLedger, InstanceTooLargeError, Trajectory, solution_of
from symrd.evaluation import entropy_decomposition_exact
from symrd.instances import ProblemInstance, Task, generate
from symrd.policy import (
    entropy_bonus_term,
    fd_check,
    grad_critic,
    grad_reinforce,
    grad_ssd,
    init_params,
    run_policy,
    zero_params,
)
from symrd.symmetry import (
    MAX_ORBIT_JOBS,
    MAX_ORBIT_TOUR,
    enumerate_orbit,
    orbit_size,
    sample_symmetric,
    trajectory_key,
    verify_preserving,
)

# small shop used wherever an FFSP orbit must be enumerated
SMALL_SHOP = {"stages": 2, "machines": 2}
SIGMA_BAND = 5.0


@dataclass
class SuiteResult:
    name: str
    passed: int = 0
    total: int = 0
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.total > 0 and self.passed == self.total

    def record(self, ok: bool, note: str = "") -> None:
        self.total += 1
        self.passed += bool(ok)
        if not ok and note and len(self.notes) < 5:
            self.notes.append(note)

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        extra = f" ({'; '.join(self.notes)})" if self.notes else ""
        return f"{status} {self.name}: {self.passed}/{self.total}{extra}"


def random_instances(task, n: int, count: int, seed: int, **options) -> list[ProblemInstance]:
    return list(generate(task, n, count, seed, **options).instances)


def random_trajectories(insts, rng: np.random.Generator) -> list[Trajectory]:
    """Uniform-at-every-step feasible rollouts (no reward evaluated)."""
    task = insts[0].task
    return run_policy(zero_params(task, 2), insts, "sample", rng=rng).trajectories


def corrupt_transform(inst: ProblemInstance, traj: Trajectory, rng: np.random.Generator) -> Trajectory:
    """Negative control: a symmetric draw with two differing actions swapped."""
    out = list(sample_symmetric(inst, traj, rng).actions)
    pairs = [(i, j) for i in range(len(out)) for j in range(i + 2, len(out)) if out[i] != out[j]]
    if pairs:
        i, j = pairs[int(rng.integers(len(pairs)))]
        out[i], out[j] = out[j], out[i]
    return Trajectory(traj.task, tuple(out), traj.machine_order)


class _NoCharge(BudgetLedger):
    def charge(self, n: int = 1, step=None) -> None:  # pragma: no cover - only fires on a bug
        raise AssertionError("a reward was evaluated")


def suite_preservation(task, N: int, trials: int, seed: int, transform=sample_symmetric) -> SuiteResult:
    res = SuiteResult(f"preservation[{Task.parse(task).value} N={N}]")
    rng = np.random.default_rng(seed)
    insts = random_instances(task, N, trials, seed)
    ledger = BudgetLedger()
    for inst, tr in zip(insts, random_trajectories(insts, rng)):
        before = ledger.calls
        out = transform(inst, tr, rng)
        try:
            ok = verify_preserving(inst, tr, out)
        except Exception as exc:  # an invalid transformed trajectory is a failure
            ok = False
            res.notes.append(type(exc).__name__)
        res.record(ok and ledger.calls == before, f"actions {tr.actions} -> {out.actions}")
    return res


def _orbit_setup(task: Task, N: int):
    if task in (Task.TSP, Task.ATSP):
        return min(N, MAX_ORBIT_TOUR), {}
    if task is Task.CVRP:
        # capacity sized so routes stay few enough to enumerate
        return min(N, 6), {"capacity": 40}
    return min(N, MAX_ORBIT_JOBS - 1), dict(SMALL_SHOP)


def suite_orbits(task, N: int, trials: int, seed: int) -> SuiteResult:
    task = Task.parse(task)
    n, opts = _orbit_setup(task, N)
    res = SuiteResult(f"orbit-structure[{task.value} N={n}]")
    rng = np.random.default_rng(seed)
    insts = random_instances(task, n, trials, seed, **opts)
    for inst, tr in zip(insts, random_trajectories(insts, rng)):
        sol = solution_of(inst, tr)
        try:
            orbit = enumerate_orbit(inst, sol)
        except InstanceTooLargeError:
            res.record(False, "orbit too large to enumerate")
            continue
        keys = [trajectory_key(inst, t) for t in orbit.members]
        ok = len(set(keys)) == len(keys) and len(keys) > 0
        ok &= all(verify_preserving(inst, tr, t) for t in orbit.members)
        ok &= trajectory_key(inst, tr) in set(keys)
        if task is not Task.FFSP:
            ok &= len(orbit) == orbit_size(inst, sol)
        res.record(ok, f"|orbit|={len(orbit)}")
    return res


def binomial_band_ok(counts: Counter, members, draws: int, sigmas: float = SIGMA_BAND) -> bool:
    m = len(members)
    p = 1.0 / m
    half = sigmas * math.sqrt(draws * p * (1 - p))
    if set(counts) - set(members):
        return False
    return all(abs(counts.get(k, 0) - draws * p) <= half for k in members)


def suite_uniformity(task, N: int, trials: int, seed: int, per_member: int = 20) -> SuiteResult:
    task = Task.parse(task)
    n, opts = _orbit_setup(task, N)
    n = min(n, 6) if task in (Task.TSP, Task.ATSP) else n
    res = SuiteResult(f"uniform-p_sym[{task.value} N={n}]")
    rng = np.random.default_rng(seed)
    insts = random_instances(task, n, trials, seed, **opts)
    for inst, tr in zip(insts, random_trajectories(insts, rng)):
        orbit = enumerate_orbit(inst, solution_of(inst, tr))
        members = [trajectory_key(inst, t) for t in orbit.members]
        draws = per_member * len(members)
        counts = Counter(trajectory_key(inst, sample_symmetric(inst, tr, rng)) for _ in range(draws))
        res.record(binomial_band_ok(counts, members, draws), f"|orbit|={len(members)}")
    return res


GRAD_LOSSES = ("reinforce", "ssd", "entropy", "critic")


def gradient_closure(kind: str, inst, trajs, rng: np.random.Generator):
    if kind == "reinforce":
        adv = float(rng.normal())
        return lambda p: grad_reinforce(p, inst, trajs[0], adv)
    if kind == "ssd":
        return lambda p: grad_ssd(p, inst, trajs)
    if kind == "entropy":
        return lambda p: entropy_bonus_term(p, inst, trajs[0])
    if kind == "critic":
        target = float(rng.normal(-3.0, 1.0))
        return lambda p: grad_critic(p, [inst], [target])
    raise KeyError(kind)


def suite_gradients(task, N: int, trials: int, seed: int, d: int = 6, tol: float = 1e-4, h: float = 1e-5):
    task = Task.parse(task)
    n = min(N, 6)
    out = []
    rng = np.random.default_rng(seed)
    for kind in GRAD_LOSSES:
        res = SuiteResult(f"gradient-{kind}[{task.value} N={n}]")
        for t in range(trials):
            inst = generate(task, n, 1, seed + 7919 * t)[0]
            params = init_params(task, d, seed + t)
            trajs = run_policy(params, [inst, inst], "sample", rng=rng).trajectories
            err = fd_check(params, gradient_closure(kind, inst, trajs, rng), h)
            res.record(err < tol, f"rel err {err:.2e}")
        out.append(res)
    return out


def suite_entropy(task, N: int, trials: int, seed: int, tol: float = 1e-8) -> SuiteResult:
    task = Task.parse(task)
    n = min(N, 6)
    res = SuiteResult(f"entropy-identity[{task.value} N={n}]")
    if task not in (Task.TSP, Task.ATSP):
        res.notes.append("skipped: exact enumeration is for tour tasks")
        return res
    for t in range(trials):
        inst = generate(task, n, 1, seed + t)[0]
        params = init_params(task, 6, seed + t)
        e = entropy_decomposition_exact(params, inst)
        ok = abs(e.H_traj - (e.H_sol + e.E_cond)) <= tol and e.H_traj <= e.H_uniform_bound + tol
        res.record(ok, f"H={e.H_traj:.6f}")
    return res


def run_all(task, N: int, trials: int, seed: int, transform=sample_symmetric, grad_trials: int | None = None):
    if trials < 1:
        raise ValueError("trials must be >= 1")
    task = Task.parse(task)
    results = [
        suite_preservation(task, N, trials, seed, transform),
        suite_orbits(task, N, trials, seed),
        suite_uniformity(task, N, max(1, min(trials, 10)), seed),
    ]
    results += suite_gradients(task, N, grad_trials or max(1, min(trials, 3)), seed)
    ent = suite_entropy(task, N, max(1, min(trials, 5)), seed)
    if ent.total:
        results.append(ent)
    return results
