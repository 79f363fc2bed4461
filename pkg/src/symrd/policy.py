"""Lightweight autoregressive policy with hand-derived gradients.

Each instance is turned into a table of feature rows (cities, nodes, or
per-stage job rows plus a skip row). Rows are embedded with one tanh layer.
At every decoding step a query is built from the mean embedding, the
embeddings of the last and first actions, and a few scalar extras. The
logit of a candidate action is the scaled dot product of that query with
the candidate's embedding plus a learned weight on one edge feature
(distance from the current city, or processing time on the acting machine).

The critic has its own embedding of the mean feature row and a linear head.

All gradient functions return the gradient of a loss to be minimized.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from symrd.envs import (
    BudgetLedger,
    InvalidTrajectoryError,
    Trajectory,
    episodic_reward,
    make_decoder,
)
from symrd.instances import ProblemInstance, Task

CHECKPOINT_VERSION = 1

# (feature width, number of scalar context extras) per task
TASK_DIMS = {
    Task.TSP: (3, 1),
    Task.ATSP: (4, 1),
    Task.CVRP: (5, 2),
    Task.FFSP: (5, 4),
}


def param_shapes(task: Task, d: int) -> list[tuple[str, tuple[int, ...]]]:
    task = Task.parse(task)
    d_in, dx = TASK_DIMS[task]
    return [
        ("W_e", (d_in, d)),
        ("b_e", (d,)),
        ("u_last", (d,)),
        ("u_first", (d,)),
        ("W_q", (3 * d + dx, d)),
        ("w_edge", (1,)),
        ("C_w", (d_in, d)),
        ("C_b", (d,)),
        ("v_w", (d,)),
        ("v_b", (1,)),
    ]


def n_params(task: Task, d: int) -> int:
    """``d_in*d + 3d + (3d+dx)*d + 1`` for the policy plus ``d_in*d + 2d + 1`` for the critic."""
    return sum(int(np.prod(s)) for _, s in param_shapes(task, d))


CRITIC_NAMES = ("C_w", "C_b", "v_w", "v_b")


@dataclass
class PolicyParams:
    task: Task
    d: int
    flat: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        self.task = Task.parse(self.task)
        self.flat = np.asarray(self.flat, dtype=np.float64)
        if self.flat.shape != (n_params(self.task, self.d),):
            raise ValueError("flat parameter vector has the wrong length")
        self._slices = {}
        off = 0
        for name, shape in param_shapes(self.task, self.d):
            size = int(np.prod(shape))
            self._slices[name] = (slice(off, off + size), shape)
            off += size

    def __getitem__(self, name: str) -> np.ndarray:
        sl, shape = self._slices[name]
        return self.flat[sl].reshape(shape)

    def view(self, flat: np.ndarray, name: str) -> np.ndarray:
        """Slice ``name`` out of any vector laid out like these params."""
        sl, shape = self._slices[name]
        return flat[sl].reshape(shape)

    def slice_of(self, name: str) -> slice:
        return self._slices[name][0]

    def replace(self, flat: np.ndarray) -> "PolicyParams":
        return PolicyParams(self.task, self.d, np.array(flat, dtype=np.float64), self.seed)

    def copy(self) -> "PolicyParams":
        return self.replace(self.flat.copy())

    def __eq__(self, other):
        if not isinstance(other, PolicyParams):
            return NotImplemented
        return (self.task, self.d) == (other.task, other.d) and np.array_equal(self.flat, other.flat)


@dataclass
class GradientBundle:
    loss: float
    grad: np.ndarray

    def __add__(self, other: "GradientBundle") -> "GradientBundle":
        return GradientBundle(self.loss + other.loss, self.grad + other.grad)

    def scale(self, c: float) -> "GradientBundle":
        return GradientBundle(self.loss * c, self.grad * c)


def init_params(task, d: int = 16, seed: int = 0) -> PolicyParams:
    if d < 2:
        raise ValueError("embedding width must be >= 2")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x1417]))
    flat = rng.normal(0.0, 1.0 / np.sqrt(d), size=n_params(task, d))
    return PolicyParams(task, d, flat, seed)


def zero_params(task, d: int = 16) -> PolicyParams:
    """All-zero weights: every feasible action gets the same logit."""
    return PolicyParams(task, d, np.zeros(n_params(task, d)))


# ---------------------------------------------------------------------------
# Features


def features(inst: ProblemInstance) -> np.ndarray:
    cached = inst._cache.get("features")
    if cached is not None:
        return cached
    task = inst.task
    if task is Task.TSP:
        xy = inst.coords
        F = np.column_stack([xy, (xy**2).sum(1)])
    elif task is Task.CVRP:
        xy = inst.coords
        dem = np.concatenate([[0.0], inst.demands / inst.capacity])
        depot = np.zeros(inst.size + 1)
        depot[0] = 1.0
        F = np.column_stack([xy, (xy**2).sum(1), dem, depot])
    elif task is Task.ATSP:
        d = inst.dist
        n = inst.size
        off = d + np.diag(np.full(n, np.inf))
        F = np.column_stack([d.sum(1) / (n - 1), off.min(1), d.sum(0) / (n - 1), off.min(0)])
    else:
        rows = []
        S = inst.n_stages
        mean_p = [p.mean(0) / 10.0 for p in inst.proc]
        for s, p in enumerate(inst.proc):
            later = sum(mean_p[s + 1 :], np.zeros(inst.size))
            block = np.column_stack(
                [p.mean(0) / 10.0, p.min(0) / 10.0, p.max(0) / 10.0, later / max(S - 1, 1), np.zeros(inst.size)]
            )
            rows.append(block)
            rows.append(np.array([[0.0, 0.0, 0.0, 0.0, 1.0]]))
        F = np.vstack(rows)
    F = np.ascontiguousarray(F, dtype=np.float64)
    F.setflags(write=False)
    inst._cache["features"] = F
    return F


# ---------------------------------------------------------------------------
# Batched forward / backward


@dataclass
class _StepCache:
    cand: np.ndarray | None  # None when candidates are rows 0..A-1
    last: np.ndarray
    first: np.ndarray
    c: np.ndarray
    q: np.ndarray
    Ec: np.ndarray
    edge: np.ndarray
    probs: np.ndarray
    action: np.ndarray
    active: np.ndarray


@dataclass
class Rollout:
    trajectories: list[Trajectory]
    logp: np.ndarray
    steps: list[_StepCache] | None
    F: np.ndarray
    E: np.ndarray


def _gather_rows(E: np.ndarray, rows: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    B = E.shape[0]
    out = E[np.arange(B), np.maximum(rows, 0)]
    none = rows < 0
    if none.any():
        out[none] = fallback
    return out


def run_policy(
    params: PolicyParams,
    instances,
    mode: str,
    rng: np.random.Generator | None = None,
    trajectories=None,
    keep_cache: bool = False,
) -> Rollout:
    """Decode a batch with ``mode`` in {"sample", "greedy", "teacher"}.

    Teacher mode scores the given trajectories and raises
    :class:`InvalidTrajectoryError` on any infeasible or missing step.
    Greedy ties go to the lowest action id.
    """
    instances = list(instances)
    task = params.task
    if any(inst.task is not task for inst in instances):
        raise ValueError("instance task does not match the policy")
    B = len(instances)
    orders = None
    if task is Task.FFSP and trajectories is not None:
        orders = [t.machine_order for t in trajectories]
    dec = make_decoder(instances, orders)
    d = params.d
    scale = 1.0 / np.sqrt(d)
    W_e, b_e, W_q = params["W_e"], params["b_e"], params["W_q"]
    u_last, u_first, w_edge = params["u_last"], params["u_first"], params["w_edge"][0]
    F = np.stack([features(inst) for inst in instances])
    E = np.tanh(F @ W_e + b_e)
    m = E.mean(axis=1)
    actions: list[list[int]] = [[] for _ in range(B)]
    logp = np.zeros(B)
    steps: list[_StepCache] | None = [] if keep_cache else None
    if mode == "teacher":
        given = [t.actions for t in trajectories]
    t = 0
    while not dec.done.all():
        active = ~dec.done
        ctx = dec.context()
        mask = dec.mask()
        # routing candidates are rows 0..A-1 in order; FFSP picks one stage block
        Ec = E if task is not Task.FFSP else E[np.arange(B)[:, None], ctx.cand_rows]
        L = _gather_rows(E, ctx.last_row, u_last)
        Fi = _gather_rows(E, ctx.first_row, u_first)
        c = np.concatenate([m, L, Fi, ctx.extras], axis=1)
        q = c @ W_q
        edge = ctx.edge[..., 0]
        logits = np.einsum("bad,bd->ba", Ec, q) * scale + w_edge * edge
        logits = np.where(mask, logits, -np.inf)
        top = logits.max(axis=1, keepdims=True)
        z = np.exp(logits - top)
        probs = z / z.sum(axis=1, keepdims=True)
        log_norm = top[:, 0] + np.log(z.sum(axis=1))
        if mode == "greedy":
            a = np.argmax(np.where(mask, logits, -np.inf), axis=1)
        elif mode == "sample":
            u = rng.random(B)
            cdf = np.cumsum(probs, axis=1)
            a = (cdf < u[:, None] * cdf[:, -1:]).sum(axis=1)
            a = np.minimum(a, probs.shape[1] - 1)
            # guard against landing on a zero-probability slot through rounding
            bad = ~mask[np.arange(B), a]
            if bad.any():
                a[bad] = np.argmax(probs[bad], axis=1)
        else:
            a = np.full(B, dec.pad_action)
            for b in np.nonzero(active)[0]:
                if t >= len(given[b]):
                    raise InvalidTrajectoryError(f"trajectory {b} ends before the episode does")
                a[b] = given[b][t]
            ok = (a >= 0) & (a < mask.shape[1])
            ok[ok] = mask[np.nonzero(ok)[0], a[ok]]
            if not np.all(ok | ~active):
                b = int(np.nonzero(active & ~ok)[0][0])
                raise InvalidTrajectoryError(f"infeasible action {a[b]} at step {t} of trajectory {b}")
        a = np.where(active, a, dec.pad_action)
        chosen = logits[np.arange(B), a] - log_norm
        logp += np.where(active, chosen, 0.0)
        for b in np.nonzero(active)[0]:
            actions[b].append(int(a[b]))
        if keep_cache:
            steps.append(
                _StepCache(
                    None if Ec is E else ctx.cand_rows,
                    ctx.last_row,
                    ctx.first_row,
                    c,
                    q,
                    Ec,
                    edge,
                    probs,
                    a,
                    active,
                )
            )
        dec.step(a)
        t += 1
    if mode == "teacher":
        for b in range(B):
            if len(given[b]) != len(actions[b]):
                raise InvalidTrajectoryError(f"trajectory {b} continues after the episode ends")
    if task is Task.FFSP:
        trajs = [Trajectory(task, actions[b], dec.sims[b].order) for b in range(B)]
    else:
        trajs = [Trajectory(task, actions[b]) for b in range(B)]
    return Rollout(trajs, logp, steps, F, E)


def backward(params: PolicyParams, ro: Rollout, weights) -> np.ndarray:
    """Gradient of ``sum_b weights[b] * (-log pi(tau_b))`` w.r.t. all params."""
    weights = np.asarray(weights, dtype=np.float64)
    d = params.d
    scale = 1.0 / np.sqrt(d)
    W_q = params["W_q"]
    grad = np.zeros_like(params.flat)
    gW_q = params.view(grad, "W_q")
    gu_last = params.view(grad, "u_last")
    gu_first = params.view(grad, "u_first")
    g_edge = 0.0
    E = ro.E
    B, R, _ = E.shape
    dE = np.zeros_like(E)
    dm = np.zeros((B, d))
    bidx = np.arange(B)
    for st in ro.steps:
        A = st.probs.shape[1]
        onehot = np.zeros_like(st.probs)
        onehot[bidx, st.action] = 1.0
        g = (st.probs - onehot) * (weights * st.active)[:, None]
        g_edge += float((g * st.edge).sum())
        dq = np.einsum("ba,bad->bd", g, st.Ec) * scale
        dEc = g[:, :, None] * st.q[:, None, :] * scale
        if st.cand is None:
            dE[:, :A] += dEc
        else:
            np.add.at(dE, (bidx[:, None], st.cand), dEc)
        gW_q += st.c.T @ dq
        dc = dq @ W_q.T
        dm += dc[:, :d]
        for rows, part, gu in ((st.last, dc[:, d : 2 * d], gu_last), (st.first, dc[:, 2 * d : 3 * d], gu_first)):
            has = rows >= 0
            if has.any():
                np.add.at(dE, (bidx[has], rows[has]), part[has])
            if (~has).any():
                gu += part[~has].sum(axis=0)
    dE += dm[:, None, :] / R
    dP = dE * (1.0 - E**2)
    params.view(grad, "W_e")[...] = np.einsum("brk,brd->kd", ro.F, dP)
    params.view(grad, "b_e")[...] = dP.sum(axis=(0, 1))
    params.view(grad, "w_edge")[0] = g_edge
    return grad


# ---------------------------------------------------------------------------
# Single-instance API


def log_probs(params: PolicyParams, instances, trajectories) -> np.ndarray:
    return run_policy(params, instances, "teacher", trajectories=trajectories).logp


def log_prob(params: PolicyParams, inst: ProblemInstance, traj: Trajectory) -> float:
    """Sum over steps of the masked log-softmax probability of each action."""
    return float(log_probs(params, [inst], [traj])[0])


def sample_batch(params: PolicyParams, instances, rng: np.random.Generator) -> Rollout:
    """Sampled rollouts; no reward is evaluated."""
    return run_policy(params, instances, "sample", rng=rng)


def sample_trajectory(params: PolicyParams, inst: ProblemInstance, rng, ledger: BudgetLedger):
    ro = sample_batch(params, [inst], rng)
    traj = ro.trajectories[0]
    return traj, float(ro.logp[0]), episodic_reward(inst, traj, ledger)


def greedy_batch(params: PolicyParams, instances) -> list[Trajectory]:
    return run_policy(params, instances, "greedy").trajectories


def greedy_trajectory(params: PolicyParams, inst: ProblemInstance) -> Trajectory:
    return greedy_batch(params, [inst])[0]


def grad_nll(params: PolicyParams, instances, trajectories, weights) -> GradientBundle:
    """Weighted negative log-likelihood ``-sum_b w_b log pi(tau_b)`` and its gradient."""
    ro = run_policy(params, instances, "teacher", trajectories=trajectories, keep_cache=True)
    weights = np.asarray(weights, dtype=np.float64)
    return GradientBundle(float(-(weights * ro.logp).sum()), backward(params, ro, weights))


def grad_reinforce(params: PolicyParams, inst: ProblemInstance, traj: Trajectory, advantage: float) -> GradientBundle:
    """Gradient of ``-advantage * log pi(traj)`` (advantage held constant)."""
    return grad_nll(params, [inst], [traj], [advantage])


def grad_ssd(params: PolicyParams, inst: ProblemInstance, trajectories) -> GradientBundle:
    """Self-distillation loss ``-sum_i log pi(a^i)`` over L trajectories."""
    trajectories = list(trajectories)
    if not trajectories:
        raise ValueError("need at least one distillation target")
    return grad_nll(params, [inst] * len(trajectories), trajectories, np.ones(len(trajectories)))


def entropy_bonus_term(params: PolicyParams, inst: ProblemInstance, traj: Trajectory) -> GradientBundle:
    """Per-trajectory entropy estimate ``-log pi(traj)`` and its gradient."""
    return grad_nll(params, [inst], [traj], [1.0])


# ---------------------------------------------------------------------------
# Critic


def _critic_forward(params: PolicyParams, instances):
    mF = np.stack([features(inst).mean(axis=0) for inst in instances])
    h = np.tanh(mF @ params["C_w"] + params["C_b"])
    v = h @ params["v_w"] + params["v_b"][0]
    return mF, h, v


def critic_values(params: PolicyParams, instances) -> np.ndarray:
    return _critic_forward(params, list(instances))[2]


def critic_value(params: PolicyParams, inst: ProblemInstance) -> float:
    return float(critic_values(params, [inst])[0])


def grad_critic(params: PolicyParams, instances, targets, weights=None) -> GradientBundle:
    """Squared error ``sum_b w_b (v_b - target_b)^2`` and its gradient."""
    instances = list(instances)
    targets = np.asarray(targets, dtype=np.float64)
    w = np.ones(len(instances)) if weights is None else np.asarray(weights, dtype=np.float64)
    mF, h, v = _critic_forward(params, instances)
    r = v - targets
    dv = 2.0 * w * r
    grad = np.zeros_like(params.flat)
    params.view(grad, "v_w")[...] = dv @ h
    params.view(grad, "v_b")[0] = dv.sum()
    dz = (dv[:, None] * params["v_w"]) * (1.0 - h**2)
    params.view(grad, "C_w")[...] = mF.T @ dz
    params.view(grad, "C_b")[...] = dz.sum(axis=0)
    return GradientBundle(float((w * r**2).sum()), grad)


# ---------------------------------------------------------------------------
# Verification and persistence


def fd_check(params: PolicyParams, loss_closure, h: float = 1e-5, coords=None) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``loss_closure(params)`` returns a :class:`GradientBundle`. The relative
    error denominator is ``max(|analytic|, |numeric|, 1e-8)``.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    analytic = loss_closure(params).grad
    idx = range(params.flat.size) if coords is None else coords
    worst = 0.0
    for i in idx:
        up = params.flat.copy()
        up[i] += h
        dn = params.flat.copy()
        dn[i] -= h
        num = (loss_closure(params.replace(up)).loss - loss_closure(params.replace(dn)).loss) / (2 * h)
        denom = max(abs(analytic[i]), abs(num), 1e-8)
        worst = max(worst, abs(analytic[i] - num) / denom)
    return worst


def save_checkpoint(params: PolicyParams, path) -> None:
    header = {
        "format": "symrd-policy",
        "version": CHECKPOINT_VERSION,
        "task": params.task.value,
        "d": params.d,
        "seed": params.seed,
        "n": int(params.flat.size),
    }
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), flat=params.flat)


def load_checkpoint(path) -> PolicyParams:
    with np.load(Path(path), allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        flat = data["flat"].copy()
    if header.get("format") != "symrd-policy" or header.get("version") != CHECKPOINT_VERSION:
        raise ValueError("unsupported checkpoint format")
    return PolicyParams(Task.parse(header["task"]), int(header["d"]), flat, header.get("seed"))
