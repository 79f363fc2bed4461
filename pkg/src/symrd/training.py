"""Budget-metered training: RL updates, symmetric self-distillation, baselines.

Every reward evaluation goes through :func:`symrd.envs.episodic_reward` and
is counted by the run's :class:`BudgetLedger`. Distillation, greedy rollouts
and validation never evaluate a reward on that ledger.
"""

from __future__ import annotations

import math
import time
import zlib
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from symrd import evaluation
from symrd.envs import BudgetLedger, episodic_reward, solution_of
from symrd.instances import Dataset, Task, generate, min_size, sample_instance
from symrd.policy import (
    CRITIC_NAMES,
    GradientBundle,
    PolicyParams,
    backward,
    critic_values,
    grad_critic,
    greedy_batch,
    init_params,
    run_policy,
)
from symrd.symmetry import identity_spec, apply_transform, sample_symmetric

METHODS = ("symrd", "rl_only", "maxent", "multistart", "nonsym_distill")
TRANSFORMS = ("uniform", "identity")
TARGETS = ("greedy", "best_sample")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    task: str = "TSP"
    N: int = 20
    method: str = "symrd"
    batch_size: int = 100
    K_max: int = 50_000
    distill_scaler: float | None = None  # None picks the per-task default
    L: int = 1
    distill_period: int = 1
    transform: str = "uniform"
    distill_target: str = "greedy"
    lr: float = 0.005
    critic_lr: float = 0.05
    momentum: float = 0.0
    max_grad_norm: float = 1.0  # 0 disables clipping of the policy gradient
    milestones: tuple[float, ...] = (0.5, 0.75)
    gamma: float = 0.1
    alpha: float = 0.01
    multistart: int = 4
    d: int = 16
    seed: int = 0
    val_count: int = 100
    val_seed: int = 1234
    l1_samples: int = 10
    l1_instances: int = 20

    def __post_init__(self):
        self.task = Task.parse(self.task).value
        if self.distill_scaler is None:
            self.distill_scaler = 0.01 if self.task == "FFSP" else 0.001
        self.milestones = tuple(float(m) for m in self.milestones)
        self.validate()

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.transform not in TRANSFORMS:
            raise ConfigError(f"unknown transform {self.transform!r}")
        if self.distill_target not in TARGETS:
            raise ConfigError(f"unknown distill_target {self.distill_target!r}")
        if self.N < min_size(Task.parse(self.task)):
            raise ConfigError(f"N={self.N} is too small for {self.task}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.K_max < self.batch_size:
            raise ConfigError("K_max must be >= batch_size")
        if self.distill_scaler < 0:
            raise ConfigError("distill_scaler must be >= 0")
        if self.L < 1 or self.distill_period < 1:
            raise ConfigError("L and distill_period must be >= 1")
        if self.lr < 0 or self.critic_lr < 0 or self.max_grad_norm < 0 or not 0 <= self.momentum < 1:
            raise ConfigError("learning rates must be >= 0 and momentum in [0, 1)")
        if any(not 0 < m <= 1 for m in self.milestones) or list(self.milestones) != sorted(self.milestones):
            raise ConfigError("milestones must be increasing fractions in (0, 1]")
        if self.alpha < 0 or self.multistart < 1 or self.d < 2:
            raise ConfigError("alpha >= 0, multistart >= 1 and d >= 2 are required")
        if self.val_count < 1 or self.l1_samples < 0 or self.l1_instances < 0:
            raise ConfigError("validation sizes must be positive")

    @property
    def samples_per_instance(self) -> int:
        return self.multistart if self.method == "multistart" else 1

    @property
    def grid(self) -> int:
        return max(self.K_max // 50, self.batch_size * self.samples_per_instance)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["milestones"] = list(self.milestones)
        return out

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


# ---------------------------------------------------------------------------
# Randomness

STREAMS = ("data", "rollout", "transform", "init", "eval")


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named purpose of a run."""
    if name not in STREAMS:
        raise KeyError(name)
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), zlib.crc32(name.encode())]))


# ---------------------------------------------------------------------------
# Optimizer


@dataclass
class SGD:
    """Plain or heavy-ball SGD shared by the RL and distillation updates."""

    momentum: float = 0.0
    velocity: np.ndarray | None = None

    def step(self, params: PolicyParams, grad: np.ndarray, lr) -> PolicyParams:
        step = lr * grad
        if self.momentum:
            self.velocity = step if self.velocity is None else self.momentum * self.velocity + step
            step = self.velocity
        return params.replace(params.flat - step)


def lr_factor(K: int, config: TrainConfig) -> float:
    """MultiStep decay: ``gamma`` per milestone fraction of ``K_max`` passed."""
    passed = sum(1 for m in config.milestones if K >= m * config.K_max)
    return config.gamma**passed


def _critic_mask(params: PolicyParams) -> np.ndarray:
    mask = np.zeros(params.flat.size, dtype=bool)
    for name in CRITIC_NAMES:
        mask[params.slice_of(name)] = True
    return mask


def clip_policy_grad(params: PolicyParams, grad: np.ndarray, max_norm: float) -> np.ndarray:
    """Rescale the policy (non-critic) part of ``grad`` to norm <= ``max_norm``."""
    if not max_norm:
        return grad
    actor = ~_critic_mask(params)
    norm = float(np.linalg.norm(grad[actor]))
    if norm <= max_norm:
        return grad
    out = grad.copy()
    out[actor] *= max_norm / norm
    return out


# ---------------------------------------------------------------------------
# Steps


@dataclass
class StepStats:
    calls: int = 0
    mean_reward: float = float("nan")
    loss: float = float("nan")
    best: list = field(default_factory=list)  # (reward, trajectory, instance index)


def rl_step(
    params: PolicyParams,
    instances,
    config: TrainConfig,
    ledger: BudgetLedger,
    rng: np.random.Generator,
    optimizer: SGD | None = None,
    factor: float = 1.0,
) -> tuple[PolicyParams, StepStats]:
    """One REINFORCE update with the baseline implied by ``config.method``."""
    instances = list(instances)
    if not instances:
        raise ValueError("empty batch")
    P = config.samples_per_instance
    batch = [inst for inst in instances for _ in range(P)]
    ro = run_policy(params, batch, "sample", rng=rng, keep_cache=True)
    rewards = np.array([episodic_reward(inst, tr, ledger) for inst, tr in zip(batch, ro.trajectories)])
    n = len(batch)
    if config.method == "multistart":
        baseline = np.repeat(rewards.reshape(-1, P).mean(axis=1), P)
        critic = None
    else:
        baseline = critic_values(params, instances)
        critic = grad_critic(params, instances, rewards, np.full(n, 1.0 / n))
    adv = rewards - baseline
    if config.method == "maxent":
        adv = adv + config.alpha * (-ro.logp)
    # minimizing -mean(adv * log pi)
    pg = clip_policy_grad(params, backward(params, ro, adv / n), config.max_grad_norm)
    loss = float(-(adv * ro.logp).mean())
    lr = np.where(_critic_mask(params), config.critic_lr, config.lr) * factor
    grad = pg if critic is None else pg + critic.grad
    new = (optimizer or SGD()).step(params, grad, lr)
    stats = StepStats(n, float(rewards.mean()), loss + (critic.loss if critic else 0.0))
    stats.best = [(float(r), t, i // P) for i, (r, t) in enumerate(zip(rewards, ro.trajectories))]
    return new, stats


def distill_targets(params: PolicyParams, instances, transform: str, L: int, rng, base=None):
    """Greedy rollouts (or given base trajectories) and L transforms of each."""
    instances = list(instances)
    base = greedy_batch(params, instances) if base is None else list(base)
    insts, trajs = [], []
    for inst, tr in zip(instances, base):
        for _ in range(L):
            t = sample_symmetric(inst, tr, rng) if transform == "uniform" else apply_transform(
                inst, tr, identity_spec(inst, tr)
            )
            insts.append(inst)
            trajs.append(t)
    return insts, trajs


def ssd_loss(params: PolicyParams, instances, trajectories, lam: float, per: int) -> GradientBundle:
    """``lam * L_SSD`` averaged over the distinct instances of the batch."""
    ro = run_policy(params, instances, "teacher", trajectories=trajectories, keep_cache=True)
    n_inst = len(instances) // per
    w = np.full(len(instances), lam / n_inst)
    return GradientBundle(float(-(w * ro.logp).sum()), backward(params, ro, w))


def ssd_step(
    params: PolicyParams,
    instances,
    lam: float,
    L: int,
    rng: np.random.Generator,
    ledger: BudgetLedger,
    lr: float,
    transform: str = "uniform",
    base=None,
    optimizer: SGD | None = None,
    max_grad_norm: float = 0.0,
) -> tuple[PolicyParams, StepStats]:
    """One gradient step on ``lam * L_SSD``. ``ledger`` is never charged."""
    before = ledger.calls
    insts, trajs = distill_targets(params, instances, transform, L, rng, base)
    bundle = ssd_loss(params, insts, trajs, lam, L)
    grad = clip_policy_grad(params, bundle.grad, max_grad_norm)
    new = (optimizer or SGD()).step(params, grad, lr) if lam > 0 else params
    assert ledger.calls == before
    raw = bundle.loss / lam if lam > 0 else float(
        -run_policy(params, insts, "teacher", trajectories=trajs).logp.sum() / len(instances)
    )
    return new, StepStats(0, float("nan"), raw)


def nonsym_distill_step(params, instances, lam, L, rng, ledger, lr, base=None, optimizer=None, max_grad_norm=0.0):
    """Self-distillation on the untransformed greedy trajectory."""
    return ssd_step(params, instances, lam, L, rng, ledger, lr, "identity", base, optimizer, max_grad_norm)


# ---------------------------------------------------------------------------
# Training loop


@dataclass
class HistoryRecord:
    K: int
    rl_steps: int
    ssd_steps: int
    val_cost: float
    train_mean_reward: float
    ssd_loss: float
    l1_gap: float
    wall_ms: float


@dataclass
class TrainHistory:
    config: TrainConfig
    records: list[HistoryRecord] = field(default_factory=list)
    ledger_events: list = field(default_factory=list)
    topk: list = field(default_factory=list)  # (K, mean of best-k distinct rewards)

    @property
    def K(self) -> list[int]:
        return [r.K for r in self.records]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def same_values(self, other: "TrainHistory") -> bool:
        """Equality ignoring wall-clock time."""
        strip = lambda h: [{k: v for k, v in asdict(r).items() if k != "wall_ms"} for r in h.records]
        a, b = strip(self), strip(other)
        return len(a) == len(b) and all(
            all(x[k] == y[k] or (isinstance(x[k], float) and math.isnan(x[k]) and math.isnan(y[k])) for k in x)
            for x, y in zip(a, b)
        )


@dataclass
class TrainResult:
    params: PolicyParams
    history: TrainHistory
    ledger: BudgetLedger


def validation_set(config: TrainConfig) -> Dataset:
    return generate(config.task, config.N, config.val_count, config.val_seed)


def train(config: TrainConfig, val: Dataset | None = None, topk: int = 10, on_record=None) -> TrainResult:
    """Run ``config.method`` until the ledger reaches ``K_max`` reward calls."""
    config.validate()
    task = Task.parse(config.task)
    if val is None:
        val = validation_set(config)
    if val.task is not task:
        raise ConfigError("validation set task does not match the config")
    data_rng = substream(config.seed, "data")
    roll_rng = substream(config.seed, "rollout")
    sym_rng = substream(config.seed, "transform")
    eval_rng = substream(config.seed, "eval")
    params = init_params(task, config.d, config.seed)
    ledger = BudgetLedger()
    optimizer = SGD(config.momentum)
    history = TrainHistory(config)
    distills = config.method in ("symrd", "nonsym_distill")
    transform = "identity" if config.method == "nonsym_distill" else config.transform
    l1_set = list(val.instances[: config.l1_instances])
    rl_steps = ssd_steps = 0
    next_grid = config.grid
    rewards_since: list[float] = []
    last_ssd = float("nan")
    top = evaluation.TopK(topk) if topk else None
    start = time.perf_counter()
    while ledger.calls < config.K_max:
        factor = lr_factor(ledger.calls, config)
        batch = [sample_instance(task, config.N, data_rng) for _ in range(config.batch_size)]
        params, stats = rl_step(params, batch, config, ledger, roll_rng, optimizer, factor)
        rl_steps += 1
        history.ledger_events.append((rl_steps, ledger.calls))
        rewards_since.append(stats.mean_reward)
        base = None
        if config.distill_target == "best_sample":
            base = _best_per_instance(stats.best, len(batch))
        if topk:
            for r, tr, i in stats.best:
                top.offer(r, (rl_steps, i, solution_of(batch[i], tr)))
            history.topk.append((ledger.calls, top.mean()))
        if distills and rl_steps % config.distill_period == 0:
            params, sstats = ssd_step(
                params,
                batch,
                config.distill_scaler,
                config.L,
                sym_rng,
                ledger,
                config.lr * factor,
                transform,
                base,
                optimizer,
                config.max_grad_norm,
            )
            ssd_steps += 1
            last_ssd = sstats.loss
        if ledger.calls >= next_grid or ledger.calls >= config.K_max:
            rec = HistoryRecord(
                K=ledger.calls,
                rl_steps=rl_steps,
                ssd_steps=ssd_steps,
                val_cost=evaluation.validate_cost(params, val),
                train_mean_reward=float(np.mean(rewards_since)),
                ssd_loss=last_ssd,
                l1_gap=(
                    evaluation.l1_symmetry_gap(params, l1_set, config.l1_samples, eval_rng)
                    if config.l1_samples and l1_set
                    else float("nan")
                ),
                wall_ms=(time.perf_counter() - start) * 1000.0,
            )
            history.records.append(rec)
            if on_record is not None:
                on_record(rec, params)
            rewards_since = []
            while next_grid <= ledger.calls:
                next_grid += config.grid
    return TrainResult(params, history, ledger)


def _best_per_instance(samples, n: int):
    out = [None] * n
    score = [-math.inf] * n
    for r, tr, i in samples:
        if r > score[i]:
            score[i], out[i] = r, tr
    return out
