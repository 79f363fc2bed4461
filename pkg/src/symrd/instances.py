"""Problem instances and fixed datasets for TSP, ATSP, CVRP and FFSP.

Datasets are stored as line-based JSON: one header line followed by one
line per instance. Floats are written with ``repr`` precision so a
save/load round trip is bit-exact.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1

# Capacity table from the attention-model data convention.
CVRP_CAPACITY = {10: 20, 20: 30, 50: 40, 100: 50}

FFSP_STAGES = 3
FFSP_MACHINES = 4
FFSP_PROC_RANGE = (2, 9)


class Task(str, Enum):
    TSP = "TSP"
    ATSP = "ATSP"
    CVRP = "CVRP"
    FFSP = "FFSP"

    @classmethod
    def parse(cls, value) -> "Task":
        if isinstance(value, Task):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValueError(f"unknown task {value!r}") from None


class InvalidSizeError(ValueError):
    pass


class DatasetFormatError(ValueError):
    pass


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def default_capacity(n: int) -> int:
    """Vehicle capacity for ``n`` customers (nearest tabulated size below)."""
    keys = [k for k in sorted(CVRP_CAPACITY) if k <= n]
    return CVRP_CAPACITY[keys[-1]] if keys else CVRP_CAPACITY[10]


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """Immutable problem data.

    ``size`` counts cities (TSP/ATSP), customers (CVRP; the depot is extra,
    at coordinate index 0) or jobs (FFSP). ``proc`` holds one
    ``(machines, jobs)`` integer matrix per stage.
    """

    task: Task
    size: int
    coords: np.ndarray | None = None
    dist: np.ndarray | None = None
    demands: np.ndarray | None = None
    capacity: int | None = None
    proc: tuple[np.ndarray, ...] | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        task = Task.parse(self.task)
        object.__setattr__(self, "task", task)
        n = int(self.size)
        if n < 1:
            raise InvalidSizeError("size must be positive")
        object.__setattr__(self, "size", n)
        if task in (Task.TSP, Task.CVRP):
            npts = n + 1 if task is Task.CVRP else n
            coords = _frozen(self.coords, np.float64)
            if coords.shape != (npts, 2):
                raise ValueError(f"coords must have shape ({npts}, 2)")
            if np.any(coords < 0) or np.any(coords > 1):
                raise ValueError("coordinates must lie in [0, 1]^2")
            object.__setattr__(self, "coords", coords)
        if task is Task.ATSP:
            dist = _frozen(self.dist, np.float64)
            if dist.shape != (n, n):
                raise ValueError("dist must be N x N")
            if np.any(np.diag(dist) != 0) or np.any(dist < 0):
                raise ValueError("dist must be nonnegative with zero diagonal")
            object.__setattr__(self, "dist", dist)
        if task is Task.CVRP:
            demands = _frozen(self.demands, np.int64)
            if demands.shape != (n,):
                raise ValueError("demands must have one entry per customer")
            cap = int(self.capacity)
            if np.any(demands < 1) or np.any(demands > cap):
                raise ValueError("demands must satisfy 1 <= q_i <= Q")
            object.__setattr__(self, "demands", demands)
            object.__setattr__(self, "capacity", cap)
        if task is Task.FFSP:
            if not self.proc:
                raise ValueError("FFSP instance needs stage matrices")
            stages = tuple(_frozen(p, np.int64) for p in self.proc)
            for p in stages:
                if p.ndim != 2 or p.shape[1] != n or p.shape[0] < 1:
                    raise ValueError("each stage matrix must be machines x jobs")
                if np.any(p < 1):
                    raise ValueError("processing times must be >= 1")
            object.__setattr__(self, "proc", stages)

    @property
    def n_stages(self) -> int:
        return len(self.proc) if self.proc else 0

    @property
    def machines_per_stage(self) -> tuple[int, ...]:
        return tuple(p.shape[0] for p in self.proc) if self.proc else ()

    def distance_matrix(self) -> np.ndarray:
        """Pairwise travel costs (Euclidean for TSP/CVRP, given for ATSP)."""
        if "dist" not in self._cache:
            if self.task is Task.ATSP:
                d = self.dist
            else:
                diff = self.coords[:, None, :] - self.coords[None, :, :]
                d = np.sqrt((diff**2).sum(-1))
                d.setflags(write=False)
            self._cache["dist"] = d
        return self._cache["dist"]

    def to_dict(self) -> dict:
        out: dict = {"task": self.task.value, "size": self.size}
        if self.coords is not None:
            out["coords"] = self.coords.tolist()
        if self.dist is not None:
            out["dist"] = self.dist.tolist()
        if self.demands is not None:
            out["demands"] = self.demands.tolist()
            out["capacity"] = self.capacity
        if self.proc is not None:
            out["proc"] = [p.tolist() for p in self.proc]
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemInstance":
        return cls(
            task=Task.parse(d["task"]),
            size=d["size"],
            coords=d.get("coords"),
            dist=d.get("dist"),
            demands=d.get("demands"),
            capacity=d.get("capacity"),
            proc=tuple(d["proc"]) if "proc" in d else None,
        )

    def __eq__(self, other):
        if not isinstance(other, ProblemInstance):
            return NotImplemented
        if (self.task, self.size, self.capacity) != (other.task, other.size, other.capacity):
            return False
        for name in ("coords", "dist", "demands"):
            a, b = getattr(self, name), getattr(other, name)
            if (a is None) != (b is None):
                return False
            if a is not None and not np.array_equal(a, b):
                return False
        if (self.proc is None) != (other.proc is None):
            return False
        if self.proc is not None:
            if len(self.proc) != len(other.proc):
                return False
            return all(np.array_equal(a, b) for a, b in zip(self.proc, other.proc))
        return True

    __hash__ = None


@dataclass(frozen=True)
class Dataset:
    task: Task
    size: int
    seed: int
    instances: tuple[ProblemInstance, ...]
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "task", Task.parse(self.task))
        object.__setattr__(self, "instances", tuple(self.instances))
        for inst in self.instances:
            if inst.task is not self.task or inst.size != self.size:
                raise ValueError("all instances must share task and size")

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    def __getitem__(self, i):
        return self.instances[i]


def min_size(task: Task) -> int:
    return 2 if Task.parse(task) is Task.FFSP else 3


def sample_instance(task: Task, n: int, rng: np.random.Generator, **options) -> ProblemInstance:
    """Draw one instance; ``options`` may set capacity, stages or machines."""
    task = Task.parse(task)
    if task is Task.TSP:
        return ProblemInstance(task, n, coords=rng.random((n, 2)))
    if task is Task.ATSP:
        dist = rng.random((n, n))
        np.fill_diagonal(dist, 0.0)
        return ProblemInstance(task, n, dist=dist)
    if task is Task.CVRP:
        cap = int(options.get("capacity") or default_capacity(n))
        coords = rng.random((n + 1, 2))
        demands = rng.integers(1, 10, size=n)
        return ProblemInstance(task, n, coords=coords, demands=demands, capacity=cap)
    stages = int(options.get("stages", FFSP_STAGES))
    machines = options.get("machines", FFSP_MACHINES)
    if isinstance(machines, int):
        machines = [machines] * stages
    lo, hi = FFSP_PROC_RANGE
    proc = tuple(rng.integers(lo, hi + 1, size=(int(m), n)) for m in machines)
    return ProblemInstance(task, n, proc=proc)


def generate(task, n: int, count: int, seed: int, **options) -> Dataset:
    """Deterministic dataset of ``count`` instances drawn from ``seed``."""
    task = Task.parse(task)
    if n < min_size(task):
        raise InvalidSizeError(f"{task.value} needs size >= {min_size(task)}, got {n}")
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed) & (2**64 - 1)))
    insts = tuple(sample_instance(task, n, rng, **options) for _ in range(count))
    opts = {k: v for k, v in options.items() if v is not None}
    return Dataset(task, n, int(seed), insts, opts)


def _header(ds: Dataset) -> dict:
    return {
        "format": "symrd-dataset",
        "version": FORMAT_VERSION,
        "task": ds.task.value,
        "N": ds.size,
        "count": len(ds),
        "seed": ds.seed,
        "options": ds.options,
    }


def save(ds: Dataset, path) -> str:
    """Write ``ds`` to ``path``; returns the sha256 of the written bytes."""
    lines = [json.dumps(_header(ds), sort_keys=True)]
    lines.extend(json.dumps(inst.to_dict(), sort_keys=True) for inst in ds.instances)
    data = ("\n".join(lines) + "\n").encode("utf-8")
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load(path) -> Dataset:
    text = Path(path).read_text(encoding="utf-8")
    if not text.endswith("\n"):
        raise DatasetFormatError("truncated dataset file")
    lines = text.splitlines()
    try:
        header = json.loads(lines[0])
    except (IndexError, json.JSONDecodeError) as exc:
        raise DatasetFormatError("missing or corrupt header") from exc
    if header.get("format") != "symrd-dataset":
        raise DatasetFormatError("not a dataset file")
    if header.get("version") != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported format version {header.get('version')!r}")
    try:
        task = Task.parse(header["task"])
        n, count, seed = int(header["N"]), int(header["count"]), int(header["seed"])
    except (KeyError, ValueError) as exc:
        raise DatasetFormatError(f"bad header: {exc}") from exc
    body = lines[1:]
    if len(body) != count:
        raise DatasetFormatError(f"expected {count} instances, found {len(body)}")
    insts = []
    for i, line in enumerate(body):
        try:
            inst = ProblemInstance.from_dict(json.loads(line))
        except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
            raise DatasetFormatError(f"instance {i}: {exc}") from exc
        if inst.task is not task or inst.size != n:
            raise DatasetFormatError(f"instance {i} does not match header")
        insts.append(inst)
    return Dataset(task, n, seed, tuple(insts), dict(header.get("options") or {}))
