from __future__ import annotations

import json

import numpy as np
import pytest

from symrd import ProblemInstance, Task, generate, load, save
from symrd.instances import (
    DatasetFormatError,
    InvalidSizeError,
    default_capacity,
    file_hash,
)


def test_tsp_coordinates_in_unit_square():
    inst = generate("TSP", 4, 1, 3)[0]
    assert inst.coords.shape == (4, 2)
    assert np.all((inst.coords >= 0) & (inst.coords <= 1))


def test_atsp_zero_diagonal():
    inst = generate("ATSP", 5, 1, 3)[0]
    assert inst.dist.shape == (5, 5)
    assert np.array_equal(np.diag(inst.dist), np.zeros(5))
    assert np.all(inst.dist >= 0)


def test_generation_is_bit_identical():
    a = generate("TSP", 4, 1, 42)[0]
    b = generate("TSP", 4, 1, 42)[0]
    assert a.coords.tobytes() == b.coords.tobytes()
    assert generate("TSP", 4, 1, 43)[0] != a


@pytest.mark.parametrize("n,cap", [(5, 20), (10, 20), (20, 30), (49, 30), (50, 40), (100, 50)])
def test_cvrp_capacity_convention(n, cap):
    assert default_capacity(n) == cap


def test_cvrp_demands_range():
    for inst in generate("CVRP", 20, 30, 0):
        assert inst.coords.shape == (21, 2)
        assert inst.demands.min() >= 1 and inst.demands.max() <= 9
        assert np.all(inst.demands <= inst.capacity)


def test_ffsp_defaults():
    inst = generate("FFSP", 6, 1, 0)[0]
    assert inst.n_stages == 3
    assert inst.machines_per_stage == (4, 4, 4)
    for p in inst.proc:
        assert p.shape == (4, 6) and p.min() >= 2 and p.max() <= 9


def test_ffsp_options():
    inst = generate("FFSP", 3, 1, 0, stages=2, machines=[1, 3])[0]
    assert inst.machines_per_stage == (1, 3)


@pytest.mark.parametrize("task,n", [("TSP", 2), ("ATSP", 1), ("CVRP", 2), ("FFSP", 1)])
def test_too_small(task, n):
    with pytest.raises(InvalidSizeError):
        generate(task, n, 1, 0)


def test_instances_are_immutable():
    inst = generate("TSP", 5, 1, 0)[0]
    with pytest.raises(ValueError):
        inst.coords[0, 0] = 0.5
    with pytest.raises(AttributeError):
        inst.size = 3


def test_invariants_rejected():
    with pytest.raises(ValueError):
        ProblemInstance(Task.TSP, 3, coords=[[0, 0], [1, 1], [2, 0]])
    with pytest.raises(ValueError):
        ProblemInstance(Task.ATSP, 2, dist=[[0, 1], [1, 1]])
    with pytest.raises(ValueError):
        ProblemInstance(Task.CVRP, 1, coords=[[0, 0], [1, 1]], demands=[5], capacity=4)
    with pytest.raises(ValueError):
        ProblemInstance(Task.FFSP, 2, proc=([[1, 0]],))


@pytest.mark.parametrize("task", ["TSP", "ATSP", "CVRP", "FFSP"])
def test_round_trip(tmp_path, task):
    ds = generate(task, 5, 4, 11)
    path = tmp_path / "d.jsonl"
    digest = save(ds, path)
    assert digest == file_hash(path)
    back = load(path)
    assert back.task is ds.task and back.size == ds.size and back.seed == ds.seed
    assert list(back.instances) == list(ds.instances)
    # floats survive exactly
    if ds[0].coords is not None:
        assert back[0].coords.tobytes() == ds[0].coords.tobytes()


def test_same_arguments_same_file_hash(tmp_path):
    h1 = save(generate("CVRP", 7, 3, 5), tmp_path / "a")
    h2 = save(generate("CVRP", 7, 3, 5), tmp_path / "b")
    assert h1 == h2


def test_truncated_file(tmp_path):
    path = tmp_path / "d.jsonl"
    save(generate("TSP", 5, 3, 0), path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(DatasetFormatError):
        load(path)


def test_dropped_line(tmp_path):
    path = tmp_path / "d.jsonl"
    save(generate("TSP", 5, 3, 0), path)
    lines = path.read_text().splitlines(keepends=True)
    path.write_text("".join(lines[:-1]))
    with pytest.raises(DatasetFormatError):
        load(path)


def test_unknown_task_tag(tmp_path):
    path = tmp_path / "d.jsonl"
    save(generate("TSP", 5, 1, 0), path)
    lines = path.read_text().splitlines()
    header = json.loads(lines[0])
    header["task"] = "KNAPSACK"
    path.write_text("\n".join([json.dumps(header)] + lines[1:]) + "\n")
    with pytest.raises(DatasetFormatError):
        load(path)


def test_version_mismatch(tmp_path):
    path = tmp_path / "d.jsonl"
    save(generate("TSP", 5, 1, 0), path)
    lines = path.read_text().splitlines()
    header = json.loads(lines[0])
    header["version"] = 99
    path.write_text("\n".join([json.dumps(header)] + lines[1:]) + "\n")
    with pytest.raises(DatasetFormatError):
        load(path)
