from __future__ import annotations

import math

import numpy as np
import pytest

from oracles import tour_optimum
from symrd import Task, generate
from symrd.envs import BudgetLedger, InstanceTooLargeError, Trajectory, brute_force_best, trajectory_cost
from symrd.evaluation import (
    MetricRecord,
    TopK,
    auc_topk,
    entropy_decomposition_exact,
    greedy_costs,
    l1_symmetry_gap,
    optimality_gap,
    validate_cost,
)
from symrd.instances import Dataset
from symrd.policy import greedy_trajectory, init_params, zero_params


def test_validate_single_instance():
    ds = generate("TSP", 6, 1, 0)
    p = init_params("TSP", 8, 0)
    assert validate_cost(p, ds) == trajectory_cost(ds[0], greedy_trajectory(p, ds[0]))


def test_validate_duplicates():
    ds = generate("CVRP", 6, 1, 0)
    p = init_params("CVRP", 8, 0)
    dup = Dataset(ds.task, ds.size, ds.seed, ds.instances * 10)
    assert validate_cost(p, dup) == pytest.approx(validate_cost(p, ds), rel=1e-14)


def test_validate_bounded_by_oracle():
    ds = generate("TSP", 6, 10, 1)
    costs = greedy_costs(init_params("TSP", 8, 0), ds)
    for inst, c in zip(ds, costs):
        assert c >= brute_force_best(inst)[1] - 1e-12


def test_eval_never_charges(monkeypatch):
    monkeypatch.setattr(BudgetLedger, "charge", lambda *a, **k: pytest.fail("charged"))
    ds = generate("TSP", 6, 5, 1)
    p = init_params("TSP", 8, 0)
    validate_cost(p, ds)
    l1_symmetry_gap(p, ds, 3, np.random.default_rng(0))
    optimality_gap(p, ds)
    entropy_decomposition_exact(p, ds[0])


def test_l1_gap_zero_for_uniform_policy():
    ds = generate("TSP", 8, 5, 0)
    assert l1_symmetry_gap(zero_params("TSP"), ds, 10, np.random.default_rng(0)) == 0.0


def test_l1_gap_zero_for_identity_transform():
    ds = generate("CVRP", 8, 5, 0)
    p = init_params("CVRP", 8, 3)
    assert l1_symmetry_gap(p, ds, 4, np.random.default_rng(0), transform="identity") == 0.0


def test_l1_gap_positive_for_random_policy():
    ds = generate("TSP", 8, 5, 0)
    p = init_params("TSP", 8, 3)
    gap = l1_symmetry_gap(p, ds, 4, np.random.default_rng(0))
    assert gap > 0 and math.isfinite(gap)


def test_l1_gap_needs_samples():
    with pytest.raises(ValueError):
        l1_symmetry_gap(zero_params("TSP"), generate("TSP", 5, 1, 0), 0)


def test_entropy_uniform_tsp4():
    e = entropy_decomposition_exact(zero_params("TSP"), generate("TSP", 4, 1, 0)[0])
    assert e.H_traj == pytest.approx(math.log(24), abs=1e-10)
    assert e.H_sol == pytest.approx(math.log(3), abs=1e-10)
    assert e.E_cond == pytest.approx(math.log(8), abs=1e-10)
    assert e.H_uniform_bound == pytest.approx(e.H_traj, abs=1e-10)


@pytest.mark.parametrize("task,n", [("TSP", 5), ("TSP", 6), ("ATSP", 5)])
def test_entropy_chain_rule_and_bound(task, n):
    for s in range(3):
        e = entropy_decomposition_exact(init_params(task, 8, s), generate(task, n, 1, s)[0])
        assert abs(e.H_traj - e.H_sol - e.E_cond) < 1e-8
        assert e.H_traj <= e.H_uniform_bound + 1e-8


def test_entropy_limits():
    with pytest.raises(InstanceTooLargeError):
        entropy_decomposition_exact(zero_params("TSP"), generate("TSP", 8, 1, 0)[0])
    with pytest.raises(ValueError):
        entropy_decomposition_exact(zero_params("CVRP"), generate("CVRP", 4, 1, 0)[0])


def test_auc_constant():
    assert auc_topk([(100, 0.7), (500, 0.7), (1000, 0.7)], 1000) == pytest.approx(0.7)


def test_auc_single_point():
    assert auc_topk([(300, 0.4)], 1000) == pytest.approx(0.4)


def test_auc_monotone_below_final():
    hist = [(k, 1 - math.exp(-k / 300)) for k in range(100, 1001, 100)]
    assert auc_topk(hist, 1000) <= hist[-1][1]


def test_auc_trapezoid():
    # flat 0 until K=0, ramps linearly to 1 at K_max
    assert auc_topk([(0, 0.0), (1000, 1.0)], 1000) == pytest.approx(0.5)


def test_auc_from_raw_rewards_and_normalization():
    hist = [(10, [3.0, 1.0, 2.0]), (20, [3.0, 5.0, 1.0, 2.0])]
    # top-2 means are 2.5 then 4.0
    raw = auc_topk(hist, 20, k=2)
    assert raw == pytest.approx((10 * 2.5 + 10 * (2.5 + 4.0) / 2) / 20)
    scaled = auc_topk(hist, 20, k=2, reward_range=(0.0, 5.0))
    assert scaled == pytest.approx(raw / 5)


def test_auc_errors():
    with pytest.raises(ValueError):
        auc_topk([], 100)
    with pytest.raises(ValueError):
        auc_topk([(1, 1.0)], 100, k=0)


def test_topk_distinct():
    top = TopK(2)
    top.offer(1.0, "a")
    top.offer(5.0, "a")  # same solution again is ignored
    top.offer(3.0, "b")
    top.offer(2.0, "c")
    assert top.mean() == pytest.approx(2.5)


def test_optimality_gap_zero_for_optimal_costs():
    ds = generate("TSP", 6, 4, 0)
    p = init_params("TSP", 8, 0)
    costs = greedy_costs(p, ds)
    assert optimality_gap(p, ds, costs) == 0.0


def test_optimality_gap_against_reference():
    ds = generate("TSP", 6, 5, 3)
    p = init_params("TSP", 8, 0)
    ref = [tour_optimum(inst) for inst in ds]
    gap = optimality_gap(p, ds)
    assert gap >= 0
    assert gap == pytest.approx(np.mean((greedy_costs(p, ds) - ref) / ref), rel=1e-9)


def test_optimality_gap_too_large():
    with pytest.raises(InstanceTooLargeError):
        optimality_gap(zero_params("TSP"), generate("TSP", 12, 1, 0))


def test_metric_record_finite():
    MetricRecord("val_cost", 100, 1.0, 10, 0)
    with pytest.raises(ValueError):
        MetricRecord("val_cost", 100, float("nan"), 10, 0)
