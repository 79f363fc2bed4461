"""Exhaustive optimum for tiny instances. Never charges a budget ledger."""

from __future__ import annotations

import itertools

import numpy as np

from symrd.envs import ffsp, routing
from symrd.envs.base import InstanceTooLargeError, Solution, Trajectory
from symrd.instances import ProblemInstance, Task

MAX_TOUR = 10
MAX_CVRP = 8
MAX_FFSP = 6


def _best_tour(inst: ProblemInstance) -> tuple[Solution, float]:
    n = inst.size
    d = inst.distance_matrix()
    rest = np.array(list(itertools.permutations(range(1, n))), dtype=np.int64)
    tours = np.concatenate([np.zeros((len(rest), 1), dtype=np.int64), rest], axis=1)
    nxt = np.roll(tours, -1, axis=1)
    costs = d[tours, nxt].sum(axis=1)
    best = int(np.argmin(costs))
    sol = routing.canonical_tour(inst, Trajectory(inst.task, tuple(tours[best])))
    return sol, routing.tour_cost(inst, sol)


def _best_cvrp(inst: ProblemInstance) -> tuple[Solution, float]:
    n = inst.size
    d = inst.distance_matrix()
    dem = inst.demands
    full = (1 << n) - 1
    # cheapest single-route visiting order for every capacity-feasible subset
    route_cost: dict[int, tuple[float, tuple[int, ...]]] = {}
    for mask in range(1, full + 1):
        members = [i + 1 for i in range(n) if mask >> i & 1]
        if sum(int(dem[c - 1]) for c in members) > inst.capacity:
            continue
        best = (float("inf"), ())
        for perm in itertools.permutations(members):
            if len(perm) > 1 and perm[0] > perm[-1]:
                continue
            path = (0, *perm, 0)
            c = sum(float(d[path[i], path[i + 1]]) for i in range(len(path) - 1))
            if c < best[0]:
                best = (c, perm)
        route_cost[mask] = best
    # set-partition DP; the lowest unserved customer anchors each new route
    best_cost = {0: (0.0, ())}
    for mask in range(1, full + 1):
        low = mask & -mask
        rest = mask ^ low
        sub = rest
        cand = (float("inf"), ())
        while True:
            r = sub | low
            if r in route_cost:
                c = route_cost[r][0] + best_cost[mask ^ r][0]
                if c < cand[0]:
                    cand = (c, best_cost[mask ^ r][1] + (route_cost[r][1],))
            if sub == 0:
                break
            sub = (sub - 1) & rest
        best_cost[mask] = cand
    routes = best_cost[full][1]
    sol = Solution(Task.CVRP, routing.canonical_routes(routes))
    return sol, routing.cvrp_cost(inst, sol)


def _ffsp_greedy_bound(inst: ProblemInstance, tries: int = 64) -> int:
    rng = np.random.default_rng(0)
    best = np.iinfo(np.int64).max
    for _ in range(tries):
        sim = ffsp.FFSPSim(inst)
        while not sim.done:
            m = sim.mask()
            m[sim.N] = False if m[: sim.N].any() else m[sim.N]
            sim.step(int(rng.choice(np.nonzero(m)[0])))
        best = min(best, sim.makespan())
    return int(best)


def _best_ffsp(inst: ProblemInstance) -> tuple[Solution, float]:
    """Branch and bound over semi-active schedules.

    Operations are appended in (start time, machine) order, each starting as
    early as its machine and job allow, so every semi-active schedule is
    generated exactly once. An optimal schedule is semi-active and every
    semi-active schedule is reachable by the decoder, so the result equals
    the best achievable episode.
    """
    N, S = inst.size, inst.n_stages
    machines = [list(range(sum(inst.machines_per_stage[:s]), sum(inst.machines_per_stage[: s + 1]))) for s in range(S)]
    G = sum(inst.machines_per_stage)
    p = [[[int(inst.proc[s][m, j]) for j in range(N)] for m in range(len(machines[s]))] for s in range(S)]
    # cheapest remaining work per job from each stage on
    tail = [[0] * N for _ in range(S + 1)]
    for s in range(S - 1, -1, -1):
        for j in range(N):
            tail[s][j] = tail[s + 1][j] + min(p[s][m][j] for m in range(len(machines[s])))

    memo: dict[tuple, tuple[int, bool, tuple]] = {}

    def lower_bound(free, jready, nxt, t0, span):
        lb = span
        for j in range(N):
            if nxt[j] < S:
                lb = max(lb, max(jready[j], t0) + tail[nxt[j]][j])
        for s in range(S):
            work = sum(min(p[s][m][j] for m in range(len(machines[s]))) for j in range(N) if nxt[j] <= s)
            if work:
                start = max(min(free[g] for g in machines[s]), t0)
                rest = min(tail[s + 1][j] for j in range(N) if nxt[j] <= s)
                lb = max(lb, start + -(-work // len(machines[s])) + rest)
        return lb

    def search(free, jready, nxt, t0, g0, span, ub):
        if all(x == S for x in nxt):
            return span, True, ()
        key = (free, jready, nxt, t0, g0, span)
        hit = memo.get(key)
        if hit is not None and (hit[1] or hit[0] >= ub):
            return hit
        lb = lower_bound(free, jready, nxt, t0, span)
        if lb >= ub:
            memo[key] = (lb, False, ())
            return lb, False, ()
        best, exact, plan = ub, False, ()
        cands = []
        for j in range(N):
            s = nxt[j]
            if s == S:
                continue
            for li, g in enumerate(machines[s]):
                st = max(free[g], jready[j])
                if st > t0 or (st == t0 and g > g0):
                    cands.append((st + p[s][li][j], st, g, li, j, s))
        cands.sort()
        lowest = ub
        for end, st, g, li, j, s in cands:
            if end >= best and s == S - 1:
                lowest = min(lowest, end)
                continue
            f2 = free[:g] + (end,) + free[g + 1 :]
            r2 = jready[:j] + (end,) + jready[j + 1 :]
            n2 = nxt[:j] + (s + 1,) + nxt[j + 1 :]
            val, ex, sub = search(f2, r2, n2, st, g, max(span, end) if s == S - 1 else span, best)
            if val < best:
                best, exact, plan = val, ex, ((j, s, g, st),) + sub
            lowest = min(lowest, val)
        if best < ub:
            res = (best, exact, plan)
        else:
            res = (max(lowest, lb), False, ())
        memo[key] = res
        return res

    ub = _ffsp_greedy_bound(inst) + 1
    val, exact, plan = search((0,) * G, (0,) * N, (0,) * N, -1, -1, 0, ub)
    if not plan:
        raise RuntimeError("branch and bound failed to improve the greedy bound")
    sched: list[list[tuple[int, int]]] = [[] for _ in range(G)]
    for j, s, g, st in sorted(plan, key=lambda op: op[3]):
        sched[g].append((j, st))
    form = tuple(tuple(x) for x in sched)
    sol = Solution(Task.FFSP, form)
    # confirms the schedule is reachable by the decoder
    ffsp.replay_schedule(inst, form, None)
    return sol, ffsp.ffsp_cost(inst, sol)


def brute_force_best(inst: ProblemInstance) -> tuple[Solution, float]:
    """Exact optimum by exhaustive enumeration of the solution space."""
    if inst.task in (Task.TSP, Task.ATSP):
        if inst.size > MAX_TOUR:
            raise InstanceTooLargeError(f"tour oracle limited to N <= {MAX_TOUR}")
        return _best_tour(inst)
    if inst.task is Task.CVRP:
        if inst.size > MAX_CVRP:
            raise InstanceTooLargeError(f"CVRP oracle limited to N <= {MAX_CVRP}")
        return _best_cvrp(inst)
    if inst.size > MAX_FFSP:
        raise InstanceTooLargeError(f"FFSP oracle limited to {MAX_FFSP} jobs")
    return _best_ffsp(inst)
