"""Reference optima written independently of ``symrd.envs.oracle``.

These are deliberately naive: plain Python loops over every ordering, no
numpy vectorization, no dynamic programming.
"""

from __future__ import annotations

import itertools
import math


def _dist(inst, i, j):
    if inst.dist is not None:
        return float(inst.dist[i][j])
    (x1, y1), (x2, y2) = inst.coords[i], inst.coords[j]
    return math.hypot(x1 - x2, y1 - y2)


def tour_optimum(inst) -> float:
    """Every one of the N! visiting orders, start city included."""
    n = inst.size
    best = math.inf
    for perm in itertools.permutations(range(n)):
        total = 0.0
        for k in range(n):
            total += _dist(inst, perm[k], perm[(k + 1) % n])
        best = min(best, total)
    return best


def cvrp_optimum(inst) -> float:
    """Every customer order combined with every way to cut it into routes."""
    n = inst.size
    best = math.inf
    for perm in itertools.permutations(range(1, n + 1)):
        for cuts in itertools.product((0, 1), repeat=n - 1):
            routes, cur = [], [perm[0]]
            for c, nxt in zip(cuts, perm[1:]):
                if c:
                    routes.append(cur)
                    cur = [nxt]
                else:
                    cur.append(nxt)
            routes.append(cur)
            if any(sum(int(inst.demands[c - 1]) for c in r) > inst.capacity for r in routes):
                continue
            total = 0.0
            for r in routes:
                path = [0, *r, 0]
                total += sum(_dist(inst, path[i], path[i + 1]) for i in range(len(path) - 1))
            best = min(best, total)
    return best


def ffsp_optimum(inst) -> int:
    """Depth-first search over every action sequence the decoder accepts."""
    from symrd.envs import feasible_mask, initial_state, step

    best = [math.inf]

    def dfs(state):
        if state.terminal:
            sim = state._decoder.sims[0]
            best[0] = min(best[0], sim.makespan())
            return
        for a in map(int, feasible_mask(state).nonzero()[0]):
            dfs(step(state, a))

    dfs(initial_state(inst))
    return int(best[0])


def all_tour_trajectories(n: int):
    return list(itertools.permutations(range(n)))
