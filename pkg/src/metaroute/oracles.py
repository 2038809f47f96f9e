"""Exact reference solvers for small instances and classical tour heuristics."""

from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np

from .rng import Stream
from .solutions import RoutePlan, Tour, route_cost, tour_length
from .taskgen import CVRP, Instance

BRUTE_FORCE_TSP_MAX = 10
HELD_KARP_MAX = 16
BRUTE_FORCE_CVRP_MAX = 8

# per-chunk memory budget for the batched DP table, in bytes
_HK_BUDGET = 1 << 28


class SizeLimitError(ValueError):
    """Instance exceeds what an exact oracle is allowed to handle."""


def distance_matrix(points: np.ndarray) -> np.ndarray:
    d = points[..., :, None, :] - points[..., None, :, :]
    return np.sqrt((d * d).sum(-1))


def _require_tsp(inst: Instance):
    if inst.problem == CVRP:
        raise ValueError("TSP solver called on a CVRP instance")


@lru_cache(maxsize=None)
def _half_permutations(m: int) -> np.ndarray:
    """Permutations of 1..m in lexicographic order, one per cycle direction."""
    perms = np.array(list(itertools.permutations(range(1, m + 1))), dtype=np.int64)
    if m >= 2:
        perms = perms[perms[:, 0] < perms[:, -1]]
    return perms


def brute_force_tsp(inst: Instance) -> tuple[Tour, float]:
    """Enumerate all (N-1)!/2 cycles through node 0.

    Among optimal cycles the lexicographically smallest permutation starting
    at node 0 wins.
    """
    _require_tsp(inst)
    n = inst.n
    if n > BRUTE_FORCE_TSP_MAX:
        raise SizeLimitError("instance too large for enumeration")
    if n <= 3:
        t = Tour(tuple(range(n)))
        return t, tour_length(inst, t)
    D = distance_matrix(inst.coords)
    perms = _half_permutations(n - 1)
    cost = D[0, perms[:, 0]] + D[perms[:, -1], 0]
    for k in range(perms.shape[1] - 1):
        cost = cost + D[perms[:, k], perms[:, k + 1]]
    best = int(np.argmin(cost))
    return Tour((0,) + tuple(int(v) for v in perms[best])), float(cost[best])


def held_karp_batch(points: np.ndarray) -> tuple[np.ndarray, list[Tour]]:
    """Subset DP over a batch of same-size instances, shape ``(B, N, 2)``.

    Node 0 is the fixed start, so the table is indexed by subsets of the
    remaining ``N-1`` nodes and the last visited node.
    """
    points = np.asarray(points, dtype=np.float64)
    B, n, _ = points.shape
    if n > HELD_KARP_MAX:
        raise SizeLimitError("exceeds DP budget")
    if n <= 3:
        tours = [Tour(tuple(range(n))) for _ in range(B)]
        D = distance_matrix(points)
        idx = np.arange(n)
        costs = D[:, idx, np.roll(idx, -1)].sum(axis=1) if n > 1 else np.zeros(B)
        return costs, tours
    chunk = max(1, _HK_BUDGET // ((1 << (n - 1)) * (n - 1) * 9))
    if B > chunk:
        out_c, out_t = [], []
        for s in range(0, B, chunk):
            c, t = held_karp_batch(points[s:s + chunk])
            out_c.append(c)
            out_t.extend(t)
        return np.concatenate(out_c), out_t

    m = n - 1
    full = 1 << m
    D = distance_matrix(points)
    Dsub = D[:, 1:, 1:].transpose(2, 0, 1)  # [to, batch, from]
    dp = np.full((full, B, m), np.inf)
    parent = np.zeros((full, B, m), dtype=np.int8)
    for j in range(m):
        dp[1 << j, :, j] = D[:, 0, j + 1]
    member_cache = [np.array([j for j in range(m) if mask >> j & 1], dtype=np.int64)
                    for mask in range(full)]
    bits = 1 << np.arange(m)
    for mask in range(1, full):
        members = member_cache[mask]
        if members.size < 2:
            continue
        prev = mask ^ bits[members]
        cand = dp[prev] + Dsub[members]  # [j, batch, k]
        arg = cand.argmin(axis=2)
        best = np.take_along_axis(cand, arg[..., None], axis=2)[..., 0]
        dp[mask][:, members] = best.T
        parent[mask][:, members] = arg.T
    closing = dp[full - 1] + D[:, 1:, 0]
    last = closing.argmin(axis=1)
    costs = closing[np.arange(B), last]
    tours = []
    for b in range(B):
        mask, j, rev = full - 1, int(last[b]), []
        while mask:
            rev.append(j + 1)
            pj = int(parent[mask, b, j])
            mask ^= 1 << j
            j = pj
        tours.append(Tour((0,) + tuple(reversed(rev))).canonical())
    return costs, tours


def held_karp(inst: Instance) -> tuple[Tour, float]:
    _require_tsp(inst)
    if inst.n > HELD_KARP_MAX:
        raise SizeLimitError("exceeds DP budget")
    costs, tours = held_karp_batch(inst.coords[None])
    return tours[0], float(costs[0])


def _best_route(inst: Instance, members: tuple[int, ...]) -> tuple[tuple[int, ...], float]:
    if len(members) <= 2:
        return members, route_cost(inst, members)
    best, best_cost = None, np.inf
    for p in itertools.permutations(members):
        if p[0] > p[-1]:
            continue
        c = route_cost(inst, p)
        if c < best_cost:
            best, best_cost = p, c
    return best, best_cost


def brute_force_cvrp(inst: Instance) -> tuple[RoutePlan, float]:
    """Enumerate every capacity-feasible set partition of the customers.

    Each block is routed optimally by enumerating its visiting orders.
    """
    if inst.problem != CVRP:
        raise ValueError("CVRP solver called on a TSP instance")
    n = inst.n
    if n > BRUTE_FORCE_CVRP_MAX:
        raise SizeLimitError("instance too large for enumeration")
    routes: dict[tuple[int, ...], tuple[tuple[int, ...], float]] = {}

    def route_for(block: tuple[int, ...]):
        if block not in routes:
            routes[block] = _best_route(inst, block)
        return routes[block]

    best_plan, best_cost = None, np.inf

    def recurse(remaining: tuple[int, ...], blocks: list, cost: float):
        nonlocal best_plan, best_cost
        if not remaining:
            if cost < best_cost:
                best_plan, best_cost = list(blocks), cost
            return
        head, rest = remaining[0], remaining[1:]
        for r in range(len(rest) + 1):
            for extra in itertools.combinations(rest, r):
                block = (head,) + extra
                if inst.demands[list(block)].sum() > inst.capacity:
                    continue
                order, c = route_for(block)
                left = tuple(v for v in rest if v not in extra)
                blocks.append(order)
                recurse(left, blocks, cost + c)
                blocks.pop()

    recurse(tuple(range(n)), [], 0.0)
    return RoutePlan(tuple(best_plan)), float(best_cost)


def farthest_insertion(inst: Instance) -> tuple[Tour, float]:
    """Farthest insertion starting from the farthest pair; ties go to the lowest index."""
    _require_tsp(inst)
    n = inst.n
    if n < 2:
        raise ValueError("farthest insertion needs at least 2 nodes")
    D = distance_matrix(inst.coords)
    flat = int(np.argmax(D))
    i, j = divmod(flat, n)
    tour = [i, j]
    in_tour = np.zeros(n, dtype=bool)
    in_tour[[i, j]] = True
    near = np.minimum(D[i], D[j])
    for _ in range(n - 2):
        cand = np.where(in_tour, -np.inf, near)
        v = int(np.argmax(cand))
        a = np.array(tour)
        b = np.roll(a, -1)
        inc = D[a, v] + D[v, b] - D[a, b]
        pos = int(np.argmin(inc))
        tour.insert(pos + 1, v)
        in_tour[v] = True
        near = np.minimum(near, D[v])
    t = Tour(tour).canonical()
    return t, tour_length(inst, t)


def nearest_neighbor(inst: Instance, start: int = 0) -> tuple[Tour, float]:
    _require_tsp(inst)
    n = inst.n
    if not 0 <= start < n:
        raise ValueError("start must be a node index")
    D = distance_matrix(inst.coords)
    visited = np.zeros(n, dtype=bool)
    visited[start] = True
    order = [start]
    cur = start
    for _ in range(n - 1):
        d = np.where(visited, np.inf, D[cur])
        cur = int(np.argmin(d))
        visited[cur] = True
        order.append(cur)
    t = Tour(order)
    return t, tour_length(inst, t)


def random_tour(inst: Instance, rng: Stream) -> tuple[Tour, float]:
    t = Tour(rng.permutation(inst.n))
    return t, tour_length(inst, t)
