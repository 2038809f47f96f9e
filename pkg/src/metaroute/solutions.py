"""Tours, route plans, costs and optimality gaps."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .taskgen import Instance


@dataclass(frozen=True)
class Tour:
    order: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "order", tuple(int(i) for i in self.order))

    def __len__(self):
        return len(self.order)

    def canonical(self) -> "Tour":
        """Rotation starting at node 0, direction with the smaller second node."""
        o = list(self.order)
        if not o:
            return self
        k = o.index(min(o))
        o = o[k:] + o[:k]
        if len(o) > 2 and o[-1] < o[1]:
            o = [o[0]] + o[1:][::-1]
        return Tour(tuple(o))


@dataclass(frozen=True)
class RoutePlan:
    routes: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "routes", tuple(tuple(int(i) for i in r) for r in self.routes))

    def canonical(self) -> "RoutePlan":
        def orient(r):
            return r if len(r) < 2 or r[0] <= r[-1] else r[::-1]

        return RoutePlan(tuple(sorted(orient(r) for r in self.routes)))

    def to_sequence(self) -> list[int]:
        """Flatten to a depot-delimited action sequence (0 = depot, customers 1-based)."""
        seq: list[int] = []
        for r in self.routes:
            seq.extend(c + 1 for c in r)
            seq.append(0)
        return seq

    @classmethod
    def from_sequence(cls, seq: Iterable[int]) -> "RoutePlan":
        routes, cur = [], []
        for a in seq:
            if a == 0:
                if cur:
                    routes.append(tuple(cur))
                cur = []
            else:
                cur.append(int(a) - 1)
        if cur:
            routes.append(tuple(cur))
        return cls(tuple(routes))


@dataclass
class GapReport:
    per_instance_gap: list[float]
    solver_id: str = "solver"
    reference_id: str = "reference"
    costs: list[float] = field(default_factory=list)
    reference_costs: list[float] = field(default_factory=list)

    @property
    def mean_gap(self) -> float:
        return float(np.mean(self.per_instance_gap)) if self.per_instance_gap else float("nan")

    def rounded(self) -> float:
        return round(self.mean_gap, 2)


def _check_permutation(order: Sequence[int], n: int) -> None:
    if len(order) != n or sorted(int(i) for i in order) != list(range(n)):
        raise ValueError("not a permutation")


def tour_length(inst: Instance, t: Tour | Sequence[int]) -> float:
    order = t.order if isinstance(t, Tour) else tuple(t)
    _check_permutation(order, inst.n)
    if inst.n < 2:
        return 0.0
    p = inst.coords[list(order)]
    d = p - np.roll(p, -1, axis=0)
    return float(np.sqrt((d * d).sum(axis=1)).sum())


def path_length(points: np.ndarray) -> float:
    if len(points) < 2:
        return 0.0
    d = np.diff(points, axis=0)
    return float(np.sqrt((d * d).sum(axis=1)).sum())


def check_plan(inst: Instance, p: RoutePlan) -> None:
    seen = [c for r in p.routes for c in r]
    if any(len(r) == 0 for r in p.routes):
        raise ValueError("empty route")
    if sorted(seen) != list(range(inst.n)):
        raise ValueError("route plan must visit every customer exactly once")
    for k, r in enumerate(p.routes):
        load = int(inst.demands[list(r)].sum())
        if load > inst.capacity:
            raise ValueError(f"capacity violated on route {k}: {list(r)} load {load} > {inst.capacity}")


def route_cost(inst: Instance, route: Sequence[int]) -> float:
    pts = np.vstack([inst.depot[None, :], inst.coords[list(route)], inst.depot[None, :]])
    return path_length(pts)


def plan_cost(inst: Instance, p: RoutePlan) -> float:
    check_plan(inst, p)
    return float(sum(route_cost(inst, r) for r in p.routes))


def solution_cost(inst: Instance, sol: Tour | RoutePlan) -> float:
    if isinstance(sol, RoutePlan):
        return plan_cost(inst, sol)
    return tour_length(inst, sol)


def optimality_gap(cost: float, reference: float) -> float:
    if not reference > 0:
        raise ValueError("reference cost must be positive")
    return 100.0 * (cost - reference) / reference


def gap_report(costs: Sequence[float], references: Sequence[float],
               solver_id: str = "solver", reference_id: str = "reference") -> GapReport:
    if len(costs) != len(references):
        raise ValueError("costs and references differ in length")
    gaps = [optimality_gap(c, r) for c, r in zip(costs, references)]
    return GapReport(gaps, solver_id, reference_id, list(map(float, costs)), list(map(float, references)))
