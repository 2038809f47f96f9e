"""Parametric instance distributions (tasks) for TSP and CVRP.

A task is indexed by the graph size ``N``, the number of spatial modes ``M``,
the vehicle capacity ``C`` (CVRP only) and the coordinate scale ``L``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .rng import Stream, as_stream

TSP = "TSP"
CVRP = "CVRP"
PROBLEMS = (TSP, CVRP)

DEFAULT_CLUSTER_STD = 0.05
MAX_DEMAND = 9
MODE_RETRIES = 200


@dataclass(frozen=True)
class TaskSpec:
    problem: str = TSP
    n_nodes: int = 20
    n_modes: int = 0
    capacity: int | None = None
    scale: float = 1.0
    cluster_std: float = DEFAULT_CLUSTER_STD
    seed: int = 0

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem {self.problem!r}")
        if self.n_nodes < 1:
            raise ValueError("n_nodes must be >= 1")
        if self.n_modes < 0 or self.n_modes > self.n_nodes:
            raise ValueError("n_modes must lie in [0, n_nodes]")
        if (self.capacity is not None) != (self.problem == CVRP):
            raise ValueError("capacity must be given iff problem is CVRP")
        if self.capacity is not None and self.capacity < 1:
            raise ValueError("capacity must be positive")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if not self.cluster_std > 0:
            raise ValueError("cluster_std must be positive")

    @property
    def label(self) -> str:
        parts = [self.problem, f"N={self.n_nodes}", f"M={self.n_modes}"]
        if self.capacity is not None:
            parts.append(f"C={self.capacity}")
        parts.append(f"L={self.scale:g}")
        return "(" + ",".join(parts) + ")"

    def to_dict(self) -> dict:
        return {
            "problem": self.problem,
            "n_nodes": self.n_nodes,
            "n_modes": self.n_modes,
            "capacity": self.capacity,
            "scale": self.scale,
            "cluster_std": self.cluster_std,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        return cls(**d)

    def same_distribution(self, other: "TaskSpec") -> bool:
        """True when both specs describe the same law (seed ignored)."""
        return replace(self, seed=0) == replace(other, seed=0)


@dataclass
class Instance:
    """One problem instance. For CVRP, ``coords`` holds the customers only."""

    coords: np.ndarray
    depot: np.ndarray | None = None
    demands: np.ndarray | None = None
    capacity: int | None = None
    source_task: TaskSpec | str = "external"
    name: str | None = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 2)
        if self.depot is not None:
            self.depot = np.asarray(self.depot, dtype=np.float64).reshape(2)
        if self.demands is not None:
            self.demands = np.asarray(self.demands, dtype=np.int64).reshape(-1)

    @property
    def problem(self) -> str:
        return CVRP if self.depot is not None else TSP

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    def validate(self) -> None:
        if self.problem == CVRP:
            if self.demands is None or self.capacity is None:
                raise ValueError("CVRP instance needs demands and capacity")
            if self.demands.shape[0] != self.n:
                raise ValueError("demands length must equal customer count")
            if np.any(self.demands < 1) or np.any(self.demands > self.capacity):
                raise ValueError("every demand must lie in [1, capacity]")
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("coordinates must be finite")

    def all_points(self) -> np.ndarray:
        """Coordinates with the depot (if any) prepended at index 0."""
        if self.depot is None:
            return self.coords
        return np.vstack([self.depot[None, :], self.coords])

    def scaled(self, factor: float) -> "Instance":
        return Instance(
            coords=self.coords * factor,
            depot=None if self.depot is None else self.depot * factor,
            demands=None if self.demands is None else self.demands.copy(),
            capacity=self.capacity,
            source_task=self.source_task,
            name=self.name,
        )

    def permuted(self, perm: Sequence[int]) -> "Instance":
        """Relabel customers: new node ``i`` is old node ``perm[i]``."""
        perm = np.asarray(perm)
        return Instance(
            coords=self.coords[perm],
            depot=None if self.depot is None else self.depot.copy(),
            demands=None if self.demands is None else self.demands[perm],
            capacity=self.capacity,
            source_task=self.source_task,
            name=self.name,
        )

    def equals(self, other: "Instance") -> bool:
        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and bool(np.all(a == b))

        return (
            same(self.coords, other.coords)
            and same(self.depot, other.depot)
            and same(self.demands, other.demands)
            and self.capacity == other.capacity
        )


@dataclass
class TaskSet:
    tasks: list[TaskSpec]
    sampling: str = "uniform"
    name: str | None = None

    def __post_init__(self):
        self.tasks = list(self.tasks)
        if not self.tasks:
            raise ValueError("TaskSet must be non-empty")
        if len(set(self.tasks)) != len(self.tasks):
            raise ValueError("TaskSet contains duplicate tasks")
        if self.sampling != "uniform":
            raise ValueError(f"unsupported sampling {self.sampling!r}")

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, i):
        return self.tasks[i]

    def sample(self, rng: Stream) -> int:
        return rng.integers(len(self.tasks))

    def contains_distribution(self, spec: TaskSpec) -> bool:
        return any(t.same_distribution(spec) for t in self.tasks)


def spread_floor(m: int) -> float:
    return 0.7 / math.sqrt(m)


def sample_modes(m: int, rng: Stream) -> np.ndarray:
    """Maximin rejection sampling of ``m`` well separated points in [0,1]^2.

    A candidate is accepted once its distance to every accepted mode reaches
    ``spread_floor(m)``; after ``MODE_RETRIES`` failed candidates the one with
    the largest clearance is taken instead.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    floor = spread_floor(m)
    modes: list[tuple[float, float]] = []
    for _ in range(m):
        best, best_clear = None, -1.0
        for _ in range(MODE_RETRIES):
            cand = (rng.random(), rng.random())
            if not modes:
                best = cand
                break
            clear = min(math.hypot(cand[0] - a, cand[1] - b) for a, b in modes)
            if clear >= floor:
                best = cand
                break
            if clear > best_clear:
                best, best_clear = cand, clear
        modes.append(best)
    return np.array(modes, dtype=np.float64)


def _clamp01(v: float) -> float:
    return 0.0 if v < 0.0 else (1.0 if v > 1.0 else v)


def generate_instance(spec: TaskSpec, rng: Stream | int | None = None) -> Instance:
    rng = as_stream(spec.seed if rng is None else rng)
    n = spec.n_nodes
    pts = np.empty((n, 2), dtype=np.float64)
    if spec.n_modes == 0:
        for i in range(n):
            pts[i, 0] = rng.random()
            pts[i, 1] = rng.random()
    else:
        modes = sample_modes(spec.n_modes, rng)
        s = spec.cluster_std
        for i in range(n):
            cx, cy = modes[rng.integers(spec.n_modes)]
            pts[i, 0] = _clamp01(cx + s * rng.normal())
            pts[i, 1] = _clamp01(cy + s * rng.normal())
    depot = demands = None
    if spec.problem == CVRP:
        depot = np.array([rng.random(), rng.random()]) * spec.scale
        # demands are capped at capacity so each customer stays servable
        top = min(MAX_DEMAND, spec.capacity)
        demands = np.array([1 + rng.integers(top) for _ in range(n)], dtype=np.int64)
    return Instance(
        coords=pts * spec.scale,
        depot=depot,
        demands=demands,
        capacity=spec.capacity,
        source_task=spec,
    )


def generate_dataset(spec: TaskSpec, size: int, seed: int | None = None) -> list[Instance]:
    """``size`` instances; instance ``i`` uses substream ``i`` of the task seed."""
    root = Stream(spec.seed if seed is None else seed)
    return [generate_instance(spec, root.spawn(i)) for i in range(size)]


def sample_batch(spec: TaskSpec, size: int, rng: Stream) -> list[Instance]:
    """Fresh on-demand training batch drawn from ``rng``."""
    key = rng.next_u64()
    base = Stream(key)
    return [generate_instance(spec, base.spawn(i)) for i in range(size)]


# presets ------------------------------------------------------------------

def _tsp(n, m=0, scale=1.0):
    return TaskSpec(TSP, n_nodes=n, n_modes=m, scale=scale)


def _cvrp(n, c, m=0):
    return TaskSpec(CVRP, n_nodes=n, n_modes=m, capacity=c)


_PRESETS = {
    "paper": {
        "tsp-var-size": lambda: [_tsp(n) for n in (10, 20, 30, 50)],
        "tsp-var-mode": lambda: [_tsp(40, m) for m in (1, 2, 5)],
        "tsp-mixed-var": lambda: [_tsp(n, m) for n in (20, 30, 50) for m in (1, 2, 4)],
        "tsp-var-scale": lambda: [_tsp(50, 0, s) for s in (1, 2, 3, 4, 5, 8, 10)],
        "cvrp-var-size": lambda: [_cvrp(n, c) for n, c in ((10, 20), (20, 30), (30, 35), (50, 40), (100, 50))],
        "cvrp-var-mode": lambda: [_cvrp(50, 40, m) for m in (1, 2, 5)],
        "cvrp-var-capacity": lambda: [_cvrp(50, c) for c in (10, 30, 40)],
    },
    "desk": {
        "tsp-var-size": lambda: [_tsp(n) for n in (5, 8, 10)],
        "tsp-var-mode": lambda: [_tsp(10, m) for m in (1, 2, 5)],
        "tsp-mixed-var": lambda: [_tsp(n, m) for n in (6, 8, 10) for m in (1, 2, 4)],
        "tsp-var-scale": lambda: [_tsp(10, 0, s) for s in (1, 5, 10)],
        "cvrp-var-size": lambda: [_cvrp(n, c) for n, c in ((4, 10), (6, 15), (8, 20))],
        "cvrp-var-mode": lambda: [_cvrp(8, 20, m) for m in (1, 2, 5)],
        "cvrp-var-capacity": lambda: [_cvrp(8, c) for c in (10, 20, 30)],
    },
}

PRESET_NAMES = tuple(_PRESETS["paper"])


def preset_taskset(name: str, scale_factor: str = "paper") -> TaskSet:
    if scale_factor not in _PRESETS:
        raise ValueError(f"unknown scale factor {scale_factor!r}")
    try:
        make = _PRESETS[scale_factor][name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}") from None
    return TaskSet(make(), name=name)
