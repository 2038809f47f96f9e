"""scikit-learn style wrappers: ``fit`` trains, ``predict`` decodes solutions."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import edgenet, policy
from .edgenet import EdgeLabels
from .metatrain import MetaConfig, fine_tune, meta_train_rl
from .params import ATTENTION, EDGENET, Architecture, ParameterSet
from .rltrain import TrainConfig, train_rl, train_supervised
from .solutions import RoutePlan, Tour, solution_cost
from .taskgen import CVRP, TSP, Instance, TaskSet, TaskSpec


def check_instances(X, problem: str | None = None, min_nodes: int = 1) -> list[Instance]:
    """Coerce ``X`` to a validated list of instances.

    Accepts a single Instance, a sequence of them, or a float array of shape
    ``(n, 2)`` / ``(B, n, 2)`` holding TSP coordinates.
    """
    if isinstance(X, Instance):
        X = [X]
    elif isinstance(X, np.ndarray) or (isinstance(X, (list, tuple)) and X and not isinstance(X[0], Instance)):
        arr = np.asarray(X, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3 or arr.shape[-1] != 2:
            raise ValueError(f"expected coordinates of shape (B, n, 2), got {arr.shape}")
        X = [Instance(coords=a) for a in arr]
    X = list(X)
    if not X:
        raise ValueError("empty dataset")
    for i, inst in enumerate(X):
        if not isinstance(inst, Instance):
            raise TypeError(f"item {i} is not an Instance")
        inst.validate()
        if problem is not None and inst.problem != problem:
            raise ValueError(f"item {i} is a {inst.problem} instance, expected {problem}")
        if inst.n < min_nodes:
            raise ValueError(f"item {i} has {inst.n} nodes, need at least {min_nodes}")
    return X


def check_tasks(X) -> TaskSet:
    if isinstance(X, TaskSet):
        return X
    if isinstance(X, TaskSpec):
        return TaskSet([X])
    X = list(X)
    if X and all(isinstance(t, TaskSpec) for t in X):
        return TaskSet(X)
    raise TypeError("expected a TaskSpec, a TaskSet or a list of TaskSpecs")


def _is_task_input(X) -> bool:
    if isinstance(X, (TaskSpec, TaskSet)):
        return True
    return isinstance(X, (list, tuple)) and bool(X) and isinstance(X[0], TaskSpec)


class AttentionRouter(BaseEstimator):
    """Attention policy trained with REINFORCE; ``predict`` decodes greedily."""

    def __init__(self, problem=TSP, embed_dim=32, n_layers=2, n_steps=500, batch_size=128,
                 learning_rate=1e-3, baseline_every=50, baseline_eval_size=256, seed=0):
        self.problem = problem
        self.embed_dim = embed_dim
        self.n_layers = n_layers
        self.n_steps = n_steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.baseline_every = baseline_every
        self.baseline_eval_size = baseline_eval_size
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                           baseline_every=self.baseline_every, baseline_eval_size=self.baseline_eval_size,
                           seed=self.seed)

    def _arch(self) -> Architecture:
        return Architecture(kind=ATTENTION, problem=self.problem, embed_dim=self.embed_dim, n_layers=self.n_layers)

    def _start(self) -> ParameterSet:
        params = getattr(self, "params_", None)
        return policy.init_params(self._arch(), self.seed) if params is None else params

    def fit(self, X, y=None):
        """Train on task distributions (TaskSpec/TaskSet) or on a fixed instance pool."""
        params = self._start()
        cfg = self._train_config()
        if _is_task_input(X):
            tasks = check_tasks(X)
            res = train_rl(params, tasks, self.n_steps, cfg)
            self.log_ = res.log
            self.params_ = res.params
        else:
            pool = check_instances(X, self.problem, min_nodes=2)
            self.params_ = fine_tune(params, pool, self.n_steps, cfg)[-1]
            self.log_ = []
        return self

    def predict(self, X) -> list[Tour | RoutePlan]:
        check_is_fitted(self, "params_")
        sols, _ = policy.greedy_solutions(self.params_, check_instances(X, self.problem, min_nodes=2))
        return sols

    def predict_cost(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        return policy.greedy_costs(self.params_, check_instances(X, self.problem, min_nodes=2))

    def score(self, X, y=None) -> float:
        """Negative mean greedy cost (higher is better)."""
        return -float(np.mean(self.predict_cost(X)))


class MetaRouter(AttentionRouter):
    """Reptile meta-trained attention policy; ``adapt`` fine-tunes a copy on a target."""

    def __init__(self, problem=TSP, embed_dim=32, n_layers=2, n_outer=100, inner_steps=10, eps0=0.99,
                 eps_decay=1.0003, batch_size=128, learning_rate=1e-3, baseline_eval_size=256, seed=0):
        self.problem = problem
        self.embed_dim = embed_dim
        self.n_layers = n_layers
        self.n_outer = n_outer
        self.inner_steps = inner_steps
        self.eps0 = eps0
        self.eps_decay = eps_decay
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.baseline_eval_size = baseline_eval_size
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                           baseline_every=max(1, self.inner_steps), baseline_eval_size=self.baseline_eval_size,
                           seed=self.seed)

    def fit(self, X, y=None):
        tasks = check_tasks(X)
        cfg = MetaConfig(inner_steps=self.inner_steps, eps0=self.eps0, eps_decay=self.eps_decay,
                         n_outer=self.n_outer, inner=self._train_config(), seed=self.seed)
        res = meta_train_rl(tasks, cfg, params=policy.init_params(self._arch(), self.seed))
        self.params_, self.log_ = res.params, res.log
        return self

    def adapt(self, target, k: int) -> "AttentionRouter":
        """Fine-tuned copy after ``k`` inner steps on a TaskSpec or an instance pool."""
        check_is_fitted(self, "params_")
        if not isinstance(target, TaskSpec):
            target = check_instances(target, self.problem, min_nodes=2)
        out = AttentionRouter(problem=self.problem, embed_dim=self.embed_dim, n_layers=self.n_layers,
                              batch_size=self.batch_size, learning_rate=self.learning_rate, seed=self.seed)
        out.params_ = fine_tune(self.params_, target, k, self._train_config())[-1]
        return out


def _labels_for(inst: Instance, target) -> EdgeLabels:
    if isinstance(target, EdgeLabels):
        return target
    if isinstance(target, Tour):
        return edgenet.labels_from_tour(target, inst.n)
    if isinstance(target, RoutePlan):
        return edgenet.labels_from_plan(target, inst.n)
    return edgenet.labels_from_tour(list(target), inst.n)


class EdgeTourPredictor(BaseEstimator):
    """Edge-probability network trained on reference solutions."""

    def __init__(self, problem=TSP, embed_dim=32, n_layers=2, n_steps=500, batch_size=32,
                 learning_rate=1e-3, seed=0):
        self.problem = problem
        self.embed_dim = embed_dim
        self.n_layers = n_layers
        self.n_steps = n_steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed

    def fit(self, X, y):
        """``y`` holds one reference Tour/RoutePlan (or EdgeLabels) per instance."""
        X = check_instances(X, self.problem, min_nodes=3)
        y = list(y)
        if len(y) != len(X):
            raise ValueError(f"got {len(X)} instances but {len(y)} targets")
        by_size: dict[int, list] = {}
        for inst, t in zip(X, y):
            by_size.setdefault(inst.n, []).append((inst, _labels_for(inst, t)))
        # batches must share one size, so mixed input becomes one pool per size
        pools = list(by_size.values())
        data = pools[0] if len(pools) == 1 else pools
        arch = Architecture(kind=EDGENET, problem=self.problem, embed_dim=self.embed_dim, n_layers=self.n_layers)
        start = getattr(self, "params_", None)
        if start is None:
            start = edgenet.init_params(arch, self.seed)
        cfg = TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size, seed=self.seed)
        res = train_supervised(start, data, self.n_steps, cfg)
        self.params_, self.log_ = res.params, res.log
        return self

    def predict_proba(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "params_")
        X = check_instances(X, self.problem, min_nodes=3)
        return [p.probs for p in _predict_grouped(self.params_, X)]

    def predict(self, X) -> list[Tour | RoutePlan]:
        check_is_fitted(self, "params_")
        X = check_instances(X, self.problem, min_nodes=3)
        return [edgenet.decode(p, inst) for p, inst in zip(_predict_grouped(self.params_, X), X)]

    def score(self, X, y=None) -> float:
        X = check_instances(X, self.problem, min_nodes=3)
        return -float(np.mean([solution_cost(i, s) for i, s in zip(X, self.predict(X))]))


def _predict_grouped(params: ParameterSet, X: Sequence[Instance]) -> list[edgenet.EdgePrediction]:
    out: list = [None] * len(X)
    by_size: dict[int, list[int]] = {}
    for i, inst in enumerate(X):
        by_size.setdefault(inst.n, []).append(i)
    for idx in by_size.values():
        for j, pred in zip(idx, edgenet.predict_batch(params, [X[k] for k in idx])):
            out[j] = pred
    return out


__all__ = ["AttentionRouter", "EdgeTourPredictor", "MetaRouter", "check_instances", "check_tasks", "CVRP", "TSP"]
