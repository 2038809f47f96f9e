"""Reptile meta-training, multi-task training and fine-tuning."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import edgenet, policy
from .edgenet import EdgeLabels
from .params import ATTENTION, EDGENET, Architecture, ParameterSet
from .rltrain import (
    AdamState,
    Learner,
    TrainConfig,
    TrainResult,
    baseline_eval_set,
    data_streams,
    draw_labeled_batch,
    maybe_update_baseline,
    reinforce_batch_gradient,
    rl_step,
    supervised_gradient,
    supervised_step,
    train_rl,
    train_supervised,
)
from .rng import Stream
from .taskgen import Instance, TaskSet, TaskSpec, generate_dataset

EPS_FLOOR = 1e-6
RL_POOL_CAP = 3000
SUPERVISED_POOL_CAP = 1000


@dataclass
class MetaConfig:
    """Outer-loop settings.  ``eps_decay == 1`` keeps the step size fixed."""

    inner_steps: int = 10
    eps0: float = 0.99
    eps_decay: float = 1.0003
    n_outer: int = 100
    wall_clock: float | None = None
    inner: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if isinstance(self.inner, dict):
            self.inner = TrainConfig.from_dict(self.inner)
        if self.inner_steps < 0:
            raise ValueError("inner_steps must be >= 0")
        if not 0 < self.eps0 <= 1:
            raise ValueError("eps0 must lie in (0, 1]")
        if not self.eps_decay >= 1:
            raise ValueError("eps_decay must be >= 1")
        if self.n_outer < 0:
            raise ValueError("n_outer must be >= 0")
        if self.wall_clock is not None and not self.wall_clock > 0:
            raise ValueError("wall_clock must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["inner"] = self.inner.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetaConfig":
        return cls(**d)


def reptile_update(theta: ParameterSet, theta_task: ParameterSet, eps: float) -> ParameterSet:
    """``(1 - eps) * theta + eps * theta_task``, exact where the two already agree."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must lie in [0, 1]")
    mixed = theta.combine(1.0 - eps, theta_task, eps)
    return ParameterSet(
        {k: np.where(theta[k] == theta_task[k], theta[k], v) for k, v in mixed.arrays.items()}, theta.arch)


def decay_epsilon(eps: float, eps_decay: float) -> float:
    """Divide by ``eps_decay``; the result never drops below ``EPS_FLOOR``."""
    if not eps_decay > 1:
        raise ValueError("eps_decay must be > 1")
    nxt = eps / eps_decay
    if nxt >= EPS_FLOOR:
        return nxt
    return min(eps, EPS_FLOOR)


def epsilon_schedule(eps0: float, eps_decay: float, n: int) -> list[float]:
    out = [eps0]
    for _ in range(n):
        out.append(out[-1] if eps_decay == 1 else decay_epsilon(out[-1], eps_decay))
    return out


@dataclass
class MetaState:
    """Everything needed to resume an outer loop exactly."""

    theta: ParameterSet
    eps: float
    iteration: int
    baselines: dict[int, ParameterSet] = field(default_factory=dict)
    adam: dict[int, AdamState] = field(default_factory=dict)
    lr: dict[int, float] = field(default_factory=dict)
    rng: dict[str, dict] = field(default_factory=dict)
    log: list[dict] = field(default_factory=list)


@dataclass
class MetaResult:
    params: ParameterSet
    baselines: dict[int, ParameterSet]
    log: list[dict]
    state: MetaState


def _default_params(tasks: TaskSet, kind: str, seed: int, arch: Architecture | None) -> ParameterSet:
    arch = arch or Architecture(kind=kind, problem=tasks[0].problem)
    if arch.kind == ATTENTION:
        return policy.init_params(arch, seed)
    return edgenet.init_params(arch, seed)


class _Streams:
    """Named, lazily created substreams whose states can be saved and restored."""

    def __init__(self, root: Stream, saved: dict[str, dict] | None = None):
        self.root = root
        self.live: dict[str, Stream] = {}
        self.saved = dict(saved or {})

    def get(self, name: str, make: Callable[[], Stream]) -> Stream:
        if name not in self.live:
            self.live[name] = Stream.from_state(self.saved[name]) if name in self.saved else make()
        return self.live[name]

    def states(self) -> dict[str, dict]:
        out = dict(self.saved)
        out.update({k: s.get_state() for k, s in self.live.items()})
        return out


def _outer_loop(tasks: TaskSet, cfg: MetaConfig, params: ParameterSet, inner: Callable,
                resume: MetaState | None, checkpoint: Callable[[MetaState], None] | None) -> MetaState:
    root = Stream(cfg.seed)
    st = resume or MetaState(theta=params.copy(), eps=cfg.eps0, iteration=0)
    streams = _Streams(root, st.rng)
    task_rng = streams.get("tasks", lambda: root.spawn("tasks"))
    start = time.monotonic()
    while st.iteration < cfg.n_outer:
        if cfg.wall_clock is not None and time.monotonic() - start > cfg.wall_clock:
            break
        ti = tasks.sample(task_rng)
        if ti not in st.adam:
            st.adam[ti] = AdamState.zeros(st.theta)
            st.lr[ti] = cfg.inner.learning_rate
        learner = Learner(st.theta.copy(), st.adam[ti], st.lr[ti])
        rec = {"iteration": st.iteration, "task": ti, "eps": st.eps}
        rec.update(inner(st, ti, learner, streams, root))
        st.theta = reptile_update(st.theta, learner.params, st.eps)
        st.adam[ti], st.lr[ti] = learner.adam, learner.lr
        if cfg.eps_decay > 1:
            st.eps = decay_epsilon(st.eps, cfg.eps_decay)
        st.log.append(rec)
        st.iteration += 1
        if checkpoint is not None and cfg.checkpoint_every and st.iteration % cfg.checkpoint_every == 0:
            st.rng = streams.states()
            checkpoint(st)
    st.rng = streams.states()
    return st


def meta_train_rl(tasks: TaskSet, cfg: MetaConfig, params: ParameterSet | None = None,
                  arch: Architecture | None = None, resume: MetaState | None = None,
                  checkpoint: Callable[[MetaState], None] | None = None) -> MetaResult:
    """Reptile over REINFORCE inner loops with lazily created per-task baselines."""
    if len(tasks) == 0:
        raise ValueError("empty task set")
    if params is None:
        params = _default_params(tasks, ATTENTION, cfg.seed, arch)
    icfg = cfg.inner
    eval_sets: dict[int, list[Instance]] = {}

    def inner(st: MetaState, ti: int, learner: Learner, streams: _Streams, root: Stream) -> dict:
        spec = tasks[ti]
        if ti not in st.baselines:
            st.baselines[ti] = st.theta.copy()
        if ti not in eval_sets:
            eval_sets[ti] = baseline_eval_set(spec, icfg, root, ti)
        d0, r0 = data_streams(root, ti)
        drng = streams.get(f"data/{ti}", lambda: d0)
        rrng = streams.get(f"rollouts/{ti}", lambda: r0)
        costs = [rl_step(learner, st.baselines[ti], spec, icfg, drng, rrng).mean_cost
                 for _ in range(cfg.inner_steps)]
        st.baselines[ti], res, upd = maybe_update_baseline(
            learner.params, st.baselines[ti], eval_sets[ti], icfg.ttest_threshold)
        out = {"p_value": res.p_value, "baseline_updated": upd}
        if costs:
            out["mean_cost"] = sum(costs) / len(costs)
        return out

    st = _outer_loop(tasks, cfg, params, inner, resume, checkpoint)
    return MetaResult(st.theta, st.baselines, st.log, st)


def meta_train_supervised(tasks: TaskSet, datasets: Sequence[Sequence[tuple[Instance, EdgeLabels]]],
                          cfg: MetaConfig, params: ParameterSet | None = None,
                          arch: Architecture | None = None, resume: MetaState | None = None,
                          checkpoint: Callable[[MetaState], None] | None = None) -> MetaResult:
    """Reptile over supervised edge-model inner loops; ``datasets[i]`` labels task ``i``."""
    if len(datasets) != len(tasks):
        raise ValueError("every task needs a labeled dataset")
    for i, d in enumerate(datasets):
        if not d or any(lab is None for _, lab in d):
            raise ValueError(f"task {i} is missing labels")
    if params is None:
        params = _default_params(tasks, EDGENET, cfg.seed, arch)

    def inner(st: MetaState, ti: int, learner: Learner, streams: _Streams, root: Stream) -> dict:
        rng = streams.get(f"data/{ti}", lambda: root.spawn("data").spawn(ti))
        losses = [supervised_step(learner, datasets[ti], cfg.inner, rng) for _ in range(cfg.inner_steps)]
        return {"loss": sum(losses) / len(losses)} if losses else {}

    st = _outer_loop(tasks, cfg, params, inner, resume, checkpoint)
    return MetaResult(st.theta, {}, st.log, st)


def multi_task_train(tasks: TaskSet, cfg: TrainConfig, n_steps: int, params: ParameterSet | None = None,
                     datasets: Sequence[Sequence[tuple[Instance, EdgeLabels]]] | None = None,
                     arch: Architecture | None = None) -> TrainResult:
    """Ordinary training where each batch comes from a uniformly drawn task."""
    if datasets is None:
        if params is None:
            params = _default_params(tasks, ATTENTION, cfg.seed, arch)
        return train_rl(params, tasks, n_steps, cfg)
    if len(datasets) != len(tasks):
        raise ValueError("every task needs a labeled dataset")
    if params is None:
        params = _default_params(tasks, EDGENET, cfg.seed, arch)
    return train_supervised(params, list(datasets), n_steps, cfg)


# fine-tuning -------------------------------------------------------------------------

def _rl_pool(target, cap: int, seed: int) -> list[Instance]:
    if isinstance(target, TaskSpec):
        return generate_dataset(target, cap, seed=Stream(seed).spawn("pool").next_u64())
    pool = list(target)[:cap]
    if not pool:
        raise ValueError("empty fine-tuning pool")
    return pool


def fine_tune(params: ParameterSet, target: TaskSpec | Sequence, k: int, cfg: TrainConfig,
              pool_cap: int | None = None) -> list[ParameterSet]:
    """Trajectory ``[theta_0, ..., theta_K]`` of inner-loop updates on target data.

    Attention models take a TaskSpec or an instance list and train with
    REINFORCE; edge models take ``(instance, labels)`` pairs.  Adam starts from
    zero moments.
    """
    if k < 0:
        raise ValueError("K must be >= 0")
    traj = [params.copy()]
    if k == 0:
        return traj
    learner = Learner.start(params, cfg)
    root = Stream(cfg.seed).spawn("fine-tune")
    if params.arch.kind == EDGENET:
        pool = list(target)[: pool_cap or SUPERVISED_POOL_CAP]
        if not pool:
            raise ValueError("empty fine-tuning pool")
        rng = root.spawn("data")
        for _ in range(k):
            supervised_step(learner, pool, cfg, rng)
            traj.append(learner.params.copy())
        return traj
    pool = _rl_pool(target, pool_cap or RL_POOL_CAP, cfg.seed)
    eval_set = pool[: cfg.baseline_eval_size]
    baseline = params.copy()
    drng, rrng = root.spawn("data"), root.spawn("rollouts")
    for step in range(k):
        batch = [pool[drng.integers(len(pool))] for _ in range(cfg.batch_size)]
        grad, st = reinforce_batch_gradient(learner.params, baseline, batch, rrng)
        learner.apply(grad, st.loss, cfg)
        traj.append(learner.params.copy())
        if (step + 1) % cfg.baseline_every == 0:
            baseline, _, _ = maybe_update_baseline(learner.params, baseline, eval_set, cfg.ttest_threshold)
    return traj


def fine_tune_supervised_batch(params: ParameterSet, batch: Sequence[tuple[Instance, EdgeLabels]],
                               k: int, cfg: TrainConfig) -> list[ParameterSet]:
    """``k`` Adam steps on one fixed labeled batch."""
    learner = Learner.start(params, cfg)
    traj = [params.copy()]
    for _ in range(k):
        grad, loss = supervised_gradient(learner.params, batch)
        learner.apply(grad, loss, cfg)
        traj.append(learner.params.copy())
    return traj


__all__ = [
    "EPS_FLOOR", "MetaConfig", "MetaResult", "MetaState", "decay_epsilon", "epsilon_schedule",
    "fine_tune", "fine_tune_supervised_batch", "meta_train_rl", "meta_train_supervised",
    "multi_task_train", "reptile_update", "draw_labeled_batch",
]
