"""REINFORCE with a greedy-rollout baseline, Adam, and the supervised edge-model step."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from . import edgenet
from . import policy
from . import tensor as tn
from .edgenet import EdgeLabels
from .params import ParameterSet
from .rng import Stream
from .taskgen import Instance, TaskSet, TaskSpec, generate_dataset, sample_batch


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 128
    ttest_threshold: float = 0.05
    baseline_eval_size: int = 256
    baseline_every: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not 0 < self.ttest_threshold < 1:
            raise ValueError("ttest_threshold must lie in (0, 1)")
        if self.baseline_eval_size < 2:
            raise ValueError("baseline_eval_size must be >= 2")
        if self.baseline_every < 1:
            raise ValueError("baseline_every must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.adam_eps > 0):
            raise ValueError("invalid Adam hyper-parameters")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class AdamState:
    m: ParameterSet
    v: ParameterSet
    step: int = 0

    @classmethod
    def zeros(cls, params: ParameterSet) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), 0)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.step)


def adam_step(params: ParameterSet, grad: ParameterSet, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> tuple[ParameterSet, AdamState]:
    """One bias-corrected Adam update; returns new objects and leaves the inputs alone."""
    params._check_compatible(grad)
    params._check_compatible(state.m)
    t = state.step + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.arrays.items():
        g = grad.arrays[k]
        m = beta1 * state.m.arrays[k] + (1.0 - beta1) * g
        v = beta2 * state.v.arrays[k] + (1.0 - beta2) * g * g
        new_p[k] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_m[k], new_v[k] = m, v
    arch = params.arch
    return ParameterSet(new_p, arch), AdamState(ParameterSet(new_m, arch), ParameterSet(new_v, arch), t)


# REINFORCE --------------------------------------------------------------------------

@dataclass
class BatchStats:
    mean_cost: float
    mean_baseline: float
    loss: float


def reinforce_batch_gradient(params: ParameterSet, baseline: ParameterSet, batch: Sequence[Instance],
                             rng: Stream) -> tuple[ParameterSet, BatchStats]:
    """``sum_k (c_k - b_k) grad log pi(sigma_k) / B`` with ``b_k`` the baseline's greedy cost."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    out, T = policy.rollout_batch(params, batch, "sample", rng=rng, track_grad=True)
    base = policy.rollout_batch(baseline, batch, "greedy").costs
    adv = out.costs - base
    surrogate = tn.scale(tn.sum(out.log_prob * adv), 1.0 / len(batch))
    tn.backward(surrogate)
    grad = policy.leaf_gradients(T, params)
    return grad, BatchStats(float(out.costs.mean()), float(base.mean()), float(surrogate.item()))


@dataclass
class TTestResult:
    t_statistic: float
    p_value: float
    n: int


def one_sided_paired_ttest(cand_costs: Sequence[float], base_costs: Sequence[float]) -> TTestResult:
    """Paired t-test of H1: mean(cand - base) < 0."""
    a = np.asarray(cand_costs, dtype=np.float64)
    b = np.asarray(base_costs, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be equal-length 1-D lists")
    n = a.shape[0]
    if n < 2:
        raise ValueError("paired t-test needs at least 2 pairs")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean < 0:
            return TTestResult(-math.inf, 0.0, n)
        if mean > 0:
            return TTestResult(math.inf, 1.0, n)
        return TTestResult(0.0, 0.5, n)
    t = mean / (sd / math.sqrt(n))
    return TTestResult(t, float(stats.t.cdf(t, n - 1)), n)


def maybe_update_baseline(params: ParameterSet, baseline: ParameterSet, eval_set: Sequence[Instance],
                          beta: float) -> tuple[ParameterSet, TTestResult, bool]:
    """Replace the baseline by a copy of ``params`` when its greedy costs are significantly lower."""
    if len(eval_set) == 0:
        raise ValueError("empty baseline evaluation set")
    cand = policy.greedy_costs(params, eval_set)
    base = policy.greedy_costs(baseline, eval_set)
    res = one_sided_paired_ttest(cand, base)
    if res.p_value < beta:
        return params.copy(), res, True
    return baseline, res, False


# supervised step --------------------------------------------------------------------

def supervised_gradient(params: ParameterSet, batch: Sequence[tuple[Instance, EdgeLabels]]
                        ) -> tuple[ParameterSet, float]:
    if len(batch) == 0:
        raise ValueError("empty batch")
    insts = [b[0] for b in batch]
    labs = [b[1] for b in batch]
    loss, T = edgenet.batch_loss(params, insts, labs, track_grad=True)
    tn.backward(loss)
    return policy.leaf_gradients(T, params), loss.item()


def supervised_batch_step(params: ParameterSet, batch: Sequence[tuple[Instance, EdgeLabels]],
                          cfg: TrainConfig, state: AdamState | None = None, lr: float | None = None
                          ) -> tuple[ParameterSet, AdamState, float]:
    """One Adam step on the weighted BCE of ``batch``; the loss is the pre-step value."""
    state = AdamState.zeros(params) if state is None else state
    grad, loss = supervised_gradient(params, batch)
    lr = cfg.learning_rate if lr is None else lr
    new, state = adam_step(params, grad, state, lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    return new, state, loss


# training loops -----------------------------------------------------------------

def _finite(grad: ParameterSet, loss: float) -> bool:
    return math.isfinite(loss) and grad.all_finite()


@dataclass
class Learner:
    """Mutable inner-loop state for one task: parameters, optimizer, step size."""

    params: ParameterSet
    adam: AdamState
    lr: float

    @classmethod
    def start(cls, params: ParameterSet, cfg: TrainConfig) -> "Learner":
        return cls(params.copy(), AdamState.zeros(params), cfg.learning_rate)

    def apply(self, grad: ParameterSet, loss: float, cfg: TrainConfig) -> bool:
        """Adam update, or halve the step size and skip when the batch is non-finite."""
        if not _finite(grad, loss):
            self.lr *= 0.5
            return False
        self.params, self.adam = adam_step(self.params, grad, self.adam, self.lr,
                                           cfg.beta1, cfg.beta2, cfg.adam_eps)
        return True


def rl_step(learner: Learner, baseline: ParameterSet, spec: TaskSpec, cfg: TrainConfig,
            data_rng: Stream, rollout_rng: Stream) -> BatchStats:
    batch = sample_batch(spec, cfg.batch_size, data_rng)
    grad, st = reinforce_batch_gradient(learner.params, baseline, batch, rollout_rng)
    learner.apply(grad, st.loss, cfg)
    return st


def baseline_eval_set(spec: TaskSpec, cfg: TrainConfig, root: Stream, task_index: int) -> list[Instance]:
    key = root.spawn("baseline-eval").spawn(task_index).next_u64()
    return generate_dataset(spec, cfg.baseline_eval_size, seed=key)


def data_streams(root: Stream, task_index: int) -> tuple[Stream, Stream]:
    return root.spawn("data").spawn(task_index), root.spawn("rollouts").spawn(task_index)


@dataclass
class TrainResult:
    params: ParameterSet
    baseline: ParameterSet | None = None
    log: list[dict] = field(default_factory=list)


def train_rl(params: ParameterSet, task: TaskSpec | TaskSet, n_steps: int, cfg: TrainConfig,
             log_every: int = 1) -> TrainResult:
    """Plain REINFORCE training; with a TaskSet each batch comes from a uniformly drawn task.

    The baseline is tested against the current policy every ``cfg.baseline_every`` steps.
    """
    tasks = task if isinstance(task, TaskSet) else TaskSet([task])
    root = Stream(cfg.seed)
    task_rng = root.spawn("tasks")
    data_rng, rollout_rng = data_streams(root, 0)
    per_task = -(-cfg.baseline_eval_size // len(tasks))
    sub = TrainConfig(**{**cfg.to_dict(), "baseline_eval_size": max(2, per_task)})
    eval_set = [inst for i, t in enumerate(tasks) for inst in baseline_eval_set(t, sub, root, i)]
    learner = Learner.start(params, cfg)
    baseline = params.copy()
    log: list[dict] = []
    for step in range(n_steps):
        ti = tasks.sample(task_rng) if len(tasks) > 1 else 0
        st = rl_step(learner, baseline, tasks[ti], cfg, data_rng, rollout_rng)
        rec = {"step": step, "task": ti, "mean_cost": st.mean_cost, "loss": st.loss}
        if (step + 1) % cfg.baseline_every == 0:
            baseline, res, upd = maybe_update_baseline(learner.params, baseline, eval_set, cfg.ttest_threshold)
            rec.update(p_value=res.p_value, baseline_updated=upd)
        if step % log_every == 0 or "p_value" in rec:
            log.append(rec)
    return TrainResult(learner.params, baseline, log)


def draw_labeled_batch(data: Sequence[tuple[Instance, EdgeLabels]], size: int, rng: Stream):
    return [data[rng.integers(len(data))] for _ in range(size)]


def supervised_step(learner: Learner, data: Sequence[tuple[Instance, EdgeLabels]], cfg: TrainConfig,
                    rng: Stream) -> float:
    batch = draw_labeled_batch(data, cfg.batch_size, rng)
    grad, loss = supervised_gradient(learner.params, batch)
    learner.apply(grad, loss, cfg)
    return loss


def train_supervised(params: ParameterSet, data: Sequence[tuple[Instance, EdgeLabels]] | Sequence[Sequence],
                     n_steps: int, cfg: TrainConfig, log_every: int = 1) -> TrainResult:
    """Plain supervised training on a labeled pool.

    ``data`` is either one pool of ``(instance, labels)`` pairs or a list of
    pools, in which case every batch is drawn from a uniformly chosen pool.
    """
    pools = _as_pools(data)
    root = Stream(cfg.seed)
    task_rng = root.spawn("tasks")
    rng = root.spawn("data").spawn(0)
    learner = Learner.start(params, cfg)
    log = []
    for step in range(n_steps):
        ti = task_rng.integers(len(pools)) if len(pools) > 1 else 0
        loss = supervised_step(learner, pools[ti], cfg, rng)
        if step % log_every == 0:
            log.append({"step": step, "task": ti, "loss": loss})
    return TrainResult(learner.params, None, log)


def _as_pools(data) -> list[list]:
    if len(data) == 0:
        raise ValueError("empty labeled dataset")
    first = data[0]
    if isinstance(first, tuple) and len(first) == 2 and isinstance(first[0], Instance):
        return [list(data)]
    pools = [list(p) for p in data]
    if any(len(p) == 0 for p in pools):
        raise ValueError("empty labeled dataset")
    return pools
