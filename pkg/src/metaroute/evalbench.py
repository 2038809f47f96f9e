"""Evaluation harness: gaps against exact references, generalization matrices,
meta versus multi-task comparisons, step-size ablations and single-instance tuning."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import edgenet, policy
from .metatrain import MetaConfig, fine_tune, meta_train_rl, meta_train_supervised, multi_task_train
from .oracles import (
    BRUTE_FORCE_CVRP_MAX,
    BRUTE_FORCE_TSP_MAX,
    HELD_KARP_MAX,
    SizeLimitError,
    brute_force_cvrp,
    brute_force_tsp,
    farthest_insertion,
    held_karp_batch,
    nearest_neighbor,
    random_tour,
)
from .params import ATTENTION, Architecture, ParameterSet
from .rltrain import (
    AdamState,
    Learner,
    TrainConfig,
    maybe_update_baseline,
    reinforce_batch_gradient,
    train_rl,
    train_supervised,
)
from .rng import Stream
from .solutions import GapReport, Tour, gap_report, solution_cost
from .taskgen import CVRP, TSP, Instance, TaskSet, TaskSpec, generate_dataset

DESK_EVAL_SIZE = 500


# solvers -----------------------------------------------------------------------------

@dataclass
class Solver:
    """Named batch solver returning ``(solutions, costs)``."""

    name: str
    run: Callable[[Sequence[Instance]], tuple[list, np.ndarray]]

    def __call__(self, instances: Sequence[Instance]):
        return self.run(instances)


def _per_instance(fn) -> Callable:
    def run(instances):
        out = [fn(i) for i in instances]
        return [o[0] for o in out], np.array([o[1] for o in out], dtype=np.float64)
    return run


def policy_solver(params: ParameterSet, name: str = "policy-greedy") -> Solver:
    return Solver(name, lambda insts: policy.greedy_solutions(params, insts))


def edgenet_solver(params: ParameterSet, name: str = "edgenet-greedy") -> Solver:
    def run(insts):
        by_size: dict[int, list[int]] = {}
        for i, inst in enumerate(insts):
            by_size.setdefault(inst.n, []).append(i)
        sols = [None] * len(insts)
        for idx in by_size.values():
            for s in range(0, len(idx), 256):
                part = idx[s:s + 256]
                for j, pred in zip(part, edgenet.predict_batch(params, [insts[k] for k in part])):
                    sols[j] = edgenet.decode(pred, insts[j])
        return sols, np.array([solution_cost(i, s) for i, s in zip(insts, sols)])
    return Solver(name, run)


def solver_for(model: ParameterSet | str) -> Solver:
    """Build a solver from trained parameters or a heuristic/oracle name."""
    if isinstance(model, ParameterSet):
        return policy_solver(model) if model.arch.kind == ATTENTION else edgenet_solver(model)
    named = {
        "farthest_insertion": _per_instance(farthest_insertion),
        "nearest_neighbor": _per_instance(nearest_neighbor),
        "held_karp": lambda insts: _oracle_run(insts, "held_karp"),
        "brute_force": lambda insts: _oracle_run(insts, "brute_force"),
    }
    if model not in named:
        raise ValueError(f"unknown solver {model!r}")
    return Solver(model, named[model])


# exact references -------------------------------------------------------------------------

def instance_key(inst: Instance) -> str:
    h = hashlib.sha256()
    h.update(inst.coords.tobytes())
    if inst.depot is not None:
        h.update(inst.depot.tobytes())
        h.update(inst.demands.tobytes())
        h.update(str(inst.capacity).encode())
    return h.hexdigest()


def _check_limits(instances: Sequence[Instance], reference: str) -> None:
    bad = []
    for i, inst in enumerate(instances):
        if inst.problem == CVRP:
            limit = BRUTE_FORCE_CVRP_MAX
        elif reference == "brute_force":
            limit = BRUTE_FORCE_TSP_MAX
        else:
            limit = HELD_KARP_MAX
        if inst.n > limit:
            bad.append(f"{i} (n={inst.n})")
    if bad:
        raise SizeLimitError(f"oracle size limit exceeded for instances: {', '.join(bad)}")


def _oracle_run(instances: Sequence[Instance], reference: str = "held_karp"):
    _check_limits(instances, reference)
    sols: list = [None] * len(instances)
    costs = np.empty(len(instances))
    tsp_groups: dict[int, list[int]] = {}
    for i, inst in enumerate(instances):
        if inst.problem == CVRP:
            sols[i], costs[i] = brute_force_cvrp(inst)
        elif reference == "brute_force":
            sols[i], costs[i] = brute_force_tsp(inst)
        else:
            tsp_groups.setdefault(inst.n, []).append(i)
    for idx in tsp_groups.values():
        c, t = held_karp_batch(np.stack([instances[i].coords for i in idx]))
        for j, k in enumerate(idx):
            sols[k], costs[k] = t[j], float(c[j])
    return sols, costs


class OracleCache:
    """Exact reference solutions keyed by instance content."""

    def __init__(self, reference: str = "held_karp"):
        self.reference = reference
        self.entries: dict[str, tuple[float, object]] = {}

    def __len__(self):
        return len(self.entries)

    def costs(self, instances: Sequence[Instance]) -> np.ndarray:
        _check_limits(instances, self.reference)
        keys = [instance_key(i) for i in instances]
        missing = [i for i, k in enumerate(keys) if k not in self.entries]
        if missing:
            sols, costs = _oracle_run([instances[i] for i in missing], self.reference)
            for i, s, c in zip(missing, sols, costs):
                self.entries[keys[i]] = (float(c), s)
        return np.array([self.entries[k][0] for k in keys])

    def solution(self, inst: Instance):
        self.costs([inst])
        return self.entries[instance_key(inst)][1]


def evaluate(solver: Solver | ParameterSet | str, dataset: Sequence[Instance], reference: str = "held_karp",
             cache: OracleCache | None = None) -> GapReport:
    """Per-instance gaps of ``solver`` against the exact reference."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if not isinstance(solver, Solver):
        solver = solver_for(solver)
    cache = cache or OracleCache(reference)
    refs = cache.costs(dataset)
    _, costs = solver(dataset)
    return gap_report(costs, refs, solver_id=solver.name, reference_id=cache.reference)


def random_tour_gap(dataset: Sequence[Instance], seed: int, cache: OracleCache | None = None) -> GapReport:
    rng = Stream(seed).spawn("random-tour")
    cache = cache or OracleCache()
    refs = cache.costs(dataset)
    costs = [random_tour(inst, rng)[1] for inst in dataset]
    return gap_report(costs, refs, solver_id="random_tour", reference_id=cache.reference)


# reports ------------------------------------------------------------------------------

@dataclass
class Report:
    """Summary rows plus optional per-instance detail rows and a reproducibility header."""

    name: str
    header: dict
    columns: list[str]
    rows: list[list]
    detail_columns: list[str] = field(default_factory=list)
    details: list[list] = field(default_factory=list)
    matrix: np.ndarray | None = None
    models: dict[str, ParameterSet] = field(default_factory=dict)

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]


def _labeled(spec: TaskSpec, size: int, seed: int) -> list[tuple[Instance, edgenet.EdgeLabels]]:
    data = generate_dataset(spec, size, seed=seed)
    sols, _ = _oracle_run(data)
    out = []
    for inst, sol in zip(data, sols):
        if isinstance(sol, Tour):
            out.append((inst, edgenet.labels_from_tour(sol, inst.n)))
        else:
            out.append((inst, edgenet.labels_from_plan(sol, inst.n)))
    return out


def _eval_set(spec: TaskSpec, size: int, seed: int, tag: str) -> list[Instance]:
    return generate_dataset(spec, size, seed=Stream(seed).spawn("eval").spawn(tag).next_u64())


def _train_from_scratch(spec: TaskSpec, kind: str, steps: int, cfg: TrainConfig, arch: Architecture | None,
                        train_size: int, seed: int) -> ParameterSet:
    arch = arch or Architecture(kind=kind, problem=spec.problem)
    if kind == ATTENTION:
        return train_rl(policy.init_params(arch, seed), spec, steps, cfg).params
    data = _labeled(spec, train_size, Stream(seed).spawn("train-data").next_u64())
    return train_supervised(edgenet.init_params(arch, seed), data, steps, cfg).params


def generalization_matrix(task_list: Sequence[TaskSpec], train_steps: int, eval_size: int = DESK_EVAL_SIZE,
                          cfg: TrainConfig | None = None, kind: str = ATTENTION,
                          arch: Architecture | None = None, train_size: int = 1000,
                          cache: OracleCache | None = None) -> Report:
    """Train one model per row task, evaluate on every column task."""
    cfg = cfg or TrainConfig()
    cache = cache or OracleCache()
    evals = [_eval_set(t, eval_size, cfg.seed, f"col{j}") for j, t in enumerate(task_list)]
    rows, details = [], []
    gaps = np.zeros((len(task_list), len(task_list)))
    for i, train_task in enumerate(task_list):
        rcfg = TrainConfig(**{**cfg.to_dict(), "seed": Stream(cfg.seed).spawn("row").spawn(i).next_u64()})
        model = _train_from_scratch(train_task, kind, train_steps, rcfg, arch, train_size, rcfg.seed)
        for j, ds in enumerate(evals):
            rep = evaluate(model, ds, cache=cache)
            gaps[i, j] = rep.mean_gap
            rows.append([train_task.label, task_list[j].label, rep.mean_gap])
            details.extend([train_task.label, task_list[j].label, k, g]
                           for k, g in enumerate(rep.per_instance_gap))
    header = {
        "kind": kind, "train_steps": train_steps, "eval_size": eval_size, "train_config": cfg.to_dict(),
        "architecture": (arch or Architecture(kind=kind, problem=task_list[0].problem)).to_dict(),
        "tasks": [t.to_dict() for t in task_list],
    }
    return Report("generalization_matrix", header, ["train_task", "test_task", "mean_gap"], rows,
                  ["train_task", "test_task", "instance", "gap"], details, matrix=gaps)


def diagonal_split(gaps: np.ndarray) -> tuple[float, float]:
    """Mean diagonal and mean off-diagonal entry."""
    n = gaps.shape[0]
    off = ~np.eye(n, dtype=bool)
    return float(np.mean(np.diag(gaps))), float(np.mean(gaps[off])) if n > 1 else float("nan")


def _fine_tune_curve(params: ParameterSet, target_pool, k_list: Sequence[int], cfg: TrainConfig,
                     eval_set: Sequence[Instance], cache: OracleCache) -> dict[int, GapReport]:
    traj = fine_tune(params, target_pool, max(k_list), cfg)
    return {k: evaluate(traj[k], eval_set, cache=cache) for k in sorted(set(k_list))}


def _check_target(prior: TaskSet, target: TaskSpec):
    if prior.contains_distribution(target):
        raise ValueError("target leaks into prior")


def meta_vs_multi_report(prior: TaskSet, target: TaskSpec, k_list: Sequence[int], meta_cfg: MetaConfig,
                         fine_cfg: TrainConfig | None = None, eval_size: int = DESK_EVAL_SIZE,
                         kind: str = ATTENTION, arch: Architecture | None = None,
                         train_size: int = 1000, cache: OracleCache | None = None,
                         models: dict[str, ParameterSet] | None = None) -> Report:
    """Gap-versus-K table for meta, multi-task and from-scratch models on a held-out task.

    ``models`` may supply previously trained ``meta``/``multi``/``scratch``
    parameters, in which case no training happens.
    """
    _check_target(prior, target)
    if not k_list or min(k_list) < 0:
        raise ValueError("K list must hold non-negative step counts")
    fine_cfg = fine_cfg or meta_cfg.inner
    cache = cache or OracleCache()
    seed = meta_cfg.seed
    budget = meta_cfg.n_outer * meta_cfg.inner_steps
    arch = arch or Architecture(kind=kind, problem=target.problem)
    eval_set = _eval_set(target, eval_size, seed, "target")
    models = dict(models or {})
    if kind == ATTENTION:
        pool = target
        if "meta" not in models:
            models["meta"] = meta_train_rl(prior, meta_cfg, arch=arch).params
        if "multi" not in models:
            mcfg = TrainConfig(**{**meta_cfg.inner.to_dict(), "seed": seed})
            models["multi"] = multi_task_train(prior, mcfg, budget, policy.init_params(arch, seed)).params
    else:
        base = Stream(seed).spawn("labeled")
        datasets = [_labeled(t, train_size, base.spawn(i).next_u64()) for i, t in enumerate(prior)]
        pool = _labeled(target, min(train_size, 1000), base.spawn("target").next_u64())
        if "meta" not in models:
            models["meta"] = meta_train_supervised(prior, datasets, meta_cfg, arch=arch).params
        if "multi" not in models:
            mcfg = TrainConfig(**{**meta_cfg.inner.to_dict(), "seed": seed})
            models["multi"] = multi_task_train(prior, mcfg, budget, edgenet.init_params(arch, seed),
                                               datasets=datasets).params
    if "scratch" not in models:
        scfg = TrainConfig(**{**meta_cfg.inner.to_dict(), "seed": seed})
        models["scratch"] = _train_from_scratch(target, kind, budget, scfg, arch, train_size, seed)
    rows, details = [], []
    for name in ("meta", "multi"):
        curve = _fine_tune_curve(models[name], pool, k_list, fine_cfg, eval_set, cache)
        for k, rep in curve.items():
            rows.append([name, k, rep.mean_gap])
            details.extend([name, k, i, g] for i, g in enumerate(rep.per_instance_gap))
    fixed = {"scratch": evaluate(models["scratch"], eval_set, cache=cache)}
    if target.problem == TSP:
        fixed["farthest_insertion"] = evaluate("farthest_insertion", eval_set, cache=cache)
    for name, rep in fixed.items():
        for k in sorted(set(k_list)):
            rows.append([name, k, rep.mean_gap])
        details.extend([name, -1, i, g] for i, g in enumerate(rep.per_instance_gap))
    header = {
        "kind": kind, "prior": [t.to_dict() for t in prior], "target": target.to_dict(),
        "k_list": sorted(set(k_list)), "meta_config": meta_cfg.to_dict(), "fine_tune_config": fine_cfg.to_dict(),
        "eval_size": eval_size, "architecture": arch.to_dict(), "budget_steps": budget,
    }
    return Report("meta_vs_multi", header, ["model", "K", "mean_gap"], rows,
                  ["model", "K", "instance", "gap"], details, models=models)


def lookup(report: Report, **match) -> list[list]:
    idx = {c: i for i, c in enumerate(report.columns)}
    return [r for r in report.rows if all(r[idx[k]] == v for k, v in match.items())]


def epsilon_ablation(prior: TaskSet, target: TaskSpec, eps_values: Sequence[float], plus_decaying: bool,
                     meta_cfg: MetaConfig, k: int = 50, fine_cfg: TrainConfig | None = None,
                     eval_size: int = DESK_EVAL_SIZE, arch: Architecture | None = None,
                     cache: OracleCache | None = None,
                     checkpoints: dict[str, ParameterSet] | None = None) -> Report:
    """One meta-training run per step-size setting; zero-shot and K-step gaps on the target.

    Passing ``checkpoints`` (setting name -> parameters) skips training and
    regenerates the table from stored models.
    """
    fine_cfg = fine_cfg or meta_cfg.inner
    cache = cache or OracleCache()
    eval_set = _eval_set(target, eval_size, meta_cfg.seed, "target")
    settings = [(f"eps={e:g}", MetaConfig(**{**meta_cfg.to_dict(), "eps0": e, "eps_decay": 1.0}))
                for e in eps_values]
    if plus_decaying:
        if meta_cfg.eps_decay <= 1:
            raise ValueError("the decaying setting needs eps_decay > 1")
        settings.append(("decaying", meta_cfg))
    rows, details, models = [], [], {}
    for name, cfg in settings:
        if checkpoints and name in checkpoints:
            theta = checkpoints[name]
        else:
            theta = meta_train_rl(prior, cfg, arch=arch).params
        models[name] = theta
        curve = _fine_tune_curve(theta, target, [0, k], fine_cfg, eval_set, cache)
        rows.append([name, curve[0].mean_gap, curve[k].mean_gap])
        for kk in (0, k):
            details.extend([name, kk, i, g] for i, g in enumerate(curve[kk].per_instance_gap))
    header = {
        "prior": [t.to_dict() for t in prior], "target": target.to_dict(), "k": k,
        "eps_values": list(eps_values), "plus_decaying": plus_decaying, "meta_config": meta_cfg.to_dict(),
        "fine_tune_config": fine_cfg.to_dict(), "eval_size": eval_size,
    }
    return Report("epsilon_ablation", header, ["setting", "before (K=0)", f"after (K={k})"], rows,
                  ["setting", "K", "instance", "gap"], details, models=models)


# single-instance adaptation ---------------------------------------------------------------

@dataclass
class InstanceTuneResult:
    solution: object
    cost: float
    gap: float | None
    best_costs: list[float]
    greedy_costs: list[float]


def per_instance_fine_tune(params: ParameterSet, inst: Instance, k: int, cfg: TrainConfig | None = None,
                           reference: float | None = None) -> InstanceTuneResult:
    """REINFORCE on copies of a single instance, keeping the best greedy solution seen."""
    if params.arch.kind != ATTENTION:
        raise ValueError("single-instance tuning needs an attention policy")
    if k < 0:
        raise ValueError("K must be >= 0")
    cfg = cfg or TrainConfig()
    root = Stream(cfg.seed).spawn("instance-tune")
    rrng = root.spawn("rollouts")
    learner = Learner(params.copy(), AdamState.zeros(params), cfg.learning_rate)
    baseline = params.copy()
    pair = [inst, inst]
    out = policy.greedy_rollout(params, inst)
    best_sol, best = out.solution, out.cost
    greedy, curve = [out.cost], [best]
    batch = [inst] * cfg.batch_size
    for step in range(k):
        grad, st = reinforce_batch_gradient(learner.params, baseline, batch, rrng)
        learner.apply(grad, st.loss, cfg)
        out = policy.greedy_rollout(learner.params, inst)
        greedy.append(out.cost)
        if out.cost < best:
            best_sol, best = out.solution, out.cost
        curve.append(best)
        if (step + 1) % cfg.baseline_every == 0:
            baseline, _, _ = maybe_update_baseline(learner.params, baseline, pair, cfg.ttest_threshold)
    gap = None if reference is None else 100.0 * (best - reference) / reference
    return InstanceTuneResult(best_sol, best, gap, curve, greedy)
