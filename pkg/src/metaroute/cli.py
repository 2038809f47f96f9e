"""Command-line entry point: ``metaroute <command> [options]``."""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import edgenet, evalbench, policy
from .io import (
    load_meta_state,
    load_params,
    normalize,
    read_cvrplib,
    read_dataset,
    read_tsplib,
    save_meta_state,
    save_params,
    write_dataset,
    write_log,
    write_report,
)
from .io.tsplib import FormatError
from .metatrain import MetaConfig, fine_tune, meta_train_rl, meta_train_supervised, multi_task_train
from .params import ATTENTION, EDGENET, Architecture
from .rltrain import TrainConfig, train_rl, train_supervised
from .rng import Stream
from .solutions import Tour
from .taskgen import PRESET_NAMES, TaskSet, TaskSpec, generate_dataset, preset_taskset


def parse_task(text: str) -> TaskSpec:
    """``"TSP:N=10,M=3"`` or ``"CVRP:N=8,C=20,M=0,L=1"``."""
    problem, _, rest = text.partition(":")
    problem = problem.strip().upper()
    keys = {"N": "n_nodes", "M": "n_modes", "C": "capacity", "L": "scale", "STD": "cluster_std", "SEED": "seed"}
    kw: dict = {"problem": problem}
    for part in filter(None, (p.strip() for p in rest.split(","))):
        k, eq, v = part.partition("=")
        k = k.strip().upper()
        if not eq or k not in keys:
            raise ValueError(f"bad task field {part!r} in {text!r}")
        kw[keys[k]] = float(v) if k in ("L", "STD") else int(v)
    return TaskSpec(**kw)


def _tasks(args) -> TaskSet:
    if getattr(args, "preset", None):
        return preset_taskset(args.preset, args.scale)
    if getattr(args, "task", None):
        return TaskSet([parse_task(t) for t in args.task])
    raise ValueError("give --preset or at least one --task")


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _safe(label: str) -> str:
    return "".join(c if c.isalnum() or c in "=-" else "_" for c in label).strip("_")


def _train_config(args) -> TrainConfig:
    return TrainConfig(learning_rate=args.lr, batch_size=args.batch_size, baseline_every=args.baseline_every,
                       baseline_eval_size=args.baseline_eval_size, seed=args.seed)


def _meta_config(args) -> MetaConfig:
    icfg = _train_config(args)
    icfg.baseline_every = max(1, args.inner_steps)
    return MetaConfig(inner_steps=args.inner_steps, eps0=args.eps0, eps_decay=args.eps_decay, n_outer=args.outer,
                      inner=icfg, seed=args.seed, checkpoint_every=args.checkpoint_every)


def _arch(args, problem: str, kind: str | None = None) -> Architecture:
    return Architecture(kind=kind or args.model, problem=problem, embed_dim=args.embed_dim, n_layers=args.layers)


def _labeled_files(paths) -> list[list]:
    return [read_dataset(p).labeled() for p in paths]


# commands -------------------------------------------------------------------------------

def cmd_generate(args) -> dict:
    tasks = _tasks(args)
    out = _out(args)
    root = Stream(args.seed).spawn("generate")
    files = []
    for i, spec in enumerate(tasks):
        data = generate_dataset(spec, args.size, seed=root.spawn(i).next_u64())
        path = out / f"{i:02d}_{_safe(spec.label)}.jsonl"
        write_dataset(path, data, meta={"task": spec.to_dict(), "seed": args.seed, "index": i})
        files.append(str(path.name))
    (out / "manifest.json").write_text(json.dumps({"files": files, "tasks": [t.to_dict() for t in tasks]},
                                                  sort_keys=True, indent=2) + "\n")
    return {"files": files}


def _solve(ds, method: str):
    if method in ("held-karp", "brute-force"):
        return evalbench._oracle_run(ds.instances, method.replace("-", "_"))
    return evalbench.solver_for(method.replace("-", "_"))(ds.instances)


def cmd_solve(args) -> dict:
    ds = read_dataset(args.data)
    method = args.oracle or args.heuristic or "held-karp"
    sols, costs = _solve(ds, method)
    out = _out(args)
    path = out / (Path(args.data).stem + f".{method}.jsonl")
    write_dataset(path, ds.instances, solutions=sols, costs=list(costs), meta={**ds.meta, "solver": method})
    return {"file": str(path.name), "mean_cost": float(np.mean(costs))}


def cmd_label(args) -> dict:
    ds = read_dataset(args.data)
    sols, costs = _solve(ds, args.oracle)
    labels = [edgenet.labels_from_tour(s, i.n) if isinstance(s, Tour) else edgenet.labels_from_plan(s, i.n)
              for i, s in zip(ds.instances, sols)]
    path = _out(args) / (Path(args.data).stem + ".labeled.jsonl")
    write_dataset(path, ds.instances, solutions=sols, costs=list(costs), labels=labels,
                  meta={**ds.meta, "labels": args.oracle})
    return {"file": str(path.name)}


def cmd_train(args) -> dict:
    out = _out(args)
    cfg = _train_config(args)
    if args.model == EDGENET:
        if not args.data:
            raise ValueError("edgenet training needs --data with labeled datasets")
        pools = _labeled_files(args.data)
        params = edgenet.init_params(_arch(args, pools[0][0][0].problem), args.seed)
        res = train_supervised(params, pools if len(pools) > 1 else pools[0], args.steps, cfg)
    else:
        tasks = _tasks(args)
        params = policy.init_params(_arch(args, tasks[0].problem), args.seed)
        res = train_rl(params, tasks, args.steps, cfg)
    save_params(out / "model.npz", res.params, {"command": "train", "config": cfg.to_dict()})
    write_log(out / "train_log.jsonl", res.log)
    return {"model": "model.npz"}


def cmd_meta_train(args) -> dict:
    out = _out(args)
    cfg = _meta_config(args)
    resume = load_meta_state(args.resume) if args.resume else None

    def checkpoint(st):
        save_meta_state(out / "meta_state.npz", st, {"config": cfg.to_dict()})

    if args.model == EDGENET:
        if not args.data:
            raise ValueError("edgenet meta-training needs --data, one labeled dataset per task")
        pools = _labeled_files(args.data)
        tasks = TaskSet([p[0][0].source_task for p in pools])
        arch = _arch(args, tasks[0].problem)
        res = meta_train_supervised(tasks, pools, cfg, arch=arch, resume=resume, checkpoint=checkpoint)
    else:
        tasks = _tasks(args)
        res = meta_train_rl(tasks, cfg, arch=_arch(args, tasks[0].problem), resume=resume, checkpoint=checkpoint)
    save_params(out / "model.npz", res.params, {"command": "meta-train", "config": cfg.to_dict()})
    save_meta_state(out / "meta_state.npz", res.state, {"config": cfg.to_dict()})
    write_log(out / "train_log.jsonl", res.log)
    return {"model": "model.npz", "iterations": res.state.iteration}


def cmd_multi_train(args) -> dict:
    out = _out(args)
    cfg = _train_config(args)
    if args.model == EDGENET:
        pools = _labeled_files(args.data or [])
        if not pools:
            raise ValueError("edgenet multi-task training needs --data")
        tasks = TaskSet([p[0][0].source_task for p in pools])
        res = multi_task_train(tasks, cfg, args.steps, datasets=pools, arch=_arch(args, tasks[0].problem))
    else:
        tasks = _tasks(args)
        res = multi_task_train(tasks, cfg, args.steps, arch=_arch(args, tasks[0].problem))
    save_params(out / "model.npz", res.params, {"command": "multi-train", "config": cfg.to_dict()})
    write_log(out / "train_log.jsonl", res.log)
    return {"model": "model.npz"}


def _instance_file(path: str):
    text = Path(path).read_text()
    return read_cvrplib(path) if "CVRP" in text.split("NODE_COORD_SECTION")[0].upper() else read_tsplib(path)


def cmd_fine_tune(args) -> dict:
    out = _out(args)
    params, _ = load_params(args.params)
    cfg = _train_config(args)
    if args.instance:
        rows = []
        for path in args.instance:
            raw = _instance_file(path)
            inst, factor, _ = normalize(raw) if args.normalize == "on" else (raw, 1.0, None)
            res = evalbench.per_instance_fine_tune(params, inst, args.k, cfg)
            rows.append([raw.name or Path(path).stem, res.greedy_costs[0] * factor, res.cost * factor])
        rep = evalbench.Report("instance_fine_tune", {"k": args.k, "normalize": args.normalize,
                                                      "config": cfg.to_dict(),
                                                      "files": [_file_ref(p) for p in args.instance]},
                               ["instance", "cost_k0", f"best_cost_k{args.k}"], rows)
        write_report(rep, out)
        return {"report": rep.name}
    if args.data:
        ds = read_dataset(args.data[0])
        target = ds.labeled() if params.arch.kind == EDGENET else ds.instances
    else:
        target = _tasks(args)[0]
    traj = fine_tune(params, target, args.k, cfg)
    save_params(out / "model.npz", traj[-1], {"command": "fine-tune", "k": args.k, "config": cfg.to_dict()})
    return {"model": "model.npz", "steps": len(traj) - 1}


def _file_ref(path) -> dict:
    # name and content digest rather than the absolute path, so reruns elsewhere match
    return {"name": Path(path).name, "sha256": hashlib.sha256(Path(path).read_bytes()).hexdigest()}


def cmd_evaluate(args) -> dict:
    ds = read_dataset(args.data[0])
    model = load_params(args.params)[0] if args.params else (args.solver or "farthest_insertion").replace("-", "_")
    rep = evalbench.evaluate(model, ds.instances, reference=args.reference.replace("-", "_"))
    report = evalbench.Report(
        "evaluate", {"data": _file_ref(args.data[0]), "solver": rep.solver_id, "reference": rep.reference_id,
                     "size": len(ds)},
        ["solver", "reference", "mean_gap"], [[rep.solver_id, rep.reference_id, rep.mean_gap]],
        ["instance", "cost", "reference_cost", "gap"],
        [[i, c, r, g] for i, (c, r, g) in enumerate(zip(rep.costs, rep.reference_costs, rep.per_instance_gap))])
    write_report(report, _out(args))
    return {"mean_gap": rep.mean_gap}


def cmd_gen_matrix(args) -> dict:
    tasks = _tasks(args)
    rep = evalbench.generalization_matrix(list(tasks), args.steps, args.eval_size, _train_config(args),
                                          kind=args.model, arch=_arch(args, tasks[0].problem),
                                          train_size=args.train_size)
    write_report(rep, _out(args))
    diag, off = evalbench.diagonal_split(rep.matrix)
    return {"diagonal": diag, "off_diagonal": off}


def cmd_ablate_eps(args) -> dict:
    prior = _tasks(args)
    target = parse_task(args.target)
    rep = evalbench.epsilon_ablation(prior, target, args.eps, args.decaying, _meta_config(args), k=args.k,
                                     eval_size=args.eval_size, arch=_arch(args, target.problem, ATTENTION))
    out = _out(args)
    write_report(rep, out)
    for name, p in rep.models.items():
        save_params(out / f"ablation_{_safe(name)}.npz", p)
    return {"rows": len(rep.rows)}


def cmd_report(args) -> dict:
    prior = _tasks(args)
    target = parse_task(args.target)
    models = {}
    for spec in args.model_file or []:
        name, _, path = spec.partition("=")
        models[name] = load_params(path)[0]
    rep = evalbench.meta_vs_multi_report(prior, target, args.k_list, _meta_config(args), eval_size=args.eval_size,
                                         kind=args.model, arch=_arch(args, target.problem),
                                         train_size=args.train_size, models=models)
    write_report(rep, _out(args))
    return {"rows": len(rep.rows)}


# parser -----------------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON file whose keys override option defaults")
    p.add_argument("--out", default="out")


def _task_opts(p):
    p.add_argument("--preset", choices=PRESET_NAMES)
    p.add_argument("--scale", choices=("paper", "desk"), default="desk")
    p.add_argument("--task", action="append", help='task string such as "TSP:N=10,M=2" (repeatable)')


def _model_opts(p):
    p.add_argument("--model", choices=(ATTENTION, EDGENET), default=ATTENTION)
    p.add_argument("--embed-dim", type=int, default=32)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--baseline-every", type=int, default=50)
    p.add_argument("--baseline-eval-size", type=int, default=256)
    p.add_argument("--data", action="append", help="dataset file (repeatable)")


def _meta_opts(p):
    p.add_argument("--outer", type=int, default=100)
    p.add_argument("--inner-steps", type=int, default=10)
    p.add_argument("--eps0", type=float, default=0.99)
    p.add_argument("--eps-decay", type=float, default=1.0003)
    p.add_argument("--checkpoint-every", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metaroute", description="Meta-learned routing heuristics.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample datasets from a task or preset")
    _common(p)
    _task_opts(p)
    p.add_argument("--size", type=int, default=100)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("solve", help="solve a dataset with an oracle or heuristic")
    _common(p)
    p.add_argument("--data", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--oracle", choices=("held-karp", "brute-force"))
    g.add_argument("--heuristic", choices=("farthest-insertion", "nearest-neighbor"))
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("label", help="attach exact solutions and edge labels")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--oracle", choices=("held-karp", "brute-force"), default="held-karp")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", help="plain training")
    _common(p)
    _task_opts(p)
    _model_opts(p)
    p.add_argument("--steps", type=int, default=500)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("meta-train", help="Reptile meta-training")
    _common(p)
    _task_opts(p)
    _model_opts(p)
    _meta_opts(p)
    p.add_argument("--resume", help="meta_state.npz to continue from")
    p.set_defaults(func=cmd_meta_train)

    p = sub.add_parser("multi-train", help="multi-task baseline training")
    _common(p)
    _task_opts(p)
    _model_opts(p)
    p.add_argument("--steps", type=int, default=500)
    p.set_defaults(func=cmd_multi_train)

    p = sub.add_parser("fine-tune", help="adapt a trained model to a target task or instance")
    _common(p)
    _task_opts(p)
    _model_opts(p)
    p.add_argument("--params", required=True)
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--instance", action="append", help="TSPLIB/CVRPLIB file for single-instance tuning")
    p.add_argument("--normalize", choices=("on", "off"), default="on")
    p.set_defaults(func=cmd_fine_tune)

    p = sub.add_parser("evaluate", help="optimality gaps on a dataset")
    _common(p)
    p.add_argument("--data", action="append", required=True)
    p.add_argument("--params")
    p.add_argument("--solver", choices=("farthest-insertion", "nearest-neighbor", "held-karp"))
    p.add_argument("--reference", choices=("held-karp", "brute-force"), default="held-karp")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gen-matrix", help="train-task by test-task gap matrix")
    _common(p)
    _task_opts(p)
    _model_opts(p)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--eval-size", type=int, default=evalbench.DESK_EVAL_SIZE)
    p.add_argument("--train-size", type=int, default=1000)
    p.set_defaults(func=cmd_gen_matrix)

    p = sub.add_parser("ablate-eps", help="fixed versus decaying meta step size")
    _common(p)
    _task_opts(p)
    _model_opts(p)
    _meta_opts(p)
    p.add_argument("--target", required=True)
    p.add_argument("--eps", type=float, nargs="+", default=[0.1, 0.5, 0.9])
    p.add_argument("--decaying", action="store_true")
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--eval-size", type=int, default=evalbench.DESK_EVAL_SIZE)
    p.set_defaults(func=cmd_ablate_eps)

    p = sub.add_parser("report", help="meta versus multi-task versus from-scratch table")
    _common(p)
    _task_opts(p)
    _model_opts(p)
    _meta_opts(p)
    p.add_argument("--target", required=True)
    p.add_argument("--k-list", type=int, nargs="+", default=[0, 10, 50])
    p.add_argument("--eval-size", type=int, default=evalbench.DESK_EVAL_SIZE)
    p.add_argument("--train-size", type=int, default=1000)
    p.add_argument("--model-file", action="append", help="NAME=PATH of a trained meta/multi/scratch model")
    p.set_defaults(func=cmd_report)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if args.config:
        cfg = json.loads(Path(args.config).read_text())
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(k for k in cfg if k.replace("-", "_") not in known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        sub.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        result = args.func(args)
    except SystemExit:
        raise
    except (ValueError, TypeError, KeyError, OSError, FormatError) as exc:
        print(json.dumps({"status": "error", "error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps({"status": "ok", "command": args.command, **result}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
