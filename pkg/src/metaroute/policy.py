"""Attention encoder-decoder policy for TSP and CVRP.

The encoder runs ``n_layers`` rounds of single-head self-attention with a
feed-forward sublayer, residual connections and layer normalisation.  The
decoder builds a solution one node at a time: a context query attends once
over the node embeddings (the glimpse), then clipped ``tanh`` compatibilities
give the logits of a masked softmax over feasible nodes.

All functions work on batches of same-size instances; node ``0`` of a CVRP
model input is the depot and customers are ``1..N``.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as tn
from .params import ATTENTION, Architecture, ParameterSet, init_uniform
from .rng import Stream
from .solutions import RoutePlan, Tour
from .taskgen import CVRP, TSP, Instance
from .tensor import Tensor


@dataclass
class Rollout:
    solution: Tour | RoutePlan
    log_prob: float
    cost: float
    actions: tuple[int, ...] = ()


@dataclass
class BatchRollout:
    actions: np.ndarray  # (B, steps)
    costs: np.ndarray  # (B,)
    log_prob: Tensor | np.ndarray  # (B,)
    problem: str

    def solutions(self) -> list[Tour | RoutePlan]:
        if self.problem == TSP:
            return [Tour(tuple(a)) for a in self.actions]
        return [RoutePlan.from_sequence(a) for a in self.actions]

    def log_prob_values(self) -> np.ndarray:
        lp = self.log_prob
        return lp.data if isinstance(lp, Tensor) else np.asarray(lp)


# parameters -------------------------------------------------------------------

def param_shapes(arch: Architecture) -> dict[str, tuple[int, ...]]:
    d, f = arch.embed_dim, arch.ff
    cvrp = arch.problem == CVRP
    s: dict[str, tuple[int, ...]] = {
        "enc.in.W": (3 if cvrp else 2, d),
        "enc.in.b": (d,),
    }
    if cvrp:
        s["enc.depot.W"] = (2, d)
        s["enc.depot.b"] = (d,)
    for layer in range(arch.n_layers):
        p = f"enc.{layer}."
        for w in ("Wq", "Wk", "Wv", "Wo"):
            s[p + w] = (d, d)
        s[p + "ln1.ln_g"] = (d,)
        s[p + "ln1.ln_b"] = (d,)
        s[p + "ff1.W"] = (d, f)
        s[p + "ff1.b"] = (f,)
        s[p + "ff2.W"] = (f, d)
        s[p + "ff2.b"] = (d,)
        s[p + "ln2.ln_g"] = (d,)
        s[p + "ln2.ln_b"] = (d,)
    s["dec.Wfix"] = (d, d)
    if cvrp:
        s["dec.Wstep"] = (d + 1, d)
    else:
        s["dec.Wstep"] = (2 * d, d)
        s["dec.v_first"] = (d,)
        s["dec.v_last"] = (d,)
    for w in ("Wgk", "Wgv", "Wgo", "Wlk"):
        s["dec." + w] = (d, d)
    return s


def parameter_count(arch: Architecture) -> int:
    """Closed form of the number of scalars in :func:`param_shapes`.

    TSP:  3d + L(4d^2 + 2df + f + 5d) + 7d^2 + 2d
    CVRP: 7d + L(4d^2 + 2df + f + 5d) + 6d^2 + d
    """
    d, f, L = arch.embed_dim, arch.ff, arch.n_layers
    layers = L * (4 * d * d + 2 * d * f + f + 5 * d)
    if arch.problem == CVRP:
        return 7 * d + layers + 6 * d * d + d
    return 3 * d + layers + 7 * d * d + 2 * d


def init_params(arch: Architecture, seed: int | Stream = 0) -> ParameterSet:
    if arch.kind != ATTENTION:
        raise ValueError("init_params expects an attention architecture")
    return init_uniform(param_shapes(arch), arch, seed)


# batching ---------------------------------------------------------------------

@dataclass
class _Batch:
    problem: str
    feats: np.ndarray  # (B, N, 2|3)
    points: np.ndarray  # (B, n, 2), depot first for CVRP
    depot: np.ndarray | None = None  # (B, 1, 2)
    demand: np.ndarray | None = None  # (B, n) with depot demand 0
    capacity: np.ndarray | None = None  # (B,)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def n(self) -> int:
        return self.points.shape[1]


def _prepare(instances: Sequence[Instance]) -> _Batch:
    if not instances:
        raise ValueError("empty batch")
    problem = instances[0].problem
    n = instances[0].n
    if any(i.problem != problem or i.n != n for i in instances):
        raise ValueError("a batch must hold instances of one problem and one size")
    coords = np.stack([i.coords for i in instances])
    if problem == TSP:
        return _Batch(TSP, coords, coords)
    cap = np.array([i.capacity for i in instances], dtype=np.float64)
    dem = np.stack([i.demands for i in instances]).astype(np.float64)
    depot = np.stack([i.depot for i in instances])[:, None, :]
    feats = np.concatenate([coords, (dem / cap[:, None])[..., None]], axis=-1)
    return _Batch(
        CVRP,
        feats,
        np.concatenate([depot, coords], axis=1),
        depot=depot,
        demand=np.concatenate([np.zeros((len(instances), 1)), dem], axis=1),
        capacity=cap,
    )


def _check_arch(params: ParameterSet, problem: str):
    if params.arch.kind != ATTENTION:
        raise ValueError("policy needs attention parameters")
    if params.arch.problem != problem:
        raise ValueError(f"parameters are for {params.arch.problem}, instances are {problem}")


# encoder ----------------------------------------------------------------------

def _encode(T: dict[str, Tensor], arch: Architecture, batch: _Batch) -> tuple[Tensor, Tensor]:
    d = arch.embed_dim
    h = tn.matmul(Tensor(batch.feats), T["enc.in.W"]) + T["enc.in.b"]
    if batch.problem == CVRP:
        hd = tn.matmul(Tensor(batch.depot), T["enc.depot.W"]) + T["enc.depot.b"]
        h = tn.concat([hd, h], axis=1)
    inv = 1.0 / np.sqrt(d)
    for layer in range(arch.n_layers):
        p = f"enc.{layer}."
        q = h @ T[p + "Wq"]
        k = h @ T[p + "Wk"]
        v = h @ T[p + "Wv"]
        att = tn.softmax(tn.scale(q @ k.T, inv), axis=-1)
        h = tn.layer_norm(h + (att @ v) @ T[p + "Wo"], T[p + "ln1.ln_g"], T[p + "ln1.ln_b"])
        ff = tn.relu(h @ T[p + "ff1.W"] + T[p + "ff1.b"]) @ T[p + "ff2.W"] + T[p + "ff2.b"]
        h = tn.layer_norm(h + ff, T[p + "ln2.ln_g"], T[p + "ln2.ln_b"])
    return h, tn.mean(h, axis=1)


# decoder ----------------------------------------------------------------------

class _Decoder:
    """Autoregressive decoding state for one batch."""

    def __init__(self, T, arch: Architecture, batch: _Batch, h: Tensor, graph: Tensor):
        self.T, self.arch, self.batch = T, arch, batch
        self.h = h
        B, n, d = h.shape
        self.B, self.n, self.d = B, n, d
        self.gk = h @ T["dec.Wgk"]
        self.gv = h @ T["dec.Wgv"]
        self.lk = h @ T["dec.Wlk"]
        self.fixed = graph @ T["dec.Wfix"]
        self.visited = np.zeros((B, n), dtype=bool)
        self.first = np.zeros(B, dtype=np.int64)
        self.last = np.zeros(B, dtype=np.int64)
        self.t = 0
        if batch.problem == CVRP:
            self.remaining = batch.capacity.copy()
            self.visited[:, 0] = True  # depot column never counts as a customer

    def done(self) -> np.ndarray:
        return self.visited.all(axis=1)

    def finished(self) -> bool:
        if self.batch.problem == TSP:
            return self.t >= self.n
        return bool(self.done().all())

    def mask(self) -> np.ndarray:
        if self.batch.problem == TSP:
            return ~self.visited
        done = self.done()
        m = ~self.visited & (self.batch.demand <= self.remaining[:, None] + 1e-9)
        m[:, 0] = (self.last != 0) | done
        m[done, 1:] = False
        return m

    def context(self) -> Tensor:
        T = self.T
        if self.batch.problem == TSP:
            if self.t == 0:
                parts = [tn.expand(T["dec.v_first"], 0, self.B), tn.expand(T["dec.v_last"], 0, self.B)]
            else:
                parts = [tn.gather(self.h, self.first), tn.gather(self.h, self.last)]
        else:
            cap = Tensor((self.remaining / self.batch.capacity)[:, None])
            parts = [tn.gather(self.h, self.last), cap]
        return self.fixed + tn.concat(parts, axis=-1) @ T["dec.Wstep"]

    def distribution(self) -> tuple[Tensor, np.ndarray]:
        B, n, d = self.B, self.n, self.d
        inv = 1.0 / np.sqrt(d)
        mask = self.mask()
        q = self.context()
        compat = tn.scale(tn.reshape(self.gk @ tn.reshape(q, (B, d, 1)), (B, n)), inv)
        a = tn.masked_softmax(compat, mask)
        glimpse = tn.reshape(tn.reshape(a, (B, 1, n)) @ self.gv, (B, d)) @ self.T["dec.Wgo"]
        raw = tn.scale(tn.reshape(self.lk @ tn.reshape(glimpse, (B, d, 1)), (B, n)), inv)
        logits = tn.scale(tn.tanh(raw), self.arch.clip)
        return tn.masked_softmax(logits, mask), mask

    def advance(self, action: np.ndarray) -> None:
        rows = np.arange(self.B)
        if self.batch.problem == TSP:
            if self.t == 0:
                self.first = action.copy()
        else:
            to_depot = action == 0
            self.remaining = np.where(to_depot, self.batch.capacity,
                                      self.remaining - self.batch.demand[rows, action])
        self.visited[rows, action] = True
        self.last = action.copy()
        self.t += 1


def _run(params: ParameterSet, instances: Sequence[Instance], mode: str,
         rng: Stream | None = None, forced: np.ndarray | None = None,
         track_grad: bool = False):
    batch = _prepare(instances)
    _check_arch(params, batch.problem)
    T = params.tensors() if track_grad else {k: Tensor(v) for k, v in params.arrays.items()}
    ctx = tn.no_grad() if not track_grad else contextlib.nullcontext()
    with ctx:
        h, graph = _encode(T, params.arch, batch)
        dec = _Decoder(T, params.arch, batch, h, graph)
        actions, terms = [], []
        while not dec.finished():
            p, mask = dec.distribution()
            if mode == "greedy":
                a = p.data.argmax(axis=1)
            elif mode == "sample":
                a = np.array([rng.choice(row) for row in p.data], dtype=np.int64)
            else:
                if dec.t >= forced.shape[1]:
                    raise ValueError("forced action sequence too short")
                a = forced[:, dec.t].astype(np.int64)
                if not mask[np.arange(dec.B), a].all():
                    raise ValueError("forced action is infeasible")
            terms.append(tn.log(tn.gather(p, a)))
            actions.append(a)
            dec.advance(a)
        logp = terms[0]
        for t in terms[1:]:
            logp = logp + t
    acts = np.stack(actions, axis=1)
    costs = _costs(batch, acts)
    out = BatchRollout(acts, costs, logp if track_grad else logp.data, batch.problem)
    return out, T


def _costs(batch: _Batch, actions: np.ndarray) -> np.ndarray:
    B = batch.size
    if batch.problem == TSP:
        path = np.concatenate([actions, actions[:, :1]], axis=1)
    else:
        z = np.zeros((B, 1), dtype=np.int64)
        path = np.concatenate([z, actions, z], axis=1)
    pts = np.take_along_axis(batch.points, path[..., None], axis=1)
    seg = np.diff(pts, axis=1)
    return np.sqrt((seg * seg).sum(-1)).sum(axis=1)


# public API ---------------------------------------------------------------------

def rollout_batch(params: ParameterSet, instances: Sequence[Instance], mode: str = "greedy",
                  rng: Stream | None = None, track_grad: bool = False):
    """Decode a batch greedily or by sampling.

    With ``track_grad`` the returned ``log_prob`` is a graph node and the
    second return value holds the parameter leaves to differentiate.
    """
    if mode not in ("greedy", "sample"):
        raise ValueError(f"unknown decoding mode {mode!r}")
    if mode == "sample" and rng is None:
        raise ValueError("sampling needs an rng")
    out, T = _run(params, instances, mode, rng=rng, track_grad=track_grad)
    return (out, T) if track_grad else out


def solution_actions(sol: Tour | RoutePlan) -> list[int]:
    return list(sol.order) if isinstance(sol, Tour) else sol.to_sequence()


def log_likelihood_batch(params: ParameterSet, instances: Sequence[Instance],
                         solutions: Sequence[Tour | RoutePlan], track_grad: bool = False):
    seqs = [solution_actions(s) for s in solutions]
    width = max(len(s) for s in seqs)
    forced = np.zeros((len(seqs), width), dtype=np.int64)
    for i, s in enumerate(seqs):
        forced[i, :len(s)] = s
    out, T = _run(params, instances, "forced", forced=forced, track_grad=track_grad)
    return (out.log_prob, T) if track_grad else out.log_prob


def log_likelihood(params: ParameterSet, inst: Instance, solution: Tour | RoutePlan) -> float:
    return float(log_likelihood_batch(params, [inst], [solution])[0])


def sample_rollout(params: ParameterSet, inst: Instance, rng: Stream) -> Rollout:
    out = rollout_batch(params, [inst], "sample", rng=rng)
    return Rollout(out.solutions()[0], float(out.log_prob[0]), float(out.costs[0]), tuple(out.actions[0]))


def greedy_rollout(params: ParameterSet, inst: Instance) -> Rollout:
    out = rollout_batch(params, [inst], "greedy")
    return Rollout(out.solutions()[0], float(out.log_prob[0]), float(out.costs[0]), tuple(out.actions[0]))


def encode(params: ParameterSet, inst: Instance) -> tuple[np.ndarray, np.ndarray]:
    """Node embeddings ``(n, d)`` and graph embedding ``(d,)`` of one instance."""
    batch = _prepare([inst])
    _check_arch(params, batch.problem)
    T = {k: Tensor(v) for k, v in params.arrays.items()}
    with tn.no_grad():
        h, g = _encode(T, params.arch, batch)
    return h.data[0], g.data[0]


def step_distribution(params: ParameterSet, inst: Instance, partial: Sequence[int] = ()) -> np.ndarray:
    """Next-node probabilities after the actions in ``partial``.

    For CVRP the vector has ``N + 1`` entries, entry ``0`` being the depot.
    """
    batch = _prepare([inst])
    _check_arch(params, batch.problem)
    T = {k: Tensor(v) for k, v in params.arrays.items()}
    with tn.no_grad():
        h, g = _encode(T, params.arch, batch)
        dec = _Decoder(T, params.arch, batch, h, g)
        for a in partial:
            a = np.array([int(a)])
            if not dec.mask()[0, a[0]]:
                raise ValueError(f"action {a[0]} is infeasible")
            dec.advance(a)
        if not dec.mask().any():
            raise ValueError("no feasible action")
        p, _ = dec.distribution()
    return p.data[0]


def greedy_costs(params: ParameterSet, instances: Sequence[Instance], chunk: int = 512) -> np.ndarray:
    """Greedy rollout cost of every instance (mixed sizes allowed)."""
    costs = np.empty(len(instances))
    by_size: dict[int, list[int]] = {}
    for i, inst in enumerate(instances):
        by_size.setdefault(inst.n, []).append(i)
    for idx in by_size.values():
        for s in range(0, len(idx), chunk):
            part = idx[s:s + chunk]
            costs[part] = rollout_batch(params, [instances[i] for i in part], "greedy").costs
    return costs


def greedy_solutions(params: ParameterSet, instances: Sequence[Instance], chunk: int = 512):
    sols: list = [None] * len(instances)
    costs = np.empty(len(instances))
    by_size: dict[int, list[int]] = {}
    for i, inst in enumerate(instances):
        by_size.setdefault(inst.n, []).append(i)
    for idx in by_size.values():
        for s in range(0, len(idx), chunk):
            part = idx[s:s + chunk]
            out = rollout_batch(params, [instances[i] for i in part], "greedy")
            for j, sol in zip(part, out.solutions()):
                sols[j] = sol
            costs[part] = out.costs
    return sols, costs


def leaf_gradients(T: dict[str, Tensor], params: ParameterSet) -> ParameterSet:
    return ParameterSet(
        {k: (np.zeros_like(v) if T[k].grad is None else T[k].grad) for k, v in params.arrays.items()},
        params.arch,
    )
