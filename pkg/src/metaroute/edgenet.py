"""Supervised edge-probability network and greedy tour decoding.

Nodes and edges of the complete graph carry hidden vectors that are updated
jointly for ``n_layers`` rounds.  An MLP reads every edge vector out to the
probability that the edge belongs to the reference tour.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as tn
from .params import EDGENET, Architecture, ParameterSet, init_uniform
from .rng import Stream
from .solutions import RoutePlan, Tour
from .taskgen import CVRP, TSP, Instance
from .tensor import Tensor

PROB_FLOOR = 1e-7


@dataclass
class EdgeLabels:
    s: np.ndarray

    @property
    def n(self) -> int:
        return self.s.shape[0]


@dataclass
class EdgePrediction:
    probs: np.ndarray

    @property
    def n(self) -> int:
        return self.probs.shape[0]


def labels_from_tour(t: Tour | Sequence[int], n: int) -> EdgeLabels:
    order = list(t.order if isinstance(t, Tour) else t)
    if n < 3:
        raise ValueError("edge labels need at least 3 nodes")
    if sorted(order) != list(range(n)):
        raise ValueError("not a permutation")
    s = np.zeros((n, n))
    for a, b in zip(order, order[1:] + order[:1]):
        s[a, b] = s[b, a] = 1.0
    return EdgeLabels(s)


def labels_from_plan(p: RoutePlan, n: int) -> EdgeLabels:
    """Labels over depot (index 0) plus customers ``1..n``."""
    s = np.zeros((n + 1, n + 1))
    for r in p.routes:
        path = [0] + [c + 1 for c in r] + [0]
        for a, b in zip(path, path[1:]):
            if a != b:
                s[a, b] = s[b, a] = 1.0
    return EdgeLabels(s)


# parameters ---------------------------------------------------------------------

def param_shapes(arch: Architecture) -> dict[str, tuple[int, ...]]:
    d = arch.embed_dim
    s: dict[str, tuple[int, ...]] = {
        "node.in.W": (4 if arch.problem == CVRP else 2, d),
        "node.in.b": (d,),
        "edge.in.W": (1, d),
        "edge.in.b": (d,),
    }
    for layer in range(arch.n_layers):
        p = f"gnn.{layer}."
        for w in ("U", "V", "A", "B", "C"):
            s[p + w] = (d, d)
        s[p + "hn.ln_g"] = (d,)
        s[p + "hn.ln_b"] = (d,)
        s[p + "en.ln_g"] = (d,)
        s[p + "en.ln_b"] = (d,)
    s["out.W1"] = (d, d)
    s["out.b1"] = (d,)
    s["out.W2"] = (d, 1)
    s["out.b2"] = (1,)
    return s


def init_params(arch: Architecture, seed: int | Stream = 0) -> ParameterSet:
    if arch.kind != EDGENET:
        raise ValueError("init_params expects an edgenet architecture")
    return init_uniform(param_shapes(arch), arch, seed)


def _features(instances: Sequence[Instance]) -> tuple[np.ndarray, np.ndarray]:
    n = instances[0].n
    if any(i.n != n or i.problem != instances[0].problem for i in instances):
        raise ValueError("a batch must hold instances of one problem and one size")
    if instances[0].problem == TSP:
        pts = np.stack([i.coords for i in instances])
        nodes = pts
    else:
        pts = np.stack([i.all_points() for i in instances])
        B, m = pts.shape[:2]
        dem = np.zeros((B, m))
        dem[:, 1:] = np.stack([i.demands / i.capacity for i in instances])
        flag = np.zeros((B, m))
        flag[:, 0] = 1.0
        nodes = np.concatenate([pts, dem[..., None], flag[..., None]], axis=-1)
    diff = pts[:, :, None, :] - pts[:, None, :, :]
    dist = np.sqrt((diff * diff).sum(-1))[..., None]
    return nodes, dist


def _forward(T: dict[str, Tensor], arch: Architecture, nodes: np.ndarray, dist: np.ndarray) -> Tensor:
    """Symmetrised edge probabilities, shape ``(B, n, n)``."""
    B, n = nodes.shape[:2]
    h = tn.matmul(Tensor(nodes), T["node.in.W"]) + T["node.in.b"]
    e = tn.matmul(Tensor(dist), T["edge.in.W"]) + T["edge.in.b"]
    for layer in range(arch.n_layers):
        p = f"gnn.{layer}."
        gate = tn.sigmoid(e)
        msg = tn.mean(gate * tn.expand(h @ T[p + "V"], 1, n), axis=2)
        h_new = h + tn.relu(tn.layer_norm(h @ T[p + "U"] + msg, T[p + "hn.ln_g"], T[p + "hn.ln_b"]))
        pre = e @ T[p + "A"] + tn.expand(h @ T[p + "B"], 2, n) + tn.expand(h @ T[p + "C"], 1, n)
        e = e + tn.relu(tn.layer_norm(pre, T[p + "en.ln_g"], T[p + "en.ln_b"]))
        h = h_new
    hid = tn.relu(e @ T["out.W1"] + T["out.b1"])
    prob = tn.sigmoid(tn.reshape(hid @ T["out.W2"] + T["out.b2"], (B, n, n)))
    return tn.scale(prob + prob.T, 0.5)


def predict_batch(params: ParameterSet, instances: Sequence[Instance]) -> list[EdgePrediction]:
    if params.arch.kind != EDGENET:
        raise ValueError("predict needs edgenet parameters")
    if instances[0].n < 3:
        raise ValueError("edge prediction needs at least 3 nodes")
    nodes, dist = _features(instances)
    T = {k: Tensor(v) for k, v in params.arrays.items()}
    with tn.no_grad():
        probs = _forward(T, params.arch, nodes, dist).data
    out = []
    for p in probs:
        p = p.copy()
        np.fill_diagonal(p, 0.0)
        out.append(EdgePrediction(p))
    return out


def predict(params: ParameterSet, inst: Instance) -> EdgePrediction:
    return predict_batch(params, [inst])[0]


# loss ---------------------------------------------------------------------------------

def default_weights(labels: Sequence[EdgeLabels]) -> tuple[float, float]:
    """``(w0, w1)`` with ``w1 = #negatives / #positives`` over the upper triangles."""
    pos = neg = 0.0
    for lab in labels:
        iu = np.triu_indices(lab.n, 1)
        v = lab.s[iu]
        pos += v.sum()
        neg += v.size - v.sum()
    if pos == 0:
        return 1.0, 1.0
    return 1.0, float(neg / pos)


def _check_weights(w0: float, w1: float):
    if not (w0 > 0 and w1 > 0):
        raise ValueError("class weights must be positive")


def weighted_bce_loss(pred: EdgePrediction, labels: EdgeLabels, w0: float = 1.0, w1: float = 1.0) -> float:
    """Mean over pairs i<j of ``-[w1 s log p + w0 (1-s) log(1-p)]``; ``w1`` weights positives."""
    _check_weights(w0, w1)
    if pred.probs.shape != labels.s.shape:
        raise ValueError(f"shape mismatch {pred.probs.shape} vs {labels.s.shape}")
    iu = np.triu_indices(labels.n, 1)
    p = np.clip(pred.probs[iu], PROB_FLOOR, 1.0 - PROB_FLOOR)
    s = labels.s[iu]
    return float(-np.mean(w1 * s * np.log(p) + w0 * (1.0 - s) * np.log(1.0 - p)))


def bce_tensor(prob: Tensor, s: np.ndarray, w0: float, w1: float) -> Tensor:
    """Differentiable batch loss; ``prob`` and ``s`` have shape ``(B, n, n)``."""
    _check_weights(w0, w1)
    B, n, _ = s.shape
    upper = np.triu(np.ones((n, n)), 1)[None].repeat(B, axis=0)
    pc = tn.clip(prob, PROB_FLOOR, 1.0 - PROB_FLOOR)
    pos = tn.log(pc) * (w1 * s * upper)
    neg = tn.log(1.0 - pc) * (w0 * (1.0 - s) * upper)
    pairs = B * n * (n - 1) / 2
    return tn.scale(tn.sum(pos + neg), -1.0 / pairs)


def batch_loss(params: ParameterSet, instances: Sequence[Instance], labels: Sequence[EdgeLabels],
               w0: float | None = None, w1: float | None = None, track_grad: bool = False):
    if w0 is None or w1 is None:
        w0, w1 = default_weights(labels)
    nodes, dist = _features(instances)
    s = np.stack([lab.s for lab in labels])
    if s.shape[1] != nodes.shape[1]:
        raise ValueError("labels do not match instance size")
    T = params.tensors() if track_grad else {k: Tensor(v) for k, v in params.arrays.items()}
    if track_grad:
        loss = bce_tensor(_forward(T, params.arch, nodes, dist), s, w0, w1)
        return loss, T
    with tn.no_grad():
        loss = bce_tensor(_forward(T, params.arch, nodes, dist), s, w0, w1)
    return loss.item()


def mean_loss(params: ParameterSet, instances: Sequence[Instance], labels: Sequence[EdgeLabels],
              chunk: int = 256) -> float:
    """Pair-weighted mean loss over a dataset, using dataset-level class weights."""
    w0, w1 = default_weights(labels)
    total = weight = 0.0
    by_size: dict[int, list[int]] = {}
    for i, inst in enumerate(instances):
        by_size.setdefault(inst.n, []).append(i)
    for idx in by_size.values():
        for s in range(0, len(idx), chunk):
            part = idx[s:s + chunk]
            n = labels[part[0]].n
            pairs = len(part) * n * (n - 1) / 2
            total += pairs * batch_loss(params, [instances[i] for i in part], [labels[i] for i in part], w0, w1)
            weight += pairs
    return total / weight


# decoding --------------------------------------------------------------------------------

def greedy_decode(pred: EdgePrediction, inst: Instance | None = None) -> Tour:
    """Follow the most probable edge to an unvisited node, starting from node 0."""
    n = pred.n
    if n < 3:
        raise ValueError("greedy decoding needs at least 3 nodes")
    visited = np.zeros(n, dtype=bool)
    visited[0] = True
    order, cur = [0], 0
    for _ in range(n - 1):
        row = np.where(visited, -np.inf, np.nan_to_num(pred.probs[cur], nan=0.0))
        cur = int(np.argmax(row))
        visited[cur] = True
        order.append(cur)
    return Tour(order)


def greedy_decode_routes(pred: EdgePrediction, inst: Instance) -> RoutePlan:
    """Capacity-aware greedy walk for CVRP predictions (index 0 is the depot)."""
    n = inst.n
    demand = np.concatenate([[0], inst.demands])
    visited = np.zeros(n + 1, dtype=bool)
    visited[0] = True
    cur, remaining, seq = 0, inst.capacity, []
    while not visited.all():
        ok = ~visited & (demand <= remaining)
        ok[0] = cur != 0
        score = np.where(ok, pred.probs[cur], -np.inf)
        nxt = int(np.argmax(score))
        if nxt == 0:
            remaining = inst.capacity
        else:
            remaining -= demand[nxt]
            visited[nxt] = True
        seq.append(nxt)
        cur = nxt
    return RoutePlan.from_sequence(seq)


def decode(pred: EdgePrediction, inst: Instance) -> Tour | RoutePlan:
    if inst.problem == CVRP:
        return greedy_decode_routes(pred, inst)
    return greedy_decode(pred, inst)
