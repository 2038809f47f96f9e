import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from metaroute import edgenet
from metaroute import tensor as T
from metaroute.edgenet import EdgeLabels, EdgePrediction
from metaroute.oracles import brute_force_cvrp, held_karp
from metaroute.params import EDGENET, Architecture
from metaroute.rng import Stream
from metaroute.solutions import RoutePlan, Tour, check_plan
from metaroute.taskgen import CVRP, TSP, Instance, TaskSpec, generate_dataset, generate_instance

from gradcheck import rel_error

ARCH = Architecture(kind=EDGENET, embed_dim=8, n_layers=2)


def test_triangle_labels_are_complete():
    s = edgenet.labels_from_tour([0, 1, 2], 3).s
    np.testing.assert_array_equal(s, 1 - np.eye(3))


def test_square_labels(square):
    s = edgenet.labels_from_tour(held_karp(square)[0], 4).s
    assert s[0, 2] == s[1, 3] == 0
    assert s[0, 1] == s[1, 2] == s[2, 3] == s[3, 0] == 1


def test_oracle_labels_row_sums():
    inst = generate_instance(TaskSpec(TSP, n_nodes=8, seed=8))
    s = edgenet.labels_from_tour(held_karp(inst)[0], 8).s
    assert np.array_equal(s, s.T) and np.all(np.diag(s) == 0)
    assert np.all(s.sum(axis=1) == 2)


def test_label_errors():
    with pytest.raises(ValueError, match="at least 3"):
        edgenet.labels_from_tour([0, 1], 2)
    with pytest.raises(ValueError, match="not a permutation"):
        edgenet.labels_from_tour([0, 1, 1], 3)


def test_plan_labels_depot_degree():
    inst = generate_instance(TaskSpec(CVRP, n_nodes=6, capacity=10, seed=6))
    plan, _ = brute_force_cvrp(inst)
    s = edgenet.labels_from_plan(plan, 6).s
    assert s.shape == (7, 7) and np.array_equal(s, s.T)
    multi = [r for r in plan.routes if len(r) > 1]
    # singleton routes reuse one depot edge in both directions
    assert s[0].sum() == 2 * len(multi) + (len(plan.routes) - len(multi))
    assert np.all(s[1:, 1:].sum(axis=1) <= 2)


def test_prediction_shape_and_symmetry(tsp10):
    params = edgenet.init_params(ARCH, 0)
    for pred in edgenet.predict_batch(params, tsp10):
        p = pred.probs
        assert np.max(np.abs(p - p.T)) <= 1e-12
        assert np.all(np.diag(p) == 0)
        off = p[~np.eye(10, dtype=bool)]
        assert np.all((off > 0) & (off < 1))


def test_prediction_equivariance():
    params = edgenet.init_params(ARCH, 1)
    inst = generate_instance(TaskSpec(TSP, n_nodes=7, seed=2))
    perm = Stream(0).permutation(7)
    p = edgenet.predict(params, inst).probs
    q = edgenet.predict(params, inst.permuted(perm)).probs
    np.testing.assert_allclose(q, p[np.ix_(perm, perm)], atol=1e-12)


def test_cvrp_prediction_includes_depot(cvrp6):
    arch = Architecture(kind=EDGENET, problem=CVRP, embed_dim=8, n_layers=1)
    pred = edgenet.predict(edgenet.init_params(arch, 0), cvrp6[0])
    assert pred.probs.shape == (7, 7)
    plan = edgenet.decode(pred, cvrp6[0])
    check_plan(cvrp6[0], plan)


def test_uniform_half_loss_is_ln2():
    pred = EdgePrediction(np.full((3, 3), 0.5))
    assert edgenet.weighted_bce_loss(pred, edgenet.labels_from_tour([0, 1, 2], 3)) == pytest.approx(math.log(2), abs=1e-12)


def test_perfect_prediction_loss_near_zero():
    lab = edgenet.labels_from_tour([0, 2, 4, 1, 3], 5)
    pred = EdgePrediction(np.clip(lab.s, 1e-7, 1 - 1e-7))
    assert edgenet.weighted_bce_loss(pred, lab, 2.0, 3.0) <= 1e-6 * 3.0 * abs(math.log(1e-7))


def test_loss_minimised_at_clamped_labels():
    rng = np.random.default_rng(0)
    lab = edgenet.labels_from_tour(Stream(1).permutation(8), 8)
    best = edgenet.weighted_bce_loss(EdgePrediction(np.clip(lab.s, 1e-7, 1 - 1e-7)), lab, 1.0, 3.0)
    for _ in range(200):
        noise = rng.uniform(-0.3, 0.3, size=(8, 8))
        noise = (noise + noise.T) / 2
        pert = np.clip(lab.s + noise, 1e-7, 1 - 1e-7)
        assert best < edgenet.weighted_bce_loss(EdgePrediction(pert), lab, 1.0, 3.0)


def test_loss_weight_binding():
    # w1 multiplies the positive term
    lab = edgenet.labels_from_tour([0, 1, 2, 3], 4)
    pred = EdgePrediction(np.full((4, 4), 0.25))
    pos_only = -np.log(0.25) * 4 / 6
    neg_only = -np.log(0.75) * 2 / 6
    assert edgenet.weighted_bce_loss(pred, lab, 1.0, 2.0) == pytest.approx(2 * pos_only + neg_only)
    assert edgenet.weighted_bce_loss(pred, lab, 2.0, 1.0) == pytest.approx(pos_only + 2 * neg_only)


def test_non_positive_weight_rejected():
    lab = edgenet.labels_from_tour([0, 1, 2], 3)
    with pytest.raises(ValueError):
        edgenet.weighted_bce_loss(EdgePrediction(np.full((3, 3), 0.5)), lab, 0.0, 1.0)


def test_default_weights():
    lab = edgenet.labels_from_tour(list(range(6)), 6)
    assert edgenet.default_weights([lab]) == (1.0, 9 / 6)


def test_bce_gradient_finite_differences():
    rng = np.random.default_rng(4)
    s = np.stack([edgenet.labels_from_tour(Stream(k).permutation(6), 6).s for k in range(2)])
    p = rng.uniform(0.05, 0.95, size=(2, 6, 6))
    leaf = T.tensor(p.copy(), requires_grad=True)
    (g,) = T.grad_of(edgenet.bce_tensor(leaf, s, 1.0, 2.5), [leaf])
    h = 1e-6
    num = np.zeros_like(p)
    for idx in np.ndindex(p.shape):
        up, dn = p.copy(), p.copy()
        up[idx] += h
        dn[idx] -= h
        num[idx] = (edgenet.bce_tensor(T.tensor(up), s, 1.0, 2.5).item()
                    - edgenet.bce_tensor(T.tensor(dn), s, 1.0, 2.5).item()) / (2 * h)
    assert rel_error(g, num) < 1e-3


def test_model_loss_gradient_finite_differences():
    arch = Architecture(kind=EDGENET, embed_dim=4, n_layers=1)
    params = edgenet.init_params(arch, 3)
    insts = generate_dataset(TaskSpec(TSP, n_nodes=5, seed=1), 2)
    labels = [edgenet.labels_from_tour(held_karp(i)[0], 5) for i in insts]
    loss, leaves = edgenet.batch_loss(params, insts, labels, 1.0, 1.5, track_grad=True)
    T.backward(loss)
    analytic = np.concatenate([leaves[k].grad.ravel() if leaves[k].grad is not None else np.zeros(v.size)
                               for k, v in params.arrays.items()])
    flat = params.flat()
    num = np.empty_like(flat)
    for i in range(flat.size):
        up, dn = flat.copy(), flat.copy()
        up[i] += 1e-5
        dn[i] -= 1e-5
        num[i] = (edgenet.batch_loss(params.with_flat(up), insts, labels, 1.0, 1.5)
                  - edgenet.batch_loss(params.with_flat(dn), insts, labels, 1.0, 1.5)) / 2e-5
    assert rel_error(analytic, num) < 1e-3


def test_gradient_finite_under_saturation():
    s = np.stack([edgenet.labels_from_tour([0, 1, 2, 3], 4).s])
    p = T.tensor(np.where(s > 0, 0.0, 1.0), requires_grad=True)
    (g,) = T.grad_of(edgenet.bce_tensor(p, s, 1.0, 1.0), [p])
    assert np.all(np.isfinite(g))


def test_decode_reconstructs_tour():
    order = [0, 3, 1, 4, 2, 5]
    lab = edgenet.labels_from_tour(order, 6)
    t = edgenet.greedy_decode(EdgePrediction(np.where(lab.s > 0, 1.0, 1e-6)))
    assert t.canonical() == Tour(order).canonical()


def test_uniform_prediction_decodes_identity():
    assert edgenet.greedy_decode(EdgePrediction(np.full((5, 5), 0.3))).order == (0, 1, 2, 3, 4)


@settings(max_examples=50)
@given(st.integers(3, 12), st.integers(0, 10_000))
def test_decode_always_valid(n, seed):
    probs = np.random.default_rng(seed).random((n, n))
    t = edgenet.greedy_decode(EdgePrediction(probs))
    assert sorted(t.order) == list(range(n))


def test_decode_validity_on_suite():
    params = edgenet.init_params(ARCH, 2)
    data = generate_dataset(TaskSpec(TSP, n_nodes=10, seed=10), 50)
    for inst, pred in zip(data, edgenet.predict_batch(params, data)):
        assert sorted(edgenet.decode(pred, inst).order) == list(range(10))


def test_labels_type_accepts_array():
    lab = EdgeLabels(np.zeros((3, 3)))
    assert lab.n == 3
