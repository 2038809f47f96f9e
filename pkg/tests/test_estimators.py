import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from metaroute import policy
from metaroute.estimators import AttentionRouter, EdgeTourPredictor, MetaRouter, check_instances, check_tasks
from metaroute.oracles import held_karp
from metaroute.solutions import RoutePlan, Tour, solution_cost
from metaroute.taskgen import CVRP, TSP, TaskSet, TaskSpec, generate_dataset

SMALL = dict(embed_dim=8, n_layers=1, batch_size=4, baseline_eval_size=4)


def test_check_instances_coerces_arrays(tsp10):
    assert len(check_instances(np.zeros((3, 5, 2)))) == 3
    assert check_instances(np.ones((4, 2)))[0].n == 4
    assert check_instances(tsp10[0])[0] is tsp10[0]
    with pytest.raises(ValueError, match="shape"):
        check_instances(np.zeros((3, 5, 3)))
    with pytest.raises(ValueError, match="empty dataset"):
        check_instances([])
    with pytest.raises(TypeError, match="item 1"):
        check_instances([tsp10[0], "x"])
    with pytest.raises(ValueError, match="expected CVRP"):
        check_instances(tsp10, CVRP)


def test_check_tasks():
    spec = TaskSpec(TSP, n_nodes=5)
    assert len(check_tasks(spec)) == 1 and len(check_tasks([spec, TaskSpec(TSP, n_nodes=6)])) == 2
    with pytest.raises(TypeError):
        check_tasks([1, 2])


def test_params_round_trip_through_clone():
    est = MetaRouter(n_outer=3, eps0=0.5, **SMALL)
    twin = clone(est)
    assert twin.get_params() == est.get_params() and not hasattr(twin, "params_")


def test_predict_before_fit(tsp10):
    with pytest.raises(NotFittedError):
        AttentionRouter().predict(tsp10)


def test_router_fit_on_tasks_matches_train_rl(tsp10):
    from metaroute.params import Architecture
    from metaroute.rltrain import TrainConfig, train_rl

    spec = TaskSpec(TSP, n_nodes=6)
    est = AttentionRouter(n_steps=3, baseline_every=2, **SMALL).fit(spec)
    arch = Architecture(embed_dim=8, n_layers=1)
    cfg = TrainConfig(batch_size=4, baseline_eval_size=4, baseline_every=2, seed=0)
    assert est.params_.equals(train_rl(policy.init_params(arch, 0), spec, 3, cfg).params)
    sols = est.predict(tsp10)
    assert all(isinstance(s, Tour) for s in sols)
    np.testing.assert_allclose(est.predict_cost(tsp10), [solution_cost(i, s) for i, s in zip(tsp10, sols)])
    assert est.score(tsp10) == pytest.approx(-np.mean(est.predict_cost(tsp10)))


def test_router_fit_on_pool_and_cvrp(cvrp6):
    est = AttentionRouter(problem=CVRP, n_steps=2, baseline_every=1, **SMALL).fit(cvrp6)
    assert all(isinstance(s, RoutePlan) for s in est.predict(cvrp6))


def test_meta_router_adapt(tsp10):
    tasks = TaskSet([TaskSpec(TSP, n_nodes=5, n_modes=1), TaskSpec(TSP, n_nodes=5, n_modes=2)])
    est = MetaRouter(n_outer=2, inner_steps=2, **SMALL).fit(tasks)
    assert [r["iteration"] for r in est.log_] == [0, 1]
    same = est.adapt(TaskSpec(TSP, n_nodes=5, n_modes=3), 0)
    assert same.params_.equals(est.params_)
    moved = est.adapt(tsp10, 2)
    assert not moved.params_.equals(est.params_) and len(moved.predict(tsp10)) == len(tsp10)


def test_edge_predictor(tsp10):
    tours = [held_karp(i)[0] for i in tsp10]
    est = EdgeTourPredictor(n_steps=5, batch_size=4, embed_dim=8, n_layers=1).fit(tsp10, tours)
    probs = est.predict_proba(tsp10)
    assert all(p.shape == (10, 10) and np.allclose(p, p.T) for p in probs)
    sols = est.predict(tsp10)
    assert all(sorted(s.order) == list(range(10)) for s in sols)
    assert est.score(tsp10) < 0
    with pytest.raises(ValueError, match="targets"):
        est.fit(tsp10, tours[:2])


def test_edge_predictor_mixed_sizes():
    ds = generate_dataset(TaskSpec(TSP, n_nodes=5), 2) + generate_dataset(TaskSpec(TSP, n_nodes=7), 2)
    tours = [list(held_karp(i)[0].order) for i in ds]
    est = EdgeTourPredictor(n_steps=2, batch_size=2, embed_dim=4, n_layers=1).fit(ds, tours)
    assert [p.shape[0] for p in est.predict_proba(ds)] == [5, 5, 7, 7]
