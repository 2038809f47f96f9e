import itertools

import numpy as np
import pytest

from metaroute import policy
from metaroute import tensor as T
from metaroute.params import Architecture
from metaroute.rng import Stream
from metaroute.solutions import RoutePlan, Tour, solution_cost
from metaroute.taskgen import CVRP, TSP, Instance, TaskSpec, generate_dataset, generate_instance

from gradcheck import rel_error

ARCH = Architecture(embed_dim=8, n_layers=2)
CVRP_ARCH = Architecture(problem=CVRP, embed_dim=8, n_layers=1)


def _params(seed, arch=ARCH):
    return policy.init_params(arch, seed)


def test_init_is_deterministic_and_bounded():
    a, b, c = _params(1), _params(1), _params(2)
    assert a.equals(b) and not a.equals(c)
    bound = 1 / np.sqrt(ARCH.embed_dim)
    for k, v in a.arrays.items():
        if not k.endswith((".ln_g", ".ln_b")):
            assert np.all(np.abs(v) <= bound)


@pytest.mark.parametrize("problem", [TSP, CVRP])
def test_parameter_count_closed_form(problem):
    arch = Architecture(problem=problem, embed_dim=16, n_layers=2)
    d, f = 16, 32
    per_layer = 4 * d * d + 2 * d * f + f + 5 * d
    expected = (3 * d + 2 * per_layer + 7 * d * d + 2 * d) if problem == TSP else (7 * d + 2 * per_layer + 6 * d * d + d)
    assert policy.parameter_count(arch) == expected == policy.init_params(arch, 0).count


def test_encoder_permutation_equivariance():
    p = _params(3)
    inst = generate_instance(TaskSpec(TSP, n_nodes=7, seed=1))
    perm = Stream(4).permutation(7)
    h, g = policy.encode(p, inst)
    hp, gp = policy.encode(p, inst.permuted(perm))
    np.testing.assert_allclose(hp, h[perm], atol=1e-9)
    np.testing.assert_allclose(gp, g, atol=1e-9)


def test_single_node_graph_embedding():
    h, g = policy.encode(_params(0), Instance(coords=[[0.2, 0.7]]))
    np.testing.assert_allclose(g, h[0], atol=1e-15)


def test_encode_bit_stable():
    inst = generate_instance(TaskSpec(TSP, n_nodes=6, seed=9))
    a = policy.encode(_params(5), inst)[0]
    b = policy.encode(_params(5), inst)[0]
    assert np.array_equal(a, b)


def test_last_node_gets_full_mass():
    inst = generate_instance(TaskSpec(TSP, n_nodes=5, seed=2))
    p = policy.step_distribution(_params(1), inst, [0, 3, 1, 4])
    assert p.tolist() == [0.0, 0.0, 1.0, 0.0, 0.0]


def test_cvrp_full_vehicle_must_return():
    inst = Instance(coords=[[0.1, 0.2], [0.8, 0.3], [0.5, 0.9]], depot=[0.5, 0.5], demands=[3, 2, 4], capacity=5)
    p = policy.step_distribution(_params(0, CVRP_ARCH), inst, [1, 2])
    assert p[0] == 1.0 and np.all(p[1:] == 0.0)


def test_cvrp_depot_masked_after_depot_and_at_start():
    inst = generate_instance(TaskSpec(CVRP, n_nodes=4, capacity=20, seed=3))
    params = _params(0, CVRP_ARCH)
    assert policy.step_distribution(params, inst, [])[0] == 0.0
    assert policy.step_distribution(params, inst, [2, 0])[0] == 0.0


def test_distribution_sums_to_one():
    params = _params(7)
    rng = Stream(0)
    for k in range(20):
        inst = generate_instance(TaskSpec(TSP, n_nodes=8), rng.spawn(k))
        partial = rng.spawn(("p", k)).permutation(8)[: k % 7]
        p = policy.step_distribution(params, inst, partial)
        assert abs(p.sum() - 1.0) < 1e-12
        assert np.all(p[list(partial)] == 0.0)


def test_one_node_rollout():
    r = policy.greedy_rollout(_params(0), Instance(coords=[[0.3, 0.3]]))
    assert r.solution == Tour((0,)) and r.log_prob == 0.0


@pytest.mark.parametrize("n", [2, 3, 4])
def test_total_probability_mass(n):
    inst = generate_instance(TaskSpec(TSP, n_nodes=n, seed=n))
    perms = [Tour(p) for p in itertools.permutations(range(n))]
    for seed in range(5):
        lp = policy.log_likelihood_batch(_params(seed), [inst] * len(perms), perms)
        assert abs(np.exp(lp).sum() - 1.0) < 1e-6


def test_greedy_is_deterministic_and_valid(tsp10):
    params = _params(2)
    a = policy.rollout_batch(params, tsp10, "greedy")
    b = policy.rollout_batch(params, tsp10, "greedy")
    assert np.array_equal(a.actions, b.actions) and np.array_equal(a.costs, b.costs)
    for inst, sol, c in zip(tsp10, a.solutions(), a.costs):
        assert sorted(sol.order) == list(range(10))
        assert solution_cost(inst, sol) == pytest.approx(c, abs=1e-12)


def test_sampled_cvrp_rollouts_are_feasible(cvrp6):
    out = policy.rollout_batch(_params(1, CVRP_ARCH), cvrp6, "sample", rng=Stream(3))
    for inst, sol, c in zip(cvrp6, out.solutions(), out.costs):
        assert isinstance(sol, RoutePlan)
        assert solution_cost(inst, sol) == pytest.approx(c, abs=1e-12)
    assert np.all(out.log_prob_values() <= 0)


def test_log_prob_consistency(tsp10, cvrp6):
    for params, data in ((_params(4), tsp10), (_params(4, CVRP_ARCH), cvrp6)):
        out = policy.rollout_batch(params, data, "sample", rng=Stream(8))
        again = policy.log_likelihood_batch(params, data, out.solutions())
        np.testing.assert_allclose(again, out.log_prob_values(), atol=1e-9)


def test_log_prob_gradient_matches_finite_differences():
    arch = Architecture(embed_dim=4, n_layers=1)
    params = policy.init_params(arch, 11)
    inst = generate_instance(TaskSpec(TSP, n_nodes=5, seed=3))
    sol = Tour((0, 2, 4, 1, 3))
    lp, leaves = policy.log_likelihood_batch(params, [inst], [sol], track_grad=True)
    T.backward(T.sum(lp))
    analytic = policy.leaf_gradients(leaves, params).flat()
    flat = params.flat()
    h = 1e-5
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[i] += h
        down[i] -= h
        numeric[i] = (policy.log_likelihood(params.with_flat(up), inst, sol)
                      - policy.log_likelihood(params.with_flat(down), inst, sol)) / (2 * h)
    assert rel_error(analytic, numeric) < 1e-3


def test_greedy_cost_invariant_under_relabeling():
    params = _params(6)
    for seed in range(5):
        inst = generate_instance(TaskSpec(TSP, n_nodes=9, seed=seed))
        perm = [0] + [1 + i for i in Stream(seed).permutation(8)]
        a = policy.greedy_rollout(params, inst).cost
        b = policy.greedy_rollout(params, inst.permuted(perm)).cost
        assert a == pytest.approx(b, abs=1e-9)


def test_mixed_sizes_in_greedy_costs():
    params = _params(0)
    data = generate_dataset(TaskSpec(TSP, n_nodes=5), 3) + generate_dataset(TaskSpec(TSP, n_nodes=7), 2)
    costs = policy.greedy_costs(params, data)
    assert costs[3] == pytest.approx(policy.greedy_rollout(params, data[3]).cost)


def test_wrong_problem_rejected(cvrp6):
    with pytest.raises(ValueError):
        policy.rollout_batch(_params(0), cvrp6, "greedy")
