"""Central finite-difference gradient checks shared by the test modules."""

import numpy as np

from metaroute import tensor as T


def numeric_grad(f, arrays, h=1e-5):
    """Central differences of scalar ``f(*arrays)`` w.r.t. every array."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            up = f(*arrays)
            a[i] = old - h
            down = f(*arrays)
            a[i] = old
            g[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def rel_error(a, b, floor=1e-8):
    a, b = np.asarray(a), np.asarray(b)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), floor)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def check_op(build, arrays, h=1e-5, seed=0):
    """Max relative error between autodiff and finite differences.

    ``build`` maps input tensors to an output tensor; the scalar loss is a
    fixed random projection of that output.
    """
    out_shape = build(*[T.tensor(a) for a in arrays]).shape
    proj = np.random.default_rng(seed).normal(size=out_shape)

    def loss_value(*arrs):
        with T.no_grad():
            return float((build(*[T.tensor(a) for a in arrs]).data * proj).sum())

    leaves = [T.tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = T.sum(T.mul(build(*leaves), T.tensor(proj)))
    analytic = T.grad_of(loss, leaves)
    numeric = numeric_grad(loss_value, [a.copy() for a in arrays], h)
    return max(rel_error(x, y) for x, y in zip(analytic, numeric))


def exact_policy_gradient(params, inst, baseline=0.0):
    """``sum_sigma pi(sigma) (c(sigma) - b) grad log pi(sigma)`` over every tour of a small TSP."""
    import itertools

    from metaroute import policy
    from metaroute.solutions import Tour, tour_length

    tours = [Tour(p) for p in itertools.permutations(range(inst.n))]
    lp, leaves = policy.log_likelihood_batch(params, [inst] * len(tours), tours, track_grad=True)
    pi = np.exp(lp.data)
    cost = np.array([tour_length(inst, t) for t in tours])
    T.backward(T.sum(T.mul(lp, T.tensor(pi * (cost - baseline)))))
    return policy.leaf_gradients(leaves, params).flat()


def monte_carlo_policy_gradient(params, inst, n_samples, batch, rng):
    """Mean and standard error (from batch means) of the REINFORCE estimator on copies of ``inst``."""
    from metaroute.rltrain import reinforce_batch_gradient

    means = np.array([reinforce_batch_gradient(params, params, [inst] * batch, rng)[0].flat()
                      for _ in range(n_samples // batch)])
    return means.mean(axis=0), means.std(axis=0, ddof=1) / np.sqrt(len(means))


def _away_from(x, points, margin=1e-2):
    for p in points:
        x = np.where(np.abs(x - p) < margin, x + 3 * margin, x)
    return x


def op_cases(rng):
    """(name, build, inputs) for every public op at a random point."""
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 4))
    v = rng.normal(size=(4,))
    m = rng.normal(size=(4, 2))
    batched = rng.normal(size=(2, 3, 4))
    bm = rng.normal(size=(2, 4, 3))
    mask = rng.random((3, 4)) < 0.6
    mask[:, 0] = True
    idx = rng.integers(0, 4, size=3)
    return [
        ("add", lambda x, y: T.add(x, y), [a, b]),
        ("add_bias", lambda x, y: T.add(x, y), [a, v]),
        ("sub", lambda x, y: T.sub(x, y), [a, b]),
        ("mul", lambda x, y: T.mul(x, y), [a, b]),
        ("mul_bias", lambda x, y: T.mul(x, y), [a, v]),
        ("scale", lambda x: T.scale(x, -1.7), [a]),
        ("tanh", T.tanh, [a]),
        ("relu", T.relu, [_away_from(a, [0.0])]),
        ("sigmoid", T.sigmoid, [a]),
        ("exp", T.exp, [a]),
        ("log", T.log, [np.abs(a) + 0.5]),
        ("clip", lambda x: T.clip(x, -0.5, 0.5), [_away_from(a, [-0.5, 0.5])]),
        ("sum", lambda x: T.sum(x), [a]),
        ("sum_axis", lambda x: T.sum(x, axis=0), [a]),
        ("mean", lambda x: T.mean(x, axis=1, keepdims=True), [a]),
        ("matmul", T.matmul, [a, m]),
        ("matmul_shared", T.matmul, [batched, m]),
        ("matmul_batched", T.matmul, [batched, bm]),
        ("transpose", T.swap_last, [batched]),
        ("reshape", lambda x: T.reshape(x, (4, 3)), [a]),
        ("expand", lambda x: T.expand(x, 1, 3), [a]),
        ("concat", lambda x, y: T.concat([x, y], axis=0), [a, b]),
        ("gather", lambda x: T.gather(x, idx), [a]),
        ("softmax", lambda x: T.softmax(x, axis=-1), [a]),
        ("masked_softmax", lambda x: T.masked_softmax(x, mask, axis=-1), [a]),
        ("layer_norm", lambda x, g, c: T.layer_norm(x, g, c), [a, rng.normal(size=4), rng.normal(size=4)]),
    ]


def _fd_flat(loss_at, flat, h=1e-5):
    num = np.empty_like(flat)
    for i in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[i] += h
        down[i] -= h
        num[i] = (loss_at(up) - loss_at(down)) / (2 * h)
    return num


def policy_log_prob_error(seed, n_nodes=5):
    """Autodiff versus finite differences for the log-probability of a random tour."""
    from metaroute import policy
    from metaroute.params import Architecture
    from metaroute.rng import Stream
    from metaroute.solutions import Tour
    from metaroute.taskgen import TSP, TaskSpec, generate_instance

    params = policy.init_params(Architecture(embed_dim=4, n_layers=1), seed)
    inst = generate_instance(TaskSpec(TSP, n_nodes=n_nodes, seed=seed))
    sol = Tour(tuple(Stream(seed).spawn("tour").permutation(n_nodes)))
    lp, leaves = policy.log_likelihood_batch(params, [inst], [sol], track_grad=True)
    T.backward(T.sum(lp))
    analytic = policy.leaf_gradients(leaves, params).flat()
    numeric = _fd_flat(lambda f: policy.log_likelihood(params.with_flat(f), inst, sol), params.flat())
    return rel_error(analytic, numeric)


def edge_loss_error(seed, n_nodes=5, batch=2):
    """Autodiff versus finite differences for the weighted edge BCE of the full edge model."""
    from metaroute import edgenet, policy
    from metaroute.oracles import held_karp
    from metaroute.params import EDGENET, Architecture
    from metaroute.taskgen import TSP, TaskSpec, generate_dataset

    params = edgenet.init_params(Architecture(kind=EDGENET, embed_dim=4, n_layers=1), seed)
    insts = generate_dataset(TaskSpec(TSP, n_nodes=n_nodes, seed=seed), batch)
    labels = [edgenet.labels_from_tour(held_karp(i)[0], n_nodes) for i in insts]
    loss, leaves = edgenet.batch_loss(params, insts, labels, 1.0, 1.5, track_grad=True)
    T.backward(loss)
    analytic = policy.leaf_gradients(leaves, params).flat()
    numeric = _fd_flat(lambda f: edgenet.batch_loss(params.with_flat(f), insts, labels, 1.0, 1.5), params.flat())
    return rel_error(analytic, numeric)

