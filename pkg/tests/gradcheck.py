"""Finite-difference gradient checks for networks recorded on a tape."""

import numpy as np

from prefnav.nn import (
    Conv2D, Dense, MaxPool, Network, ReLU, Softplus, Tape, backward, forward, full_grads,
)
from prefnav.nn.layers import MaxPoolLayer, ReLULayer

from oracles import central_diff, rel_error

# one small network per layer type: (input shape, layers)
LAYER_CASES = {
    "dense": ((5,), (Dense(4),)),
    "relu": ((6,), (Dense(5), ReLU(), Dense(3))),
    "softplus": ((6,), (Dense(5), Softplus(), Dense(2))),
    "conv": ((7, 7, 2), (Conv2D(3, kernel=3, stride=1, padding=0),)),
    "conv_strided_padded": ((8, 8, 2), (Conv2D(3, kernel=5, stride=2, padding=2), Dense(2))),
    "maxpool": ((6, 6, 2), (Conv2D(2, kernel=3, stride=1, padding=1), MaxPool(2), Dense(2))),
}


def activation_pattern(net, x):
    tape = Tape()
    forward(net, x, tape)
    parts = []
    for layer, cache in tape.entries:
        if isinstance(layer, ReLULayer):
            parts.append(cache.ravel())
        elif isinstance(layer, MaxPoolLayer):
            parts.append(cache[0].ravel())
    return np.concatenate(parts) if parts else np.zeros(0)


def check_network_gradients(spec, seed, n_probe=6):
    """Compare tape gradients against central differences on float64 copies.

    Probes whose +-h perturbation changes a ReLU mask or a max-pool winner
    straddle a kink where no derivative exists; those are skipped.
    """
    rng = np.random.default_rng(seed)
    net = Network(spec, seed=seed).astype(np.float64)
    for p in net.parameters():
        p.value = p.value + rng.normal(0, 0.1, p.value.shape)
    x = rng.normal(size=(3,) + tuple(spec.input_shape))
    weights = rng.normal(size=(3,) + tuple(net.output_shape))

    def loss():
        return float(np.sum(weights * forward(net, x)))

    tape = Tape()
    forward(net, x, tape)
    grads = full_grads(net, backward(tape, weights))
    base = activation_pattern(net, x)
    worst, checked = 0.0, 0
    for p, g in zip(net.parameters(), grads):
        flat = p.value.reshape(-1)
        for idx in rng.choice(flat.size, size=min(n_probe, flat.size), replace=False):
            patterns = []
            num = central_diff(lambda: patterns.append(activation_pattern(net, x)) or loss(), flat, idx)
            if any(not np.array_equal(base, pat) for pat in patterns):
                continue
            checked += 1
            worst = max(worst, float(rel_error(g.reshape(-1)[idx], num)))
    assert checked > 0
    return worst


def check_triplet_loss(seed, batch=5, dim=8, margin=1.0):
    """Worst relative error of the triplet-loss gradient over all inputs."""
    from prefnav.encoders import triplet_loss, triplet_loss_grad

    rng = np.random.default_rng(seed)
    a, p, n = (rng.normal(size=(batch, dim)) for _ in range(3))
    _, ga, gp, gn = triplet_loss_grad(a, p, n, margin)

    def loss():
        return float(triplet_loss(a, p, n, margin).mean())

    def near_kink():
        slack = np.linalg.norm(a - p, axis=1) - np.linalg.norm(a - n, axis=1) + margin
        return np.abs(slack) < 1e-2

    worst, checked = 0.0, 0
    for arr, g in ((a, ga), (p, gp), (n, gn)):
        for idx in np.ndindex(arr.shape):
            if near_kink()[idx[0]]:
                continue
            checked += 1
            worst = max(worst, float(rel_error(g[idx], central_diff(loss, arr, idx))))
    assert checked > 0
    return worst


def check_ranking_loss(seed, n_items=6, n_pairs=10, margin=1.0):
    from prefnav.utility import ranking_loss, ranking_loss_grad

    rng = np.random.default_rng(seed)
    u = rng.normal(0, 2, n_items)
    pairs = np.array([rng.choice(n_items, 2, replace=False) for _ in range(n_pairs)])
    _, g = ranking_loss_grad(u, pairs, margin)

    def loss():
        return float(ranking_loss(u[pairs[:, 0]], u[pairs[:, 1]], margin).mean())

    slack = np.abs(margin - (u[pairs[:, 0]] - u[pairs[:, 1]]))
    worst, checked = 0.0, 0
    for i in range(n_items):
        touching = (pairs == i).any(axis=1)
        if (slack[touching] < 1e-2).any():
            continue
        checked += 1
        worst = max(worst, float(rel_error(g[i], central_diff(loss, u, i))))
    assert checked > 0
    return worst


def check_mse_stop_gradient(seed, batch=6):
    """Worst relative error on u_pro parameters; asserts u_vis gets no gradient.

    Uses a smaller step than the layer checks: softplus curvature makes the
    O(h^2) truncation error visible at h = 1e-3.
    """
    from prefnav.utility import mse_stop_gradient_loss, utility_spec

    rng = np.random.default_rng(seed)
    u_vis = Network(utility_spec(), seed=seed).astype(np.float64)
    u_pro = Network(utility_spec(), seed=seed + 1000).astype(np.float64)
    for p in u_pro.parameters():
        p.value = p.value + rng.normal(0, 0.1, p.value.shape)
    e_vis = rng.normal(size=(batch, 8))
    e_pro = rng.normal(size=(batch, 8))
    _, grads = mse_stop_gradient_loss(u_pro, e_pro, u_vis, e_vis)
    assert not set(grads) & set(u_vis.parameters())

    def loss():
        return mse_stop_gradient_loss(u_pro, e_pro, u_vis, e_vis)[0]

    base = activation_pattern(u_pro, e_pro)
    worst, checked = 0.0, 0
    for p, g in zip(u_pro.parameters(), full_grads(u_pro, grads)):
        flat = p.value.reshape(-1)
        for idx in rng.choice(flat.size, size=min(6, flat.size), replace=False):
            patterns = []
            num = central_diff(lambda: patterns.append(activation_pattern(u_pro, e_pro)) or loss(), flat, idx,
                               h=1e-5)
            if any(not np.array_equal(base, pat) for pat in patterns):
                continue
            checked += 1
            worst = max(worst, float(rel_error(g.reshape(-1)[idx], num)))
    assert checked > 0
    return worst
