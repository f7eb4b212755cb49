"""Finite-difference gradient suites for the core ops and the full model."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Value, grad_check
from .datagen import generate_cloud
from .entropy import FactorizedPrior, rate_bits
from .model import EncoderContext, ModelConfig, PviModel
from .nn import ParameterStore


def op_suite(seed: int = 0) -> dict:
    """Max relative finite-difference error per differentiable operation."""
    rng = np.random.default_rng(seed)
    res = {}

    a = Value(rng.uniform(-2, 2, (4, 3)), requires_grad=True)
    b = Value(rng.uniform(-2, 2, (3, 2)), requires_grad=True)
    res["matmul"] = grad_check(lambda v: ad.vsum(ad.matmul(v[0], v[1])), [a, b])

    x = Value(rng.uniform(-2, 2, (3, 4)), requires_grad=True)
    y = Value(rng.uniform(-2, 2, (3, 4)), requires_grad=True)
    c8 = Value(rng.uniform(1, 2, (3, 8)))
    c4 = Value(rng.uniform(-1, 1, (3, 4)))
    c1 = Value(rng.uniform(-1, 1, (1, 4)))
    res["add_mul"] = grad_check(
        lambda v: ad.vsum(ad.mul(ad.add(v[0], v[1]), v[0])), [x, y])
    res["relu"] = grad_check(lambda v: ad.vsum(ad.relu(v[0])), [x])
    res["concat"] = grad_check(
        lambda v: ad.vsum(ad.mul(ad.concat_cols([v[0], v[1]]), c8)), [x, y])
    res["softmax"] = grad_check(
        lambda v: ad.vsum(ad.mul(ad.softmax(v[0], axis=1), c4)), [x])
    res["global_mean_pool"] = grad_check(
        lambda v: ad.vsum(ad.mul(ad.global_mean_pool(v[0]), c1)), [x])
    labels = (rng.uniform(size=(3, 4)) > 0.5).astype(float)
    res["bce_with_logits"] = grad_check(
        lambda v: ad.bce_with_logits(v[0], labels), [x])
    res["tanh_sigmoid_softplus"] = grad_check(
        lambda v: ad.vsum(ad.tanh(ad.sigmoid(ad.softplus(v[0])))), [x])
    res["log_clamp"] = grad_check(
        lambda v: ad.vsum(ad.log(ad.clamp_min(v[0], 0.05))),
        [Value(rng.uniform(0.2, 2, (3, 4)), requires_grad=True)])

    store = ParameterStore()
    prior = FactorizedPrior(store, "p", 2, rng)
    yv = Value(rng.uniform(-3, 3, (5, 2)), requires_grad=True)
    prior_params = [p.value for p in store.parameters()]
    res["rate_bits"] = grad_check(
        lambda v: rate_bits(v[0], prior), [yv] + prior_params)

    pairs = (
        (np.array([0, 1, 2]), np.array([0, 1, 2])),
        (np.array([1, 2]), np.array([0, 1])),
    )
    f = Value(rng.uniform(-1, 1, (3, 2)), requires_grad=True)
    w = Value(rng.uniform(-1, 1, (2, 2, 3)), requires_grad=True)
    bias = Value(rng.uniform(-1, 1, 3), requires_grad=True)
    res["kernel_map_conv"] = grad_check(
        lambda v: ad.vsum(ad.relu(ad.kernel_map_conv(v[0], v[1], v[2], pairs, 3))),
        [f, w, bias])

    t1 = Value(rng.uniform(-1, 1, (2, 2, 2)), requires_grad=True)
    t2 = Value(rng.uniform(-1, 1, (2, 2, 2)), requires_grad=True)
    coeffs = Value(np.array([0.3, 0.7]), requires_grad=True)
    res["expert_mix"] = grad_check(
        lambda v: ad.vsum(ad.tanh(ad.mix([v[0], v[1]], v[2]))), [t1, t2, coeffs])

    rows = np.array([[0, 1, 2, -1, 0, 1, -1, 2], [2, 0, -1, 1, 1, 0, 2, -1]])
    wts = rng.uniform(0, 1, (2, 8))
    res["trilinear_gather"] = grad_check(
        lambda v: ad.vsum(ad.relu(ad.trilinear_gather(v[0], rows, wts))),
        [Value(rng.uniform(-1, 1, (3, 2)), requires_grad=True)])

    idx = np.array([0, 2, 2, 1])
    cg = Value(rng.uniform(1, 2, (4, 2)))
    res["gather_rows"] = grad_check(
        lambda v: ad.vsum(ad.mul(ad.gather_rows(v[0], idx), cg)),
        [Value(rng.uniform(-1, 1, (3, 2)), requires_grad=True)])

    # uniform noise passes gradients through unchanged
    xn = Value(rng.uniform(-1, 1, (4, 3)), requires_grad=True)
    ad.vsum(ad.uniform_noise(xn, np.random.default_rng(0))).backward()
    res["uniform_noise_passthrough"] = float(np.abs(xn.grad - 1.0).max())
    return res


def end_to_end(seed: int = 0, n_points: int = 30, samples_per_param: int = 3,
               h: float = 1e-5) -> float:
    """Finite-difference check of the full training loss on a tiny cloud.

    Backward gradients are compared against central differences on a sample of
    entries from every parameter tensor; returns the max relative error.
    """
    cfg = ModelConfig(channels=(4, 4, 4), latent_channels=3, n_experts=2, knn=4)
    model = PviModel(cfg, seed=seed)
    cloud = generate_cloud("sphere", n_points, 5, seed)
    ctx = EncoderContext.build(cloud, cfg)

    def loss_value() -> float:
        total, _ = model.loss_graph(ctx, 0.7, np.random.default_rng(seed + 1))
        return float(total.data)

    model.store.zero_grad()
    total, _ = model.loss_graph(ctx, 0.7, np.random.default_rng(seed + 1))
    total.backward()

    rng = np.random.default_rng(seed + 2)
    worst = 0.0
    for p in model.store.parameters():
        grad = p.value.grad if p.value.grad is not None else np.zeros_like(p.value.data)
        flat = p.value.data.ravel()
        gflat = np.asarray(grad).ravel()
        count = min(samples_per_param, flat.size)
        for j in rng.choice(flat.size, size=count, replace=False):
            orig = flat[j]
            flat[j] = orig + h
            fp = loss_value()
            flat[j] = orig - h
            fm = loss_value()
            flat[j] = orig
            numeric = (fp - fm) / (2 * h)
            err = abs(gflat[j] - numeric) / max(abs(gflat[j]), abs(numeric), 1e-6)
            worst = max(worst, err)
    model.store.zero_grad()
    return worst
