"""Finite-difference verification of hand-derived backward passes."""

from __future__ import annotations

import numpy as np

from .layers import Layer


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_layer(layer: Layer, x: np.ndarray, seed: int = 0, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients
    of the scalar loss sum(layer(x) * R) over the input and all parameters."""
    rng = np.random.default_rng(seed)
    ref = layer.forward(x)
    r = rng.normal(size=ref.shape)

    def loss_at(x_probe):
        return float(np.sum(layer.forward(x_probe) * r))

    layer.forward(x)
    dx = layer.backward(r)
    analytic_params = [(value, grad.copy()) for _, value, grad in layer.param_items()]

    num_dx = np.zeros_like(x, dtype=float)
    flat = x.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + step
        up = loss_at(x)
        flat[idx] = orig - step
        down = loss_at(x)
        flat[idx] = orig
        num_dx.reshape(-1)[idx] = (up - down) / (2 * step)
    worst = _rel_err(dx, num_dx)

    for value, analytic in analytic_params:
        vflat = value.reshape(-1)
        numeric = np.zeros_like(vflat)
        for idx in range(vflat.size):
            orig = vflat[idx]
            vflat[idx] = orig + step
            up = loss_at(x)
            vflat[idx] = orig - step
            down = loss_at(x)
            vflat[idx] = orig
            numeric[idx] = (up - down) / (2 * step)
        worst = max(worst, _rel_err(analytic.reshape(-1), numeric))
    return worst


def check_model_loss(model, x: np.ndarray, y: np.ndarray, step: float = 1e-5,
                     max_params: int = 160, seed: int = 0) -> float:
    """Max relative error of d(MSE)/d(params) on a random parameter subset."""
    rng = np.random.default_rng(seed)

    def loss():
        pred = model.forward(x)
        return float(np.mean((pred - y) ** 2))

    pred = model.forward(x)
    model.backward(2.0 * (pred - y) / pred.size)
    worst = 0.0
    for layer in model.layers:
        for _, value, grad in layer.param_items():
            flat = value.reshape(-1)
            gflat = grad.reshape(-1)
            count = min(max_params, flat.size)
            picks = rng.choice(flat.size, size=count, replace=False)
            for idx in picks:
                orig = flat[idx]
                flat[idx] = orig + step
                up = loss()
                flat[idx] = orig - step
                down = loss()
                flat[idx] = orig
                numeric = (up - down) / (2 * step)
                worst = max(worst, _rel_err(np.array([gflat[idx]]), np.array([numeric])))
    return worst
