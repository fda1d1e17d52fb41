"""Finite-difference verification of the model's analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine
from .model import ModelParameters, WDnCNNConfig, build_model, forward
from .training import PHASE0_WEIGHTS, make_training_pair
from .wavelet import load_filterbank

EPS = 1e-5
TOLERANCE = 1e-4


@dataclass
class ParameterCheck:
    name: str
    size: int
    worst_rel_error: float
    worst_abs_error: float

    @property
    def passed(self) -> bool:
        return self.worst_rel_error < TOLERANCE


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients from dividing by noise."""
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def check_gradients(loss_fn, params: ModelParameters, eps: float = EPS, floor: float = 1e-7) -> list[ParameterCheck]:
    """Compare ``backward`` against central differences for every scalar of every parameter.

    ``loss_fn()`` must rebuild the graph from the current parameter values
    and return a scalar Tensor.
    """
    loss = loss_fn()
    engine.backward(loss)
    reports = []
    for p in params.parameters():
        analytic = p.grad.copy()
        numeric = np.empty_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(loss_fn().data)
            flat[i] = orig - eps
            down = float(loss_fn().data)
            flat[i] = orig
            numeric.reshape(-1)[i] = (up - down) / (2.0 * eps)
        rel = relative_error(analytic, numeric, floor)
        reports.append(ParameterCheck(p.name, p.data.size, float(rel.max()), float(np.abs(analytic - numeric).max())))
    return reports


def model_gradcheck(
    config: WDnCNNConfig | None = None,
    seed: int = 0,
    image_size: int = 16,
    batch: int = 2,
    sigma_n: float = 25.0,
    bank_name: str = "haar",
) -> list[ParameterCheck]:
    """End-to-end check of the band-weighted loss through the whole network.

    Biases are drawn at random instead of zero: with zero biases a dead
    feature map feeds exact zeros into the next ReLU, where the one-sided
    subgradient and a central difference legitimately disagree.
    """
    config = config or WDnCNNConfig.miniature()
    rng = np.random.default_rng([seed, 1])
    params = build_model(config, seed)
    for conv in params.layers():
        conv.bias.data[...] = rng.uniform(0.05, 0.2, conv.bias.shape) * rng.choice([-1.0, 1.0], conv.bias.shape)
    bank = load_filterbank(bank_name)
    clean = rng.uniform(0.0, 1.0, (batch, config.channels, image_size, image_size))
    u, target, sigma = make_training_pair(clean, sigma_n, bank, rng)
    sigmas = np.full(batch, sigma)

    def loss_fn():
        pred = forward(u, sigmas, params).bands()
        return engine.weighted_band_mse(pred, target.bands(), PHASE0_WEIGHTS, batch)

    return check_gradients(loss_fn, params)
