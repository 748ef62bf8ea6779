"""Shared fixtures and independent oracles for the test suite."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from odecast.data import SpiralConfig, gen_spirals, normalize_split
from odecast.model import Architecture, init_params
from odecast.training import TrainConfig

ARTIFACTS = Path(__file__).resolve().parent.parent / "artifacts"


def finite_difference(f, x0: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function, coordinate by coordinate."""
    x0 = np.asarray(x0, dtype=np.float64)
    grad = np.zeros_like(x0)
    flat = grad.ravel()
    xf = x0.ravel()
    for i in range(xf.size):
        xp = xf.copy()
        xm = xf.copy()
        xp[i] += h
        xm[i] -= h
        flat[i] = (f(xp.reshape(x0.shape)) - f(xm.reshape(x0.shape))) / (2 * h)
    return grad


def expm_taylor(M: np.ndarray, terms: int = 30) -> np.ndarray:
    """Matrix exponential by scaling-and-squaring Taylor series (oracle)."""
    norm = np.linalg.norm(M, 1)
    s = max(0, int(np.ceil(np.log2(norm))) + 1) if norm > 0 else 0
    Ms = M / 2 ** s
    E = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, terms):
        term = term @ Ms / k
        E = E + term
    for _ in range(s):
        E = E @ E
    return E


def rel_err(a, b, floor: float = 1e-12) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), floor)
    return float(np.max(np.abs(a - b))) / denom


@pytest.fixture(scope="session")
def tiny_arch() -> Architecture:
    return Architecture(n_features=2, latent_dim=6, encoder_hidden=8,
                        dynamics_hidden=(12, 12), decoder_hidden=10,
                        classifier_hidden=6, noise_dim=1)


@pytest.fixture(scope="session")
def tiny_params(tiny_arch):
    from odecast.series import NormStats
    stats = NormStats(mean=np.zeros(2), std=np.ones(2), time_origin=0.0, time_scale=1.0)
    return init_params(tiny_arch, ["x", "y"], seed=7, norm_stats=stats)


@pytest.fixture(scope="session")
def tiny_config() -> TrainConfig:
    return TrainConfig(epochs=2, batch_size=8, learning_rate=0.01,
                       kl_warmup_epochs=2, classifier_loss_weight=5.0,
                       latent_dim=6, encoder_hidden=8, dynamics_hidden=(12, 12),
                       decoder_hidden=10, classifier_hidden=6, patience=10)


@pytest.fixture(scope="session")
def spiral_collection():
    """Small normalized spiral set shared by model/engine tests."""
    series = gen_spirals(SpiralConfig(n_series=16, points_per_series=24, seed=5))
    normalized, = normalize_split(series)
    return normalized


@pytest.fixture(scope="session")
def spiral_checkpoint_path():
    path = ARTIFACTS / "spiral.ckpt"
    if not path.exists():
        pytest.skip("committed spiral checkpoint not present")
    return path


@pytest.fixture(scope="session")
def icu_checkpoint_path():
    path = ARTIFACTS / "icu.ckpt"
    if not path.exists():
        pytest.skip("committed ICU checkpoint not present")
    return path
