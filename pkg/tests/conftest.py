import numpy as np
import pytest

from ttasr.features import FeatureMatrix
from ttasr.network import ModelConfig, TransducerModel


def micro_config(**overrides) -> ModelConfig:
    """Smallest usable config; float64 for gradient work."""
    defaults = dict(
        vocab_size=5,
        feat_dim=12,
        conv_channels=(2, 2, 3),
        conv_kernels=((5, 3), (3, 3), (3, 3)),
        num_blocks=2,
        num_heads=2,
        d_model=8,
        ffn_mult=2,
        embed_dim=4,
        lstm_layers=2,
        lstm_hidden=6,
        joint_dim=7,
        dtype="float64",
    )
    defaults.update(overrides)
    return ModelConfig(**defaults)


def random_features(rng, d=12, frames=13, sample_rate=16000) -> FeatureMatrix:
    return FeatureMatrix(
        values=rng.normal(size=(d, frames)),
        n_active=d,
        sample_rate=sample_rate,
        normalized=True,
    )


@pytest.fixture
def micro_model():
    return TransducerModel(micro_config())


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """|a - n| / max(1e-6, |a| + |n|), elementwise."""
    denom = np.maximum(1e-6, np.abs(analytic) + np.abs(numeric))
    return np.abs(analytic - numeric) / denom


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of an array."""
    grad = np.zeros_like(x, dtype=np.float64)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        hi = f()
        x[idx] = orig - h
        lo = f()
        x[idx] = orig
        grad[idx] = (hi - lo) / (2.0 * h)
    return grad
