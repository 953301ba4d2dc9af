import numpy as np
import pytest

from pmrope.model import ModelConfig, init_params


@pytest.fixture
def tiny_config():
    """Smallest config that still exercises every mechanism."""
    return ModelConfig(n_enc_layers=1, n_dec_layers=1, d_model=8, n_heads=2, head_dim=4,
                       ffn_dim=16, text_vocab=6, audio_vocab=8)


@pytest.fixture
def tiny_model(tiny_config):
    return init_params(tiny_config, seed=7), tiny_config


@pytest.fixture
def tiny_model_f64(tiny_config):
    return init_params(tiny_config, seed=7, dtype=np.float64), tiny_config
