import numpy as np
import pytest

from scribelab.model import ModelConfig, init_model


@pytest.fixture
def micro_classifier_config():
    return ModelConfig(
        vocab_size=20, d_model=16, n_heads=2, n_encoder_layers=1,
        n_decoder_layers=1, d_ff=24, max_positions=12, n_classes=5,
        dropout_p=0.0, seed=11,
    )


@pytest.fixture
def micro_seq2seq_config():
    return ModelConfig(
        vocab_size=20, d_model=16, n_heads=2, n_encoder_layers=1,
        n_decoder_layers=1, d_ff=24, max_positions=12, n_classes=None,
        dropout_p=0.0, seed=13,
    )


@pytest.fixture
def micro_classifier(micro_classifier_config):
    return init_model(micro_classifier_config, dtype=np.float64)


@pytest.fixture
def micro_seq2seq(micro_seq2seq_config):
    return init_model(micro_seq2seq_config, dtype=np.float64)
