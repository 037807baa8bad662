import numpy as np
import pytest

from sentcl import EncoderConfig, EncoderParams, build_vocab


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_vocab():
    corpus = [
        "the cat sat on the mat",
        "a dog ran in the park",
        "the bird flew over a tree",
        "cats and dogs chase birds",
    ]
    return build_vocab(corpus)


@pytest.fixture
def tiny_config(tiny_vocab):
    return EncoderConfig(
        vocab_size=len(tiny_vocab), d_model=16, n_heads=2, n_layers=2,
        d_ff=32, max_seq_len=10, dropout_rate=0.1,
    )


@pytest.fixture
def tiny_params(tiny_config):
    return EncoderParams.init(tiny_config, np.random.default_rng(7))
