"""Pytest configuration and fixtures."""

import numpy as np
import pytest
from factories import TINY_CORPUS, TINY_TRANSFORMER

from detext.data.synthetic import generate_synthetic_corpus
from detext.models.scoring import build_model
from detext.models.spec import EncoderType, ModelSpec


@pytest.fixture(scope="session")
def corpus():
    """(train, dev, test) of the tiny synthetic corpus."""
    return generate_synthetic_corpus(TINY_CORPUS, seed=7)


@pytest.fixture(scope="session")
def train_set(corpus):
    return corpus[0]


@pytest.fixture(scope="session")
def dev_set(corpus):
    return corpus[1]


@pytest.fixture(scope="session")
def test_set(corpus):
    return corpus[2]


@pytest.fixture
def cnn_spec():
    return ModelSpec(encoder=EncoderType.CNN, word_dim=8, num_filters=8, hidden_size=8)


@pytest.fixture
def bert_spec():
    return ModelSpec(encoder=EncoderType.BERT, transformer=TINY_TRANSFORMER, num_merges=30, hidden_size=8)


@pytest.fixture
def mlp_spec():
    return ModelSpec(encoder=EncoderType.MLP, hidden_size=8)


@pytest.fixture
def cnn_model(cnn_spec, train_set):
    return build_model(cnn_spec, train_set)


@pytest.fixture
def bert_model(bert_spec, train_set):
    return build_model(bert_spec, train_set)


@pytest.fixture
def mlp_model(mlp_spec, train_set):
    return build_model(mlp_spec, train_set)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
