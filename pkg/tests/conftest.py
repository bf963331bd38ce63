import numpy as np
import pytest

from more_lab.datagen import (
    GeneratorConfig,
    build_label_map,
    build_vocabulary,
    generate_split,
)
from more_lab.model import ModelConfig


@pytest.fixture(scope="session")
def vocab():
    return build_vocabulary()


@pytest.fixture(scope="session")
def gen_setup():
    """Generator config, schema and label map shared across tests."""
    cfg = GeneratorConfig(image_size=32)
    schema, label_map = build_label_map(cfg)
    return cfg, schema, label_map


@pytest.fixture(scope="session")
def tiny_corpus(gen_setup):
    """A small rendered corpus: 24 train / 8 dev instances."""
    cfg, schema, label_map = gen_setup
    train = generate_split(11, "train", 24, schema, label_map, cfg,
                           unit="instances")
    dev = generate_split(11, "dev", 8, schema, label_map, cfg,
                         unit="instances")
    return train, dev, schema


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def micro_model_config(vocab, **overrides):
    return ModelConfig.micro(vocab_size=len(vocab), **overrides)
