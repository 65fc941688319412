import time

import pytest
import torch

from baple.config import config_from_dict
from baple.pipeline import build_datasets, pretrain_encoder

torch.set_num_threads(4)


@pytest.fixture(scope="session")
def default_config():
    return config_from_dict({})


@pytest.fixture(scope="session")
def datasets(default_config):
    return build_datasets(default_config)


@pytest.fixture(scope="session")
def encoder(default_config):
    """Frozen encoder pretrained on the default corpus; shared by the suite."""
    t0 = time.perf_counter()
    enc = pretrain_encoder(default_config)
    enc.pretrain_wall = time.perf_counter() - t0
    return enc


@pytest.fixture(scope="session")
def small_config():
    """A cheap configuration for mechanics tests (seconds, not minutes)."""
    return config_from_dict({
        "data": {"num_classes": 3, "train_samples_per_class": 24,
                 "test_samples_per_class": 12},
        "model": {"pretrain_epochs": 1, "feature_dim": 16, "embed_dim": 8,
                  "conv_channels": [8, 16], "text_hidden": 32},
        "poison": {"k_shots": 8},
        "attack": {"epochs": 2},
        "finetune": {"epochs": 2},
    })


@pytest.fixture(scope="session")
def small_encoder(small_config):
    return pretrain_encoder(small_config)
