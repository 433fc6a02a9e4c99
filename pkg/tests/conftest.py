import pytest
import torch

from mtx.encoder import tiny_encoder

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def enc():
    return tiny_encoder(0)


@pytest.fixture(scope="session")
def enc64():
    return tiny_encoder(0, torch.float64)


@pytest.fixture
def rng():
    return torch.Generator().manual_seed(1234)
