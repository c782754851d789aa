import pytest
import torch

from crce.toy import ToyDiffusionBackend, ToyTextEncoder


@pytest.fixture(scope="session")
def tiny_world():
    """Small untrained toy backend: enough for loss/gradient mechanics
    without pretraining cost."""
    encoder = ToyTextEncoder(n_components=4, n_aliases=4, cond_dim=8, seed=3)
    backend = ToyDiffusionBackend(encoder, timesteps=20, hidden=32, seed=1)
    return backend, encoder


@pytest.fixture(scope="session")
def pretrained_world():
    """The shared pretrained toy world (cached per process)."""
    from crce.toy import pretrained_toy_world

    return pretrained_toy_world(seed=0)


@pytest.fixture()
def torch_seed():
    torch.manual_seed(0)
    return 0
