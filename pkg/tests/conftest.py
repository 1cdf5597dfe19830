"""Shared test configuration: single-threaded, double-precision torch."""
import numpy as np
import pytest
import torch

torch.set_num_threads(1)
torch.set_default_dtype(torch.float64)


@pytest.fixture
def rng() -> torch.Generator:
    return torch.Generator().manual_seed(0)


@pytest.fixture
def np_rng() -> np.random.Generator:
    return np.random.default_rng(0)
