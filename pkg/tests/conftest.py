"""Shared fixtures: a small pretrained bundle reused across test modules."""

import pytest

from magneto import fixtures, learner
from magneto.learner import TrainConfig

SMALL_CONFIG = TrainConfig(epochs=4, seed=0)
SMALL_WINDOWS = 60


@pytest.fixture(scope="session")
def small_dataset():
    return fixtures.make_dataset(SMALL_WINDOWS, seed=7)


@pytest.fixture(scope="session")
def small_bundle(small_dataset):
    """A cheap 5-class bundle; tests must not mutate it."""
    return learner.pretrain(small_dataset, SMALL_CONFIG)
