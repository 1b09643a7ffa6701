"""Shared fixtures: isolated settings and a few small profiles."""

import pytest

from src.config import Settings, reset_settings
from src.profile import StepProfile


@pytest.fixture(autouse=True)
def isolated_settings(tmp_path):
    """Fresh settings per test with the data directory under tmp_path and no disk cache."""
    settings = Settings(cache_dir=None, max_dense_side=64, threads=1, data_dir=tmp_path / "data")
    reset_settings(settings)
    yield settings
    reset_settings(None)


@pytest.fixture
def flat() -> StepProfile:
    return StepProfile.preset("flat")


@pytest.fixture
def convex2() -> StepProfile:
    return StepProfile.preset("convex2")


@pytest.fixture
def decreasing2() -> StepProfile:
    return StepProfile.preset("decreasing2")


@pytest.fixture
def three_scale() -> StepProfile:
    return StepProfile.preset("three-scale")
