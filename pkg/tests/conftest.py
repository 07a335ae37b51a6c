"""Shared pytest fixtures for the setml test suite."""

from __future__ import annotations

from collections.abc import Iterator
from pathlib import Path

import numpy as np
import pytest

import setml.settings as settings_module
from setml.dataset import NormParams, SetDataset, split_dataset, waveforms_to_rows
from setml.mlp import MlpModel, Transfer
from setml.oracle import OracleParams, base_time_grid, generate_grid_dataset
from setml.settings import Settings


def make_isolated_settings(**overrides: object) -> Settings:
    """Return a Settings instance isolated from .env and env vars."""
    defaults: dict[str, object] = {
        "output_dir": Path("out"),
        "seed": 0,
        "max_epochs": 20,
        "workers": 1,
    }
    defaults.update(overrides)
    return Settings.model_validate(defaults)


@pytest.fixture(autouse=True)
def reset_globals() -> Iterator[None]:
    """Reset the cached settings before and after every test."""
    settings_module._settings = None
    yield
    settings_module._settings = None


@pytest.fixture
def oracle_params() -> OracleParams:
    return OracleParams()


@pytest.fixture
def small_dataset(oracle_params: OracleParams) -> SetDataset:
    """Six surrogate waveforms on a 5 ps grid, split with seed 0."""
    grid = base_time_grid(1e-9, 5e-12)
    lets, vds = [8.0, 40.0, 80.0], [0.4, 1.2]
    waveforms = generate_grid_dataset(lets, vds, grid, oracle_params)
    return split_dataset(waveforms_to_rows(waveforms), seed=0)


@pytest.fixture
def tiny_norm() -> NormParams:
    return NormParams(
        in_min=(0.0, 4.0, 0.0), in_max=(1.0, 100.0, 2.0), out_min=-0.5, out_max=0.5
    )


@pytest.fixture
def tiny_model(tiny_norm: NormParams) -> MlpModel:
    """Hand-written 3-2-1 tansig network used by the golden Verilog-A file."""
    return MlpModel(
        weights=(
            np.array([[0.5, -0.25, 1.0], [0.125, 0.0, -2.0]]),
            np.array([[1.5, -0.5]]),
        ),
        biases=(np.array([0.75, -1.5]), np.array([0.0625])),
        transfers=(Transfer.TANSIG, Transfer.PURELIN),
        norm=tiny_norm,
    )
