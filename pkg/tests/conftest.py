"""Shared fixtures: one small dataset family reused across test modules."""

from __future__ import annotations

import numpy as np
import pytest

import fxi_sort as fx

TINY_SEED = 7
TINY_LIMIT = 24
TINY_BUDGET = 60_000


@pytest.fixture(scope="session")
def tiny_family():
    """Small homogeneous family (24 frames per recipe) for unit tests."""
    return fx.build_homogeneous_family(
        TINY_SEED,
        recipes=("T", "D", "P", "F"),
        photon_budget=TINY_BUDGET,
        workers=2,
        limit=TINY_LIMIT,
    )


@pytest.fixture(scope="session")
def tiny_dirs(tiny_family, tmp_path_factory):
    """The tiny family saved as NPD directories plus a trained EI model."""
    root = tmp_path_factory.mktemp("tiny")
    paths = {}
    for name, ds in tiny_family.items():
        paths[name] = str(fx.save_dataset(ds, root / name))
    model = fx.ei_train(tiny_family["T"])
    paths["ei_model"] = str(fx.save_ei_model(model, root / "ei_model"))
    return paths


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def checker_pattern(rows=8, cols=8, masked=()):
    """Deterministic small pattern with optional masked pixels."""
    data = np.arange(rows * cols, dtype=np.float64).reshape(rows, cols)
    mask = np.ones((rows, cols), dtype=bool)
    for r, c in masked:
        mask[r, c] = False
    return fx.Pattern(data=data, mask=mask)
