"""Shared fixtures: a small fast model config and a tiny generated dataset."""

import numpy as np
import pytest
import torch

from blastcast.network import ModelConfig

torch.set_num_threads(1)


@pytest.fixture
def small_config():
    """Smallest config the attention bottleneck allows; full architecture."""
    return ModelConfig(widths=(8, 8), gru_width=8)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def make_frames(n, h, w, seed=0):
    """Smooth positive synthetic pressure frames in [0, 1]."""
    gen = np.random.default_rng(seed)
    base = gen.random((h, w)).astype(np.float32)
    frames = np.empty((n, h, w), dtype=np.float32)
    for k in range(n):
        frames[k] = 0.5 + 0.4 * np.cos(0.1 * k) * base
    return frames


@pytest.fixture(scope="session")
def cli_dataset(tmp_path_factory):
    """One small generated dataset shared by the CLI tests."""
    from blastcast.cli import main

    root = tmp_path_factory.mktemp("data")
    rc = main(["gen", "--out", str(root), "--count", "2", "--grid", "32",
               "--frames", "16", "--seed", "0"])
    assert rc == 0
    return root
