import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from suster import (
    ModelConfig,
    SplitSpec,
    SusterModel,
    SynthConfig,
    build_features,
    sparsify,
    synth_generate,
    window,
)
from suster.batching import WindowTensorSource
from suster.experiments import split_starts


@pytest.fixture(scope="session")
def small_data():
    """Tiny synthetic dataset bundle shared by fast tests."""
    dataset = synth_generate(SynthConfig(k=8, n=120, clusters=2, noise=1.0, seed=3))
    mask = sparsify(dataset, 0.9, seed=5)
    features = build_features(dataset)
    windows = window(dataset, mask, features)
    source = WindowTensorSource(dataset, mask, features)
    train_s, val_s, test_s = split_starts(source.num_windows, SplitSpec())
    return {
        "dataset": dataset,
        "mask": mask,
        "features": features,
        "windows": windows,
        "source": source,
        "splits": (train_s, val_s, test_s),
    }


@pytest.fixture()
def tiny_model():
    return SusterModel(
        ModelConfig(num_nodes=3, embed_dim=4, stgnn_factor=None), seed=11
    ).double()


def make_observation(rng, t=0):
    from suster.datasets import Observation

    return Observation(
        t=t,
        s=rng.uniform(0, 1, size=2),
        y=np.concatenate([rng.normal(0, 1, size=1), rng.uniform(0, 1, size=2)]),
    )
