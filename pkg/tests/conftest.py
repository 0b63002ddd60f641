import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from litho_sampler.config import FeatureConfig, SamplerConfig, SynthConfig, TrainConfig  # noqa: E402
from litho_sampler.models import Label  # noqa: E402
from litho_sampler.sampler import ClipBank  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_features():
    # 690 nm clip -> 3 x 3 cells of 10 x 10 pixels (23 nm pixels)
    return FeatureConfig(grid=3, cell_pixels=10, channels=4, init_channel=1)


@pytest.fixture
def small_train():
    return TrainConfig(alpha=0.1, sigma=0.1, batch_size=8, epochs_initial=5, epochs_update=2,
                       eps0=0.2, seed=3, hidden_dims=[8])


@pytest.fixture
def small_sampler():
    return SamplerConfig(n_query=6, k=2, pool_cap=None, seed=3, l0_size=4)


@pytest.fixture
def small_synth():
    return SynthConfig(width_nm=1380, height_nm=1380, motif_count=3, seed=5)


def make_bank(inputs, vectors=None):
    inputs = np.asarray(inputs, dtype=np.float64)
    if vectors is None:
        vectors = np.zeros((len(inputs), 2))
    return ClipBank(np.arange(len(inputs)), inputs, np.asarray(vectors, dtype=np.float64))


def all_non_hotspot(n):
    return {i: Label.NON_HOTSPOT for i in range(n)}
