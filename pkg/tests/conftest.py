import numpy as np
import pytest
import torch
from hypothesis import settings

from photoseq.dataset import BuilderConfig, SampleBuilder
from photoseq.network import NetworkConfig
from photoseq.noise import NoiseParams
from photoseq.synthetic import make_corpus

settings.register_profile("desk", deadline=None, max_examples=25)
settings.load_profile("desk")

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_net_config():
    """Smallest config with the full topology; fast enough for unit tests."""
    return NetworkConfig(head_channels=(2, 4), trunk_channels=(8, 16, 32, 64, 128))


@pytest.fixture(scope="session")
def noise_params():
    return NoiseParams(alpha=4e-4, beta=1e-4)


@pytest.fixture(scope="session")
def small_corpus():
    """Three short motion clips, 48x64 frames."""
    return make_corpus(3, n_frames=44, height=48, width=64, seed=11)


@pytest.fixture(scope="session")
def small_builder_cfg():
    return BuilderConfig(crop_size=32)


@pytest.fixture(scope="session")
def small_builder(small_corpus, small_builder_cfg, noise_params):
    return SampleBuilder(small_corpus, small_builder_cfg, noise_params, augment_samples=False)


@pytest.fixture(scope="session")
def one_sample(small_builder):
    return small_builder.generate(123)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
