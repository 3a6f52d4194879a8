"""Shared fixtures: tiny synthetic datasets and the 64-bit engine mode."""
import numpy as np
import pytest

from nfship import autodiff as ad
from nfship.data import build_vessel_centred, split, SplitSpec
from nfship.synthetic import gen_synthetic


@pytest.fixture
def float64_mode():
    """Switch the autodiff engine to float64 for the duration of a test."""
    ad.set_default_dtype(np.float64)
    yield
    ad.set_default_dtype(np.float32)


def make_dataset(vessels=60, classes=3, noise=0.05, seed=0, **kw):
    ais, images = gen_synthetic(vessels=vessels, classes=classes, noise=noise,
                                seed=seed, **kw)
    return build_vessel_centred(images, ais)


@pytest.fixture(scope="session")
def small_vc():
    """Vessel-centred dataset, 3 well-separated classes, ~60 vessels."""
    return make_dataset()


@pytest.fixture(scope="session")
def small_split(small_vc):
    return split(small_vc, SplitSpec(train_fraction=0.75, seed=1))


def tiny_features(n, rng=None):
    rng = rng or np.random.default_rng(0)
    return rng.normal(0, 1, (n, 256, 7, 7)).astype(np.float32)
