import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "suite",
    max_examples=40,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_scene():
    """A 16x16x10 synthetic scene: big enough to learn, cheap to train on."""
    from msrn.synthetic import SyntheticSceneSpec, generate_scene

    spec = SyntheticSceneSpec(height=16, width=16, bands=10, classes=3, seed=5)
    cube, labels, sidecar = generate_scene(spec)
    return spec, cube, labels, sidecar


def make_train_data(cube, labels, f_train=0.2, f_val=0.2, seed=0):
    from msrn.data import fit_band_stats, standardize, stratified_split
    from msrn.train import TrainData

    split = stratified_split(labels, f_train, f_val, seed)
    mean, std = fit_band_stats(cube, split.train)
    return TrainData(cube=standardize(cube, mean, std), labels=labels,
                     split=split)
