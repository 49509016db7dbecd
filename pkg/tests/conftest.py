import numpy as np
import pytest

from densewarp.synth import build_rig, default_rig


@pytest.fixture(scope="session")
def rig4():
    """Four cameras on a circle around the default scene volume."""
    return build_rig(default_rig(views=4, image_size=(32, 32), radius=4.0))


@pytest.fixture(scope="session")
def rig4_small():
    return build_rig(default_rig(views=4, image_size=(16, 16), radius=3.2))


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
