import numpy as np
import pytest

from sparsesplat.geometry import CameraView, look_at
from sparsesplat.harness.synth import write_synthetic


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def square_cam():
    """64x64 camera at the origin looking down +z."""
    return CameraView.from_params(64.0, 64.0, 32.0, 32.0, 64, 64, near=1.0, far=10.0)


@pytest.fixture
def stereo_pair():
    """Two 64x64 cameras 0.5 apart along x, both aimed at (0, 0, 4)."""
    a = CameraView.from_params(64.0, 64.0, 32.0, 32.0, 64, 64, look_at((-0.25, 0, 0), (0, 0, 4)), 1.0, 10.0)
    b = CameraView.from_params(64.0, 64.0, 32.0, 32.0, 64, 64, look_at((0.25, 0, 0), (0, 0, 4)), 1.0, 10.0)
    return a, b


@pytest.fixture(scope="session")
def plane_scene(tmp_path_factory):
    return write_synthetic("plane", tmp_path_factory.mktemp("plane"))


@pytest.fixture(scope="session")
def box_scene(tmp_path_factory):
    return write_synthetic("box", tmp_path_factory.mktemp("box"))
