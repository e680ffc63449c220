import numpy as np
import pytest

from brainage import Volume3D


@pytest.fixture
def rng():
    return np.random.default_rng(20240901)


def make_volume(rng, dims=(4, 5, 6), voxel_size=(1.0, 1.0, 1.0),
                origin=(0.0, 0.0, 0.0)):
    data = rng.standard_normal(dims).astype(np.float32)
    return Volume3D(dims, voxel_size, origin, data)
