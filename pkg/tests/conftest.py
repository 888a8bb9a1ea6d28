import math

import numpy as np
import pytest

from channel.estimation import ZERO_NOISE
from channel.geometry import SPEED_OF_LIGHT, aoa_from_points, as_vec3
from channel.scenes import SLICE_GMT, SLICE_POINT, SLICE_UAV
from localization.hpc import BsmModel, ImuModel
from mapping.reflector import FirstOrderObservation
from slam.config import builtin_scenario_file


@pytest.fixture
def slice_obs() -> FirstOrderObservation:
    """Reflector-slice configuration with delay and AoA taken from the true point."""
    uav, gmt, p = as_vec3(SLICE_UAV), as_vec3(SLICE_GMT), as_vec3(SLICE_POINT)
    tau = (np.linalg.norm(gmt - p) + np.linalg.norm(p - uav)) / SPEED_OF_LIGHT
    return FirstOrderObservation(uav=uav, gmt=gmt, tau=float(tau), aoa=aoa_from_points(uav, p))


def _noiseless(name: str, T: int = 50, T_c: int = 10, seed: int = 0):
    sf = builtin_scenario_file(name, T=T, T_c=T_c, master_seed=seed)
    return sf.model_copy(
        update={
            "noise": ZERO_NOISE,
            "imu": ImuModel(sigma_step=0.0),
            "bsm": BsmModel(sigma_fix=0.0),
        }
    )


@pytest.fixture
def noiseless():
    """Factory for builtin scenario files with every noise source switched off."""
    return _noiseless


@pytest.fixture
def mirror_setup():
    """GMT and UAV 1 m above a ground plane, 2 m apart."""
    return as_vec3((0.0, 0.0, 1.0)), as_vec3((2.0, 0.0, 1.0)), 2.0 * math.sqrt(2.0)
