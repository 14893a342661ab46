import numpy as np
import pytest

from liouville import Trajectory
from run_config import config_from_values


@pytest.fixture
def fast_config():
    """Short window, three velocity classes and a sub-ns pulse."""
    return config_from_values({
        "velocity_points": "3",
        "t_start": "-0.5 ns",
        "t_end": "1.5 ns",
        "sample_step": "5 ps",
        "pulse_center": "0.5 ns",
        "pulse_fwhm": "0.4 ns",
        "intensity_steps": "3",
        "detuning_steps": "3",
    })


@pytest.fixture
def synthetic_trajectory():
    times = np.linspace(0.0, 4e-9, 401)
    rho33 = 0.4 * np.sin(2.0 * np.pi * 1e9 * times) ** 2
    rho22 = 0.1 * np.ones_like(times)
    return Trajectory(
        times=times,
        im_rho21=0.05 * np.sin(np.pi * 1e9 * times),
        rho11=1.0 - rho22 - rho33,
        rho22=rho22,
        rho33=rho33,
    )
