import math

import numpy as np
import pytest
from pydantic import ValidationError
from scipy.integrate import quad

from errors import DomainError, InvariantViolation
from rydberg_model import (CALIBRATION_INTENSITY, CALIBRATION_RABI, TWO_PI, DensityMatrix, Drive,
                           DriveConfig, LaserField, PulseEnvelope, calibration_from_anchor,
                           envelope_breakpoints, envelope_value, intensity_from_rabi, pulse_area,
                           pulse_bounds, rabi_for_area, rabi_from_intensity)


def test_gaussian_envelope_has_intensity_fwhm():
    env = PulseEnvelope(center_time=2e-9, intensity_fwhm=2.5e-9)
    assert envelope_value(2e-9, env) == pytest.approx(1.0)
    half = envelope_value(2e-9 + 1.25e-9, env)
    assert half ** 2 == pytest.approx(0.5)
    assert envelope_value(2e-9 - 1.25e-9, env) == pytest.approx(half)


def test_gaussian_envelope_one_fwhm_from_center():
    env = PulseEnvelope(center_time=0.0, intensity_fwhm=1e-9)
    assert envelope_value(1e-9, env) == pytest.approx(0.25)
    assert envelope_value(-1e-9, env) ** 2 == pytest.approx(1.0 / 16.0)


def test_envelope_peak_scale_and_arrays():
    env = PulseEnvelope(center_time=0.0, intensity_fwhm=1e-9, peak_scale=0.5)
    values = envelope_value(np.array([-1e-9, 0.0, 1e-9]), env)
    np.testing.assert_allclose(values, [0.125, 0.5, 0.125])


def test_flattop_envelope_and_breakpoints():
    env = PulseEnvelope(shape="flattop", center_time=1e-9, intensity_fwhm=1e-9, peak_scale=0.8)
    assert envelope_value(1e-9, env) == 0.8
    assert envelope_value(1.4e-9, env) == 0.8
    assert envelope_value(1.6e-9, env) == 0.0
    assert envelope_breakpoints(env) == pytest.approx([0.5e-9, 1.5e-9])
    assert envelope_breakpoints(PulseEnvelope()) == []


def test_pulse_bounds_span_amplitude_half_maximum():
    env = PulseEnvelope(center_time=2e-9, intensity_fwhm=2.5e-9)
    start, end = pulse_bounds(env)
    assert end - start == pytest.approx(math.sqrt(2.0) * 2.5e-9)
    assert start == pytest.approx(2e-9 - 1.25e-9 * math.sqrt(2.0))
    assert envelope_value(start, env) == pytest.approx(0.5)
    assert envelope_value(end, env) == pytest.approx(0.5)


def test_pulse_bounds_flattop_edges():
    env = PulseEnvelope(shape="flattop", center_time=4e-9, intensity_fwhm=8e-9)
    assert pulse_bounds(env) == pytest.approx((0.0, 8e-9))
    assert pulse_bounds(env) == pytest.approx(tuple(envelope_breakpoints(env)))


def test_pulse_area_matches_integral():
    env = PulseEnvelope(center_time=0.0, intensity_fwhm=0.5e-9)
    rabi = rabi_for_area(env, math.pi)
    integral, _ = quad(lambda t: rabi * envelope_value(t, env), -5e-9, 5e-9, points=[0.0])
    assert integral == pytest.approx(math.pi, rel=1e-6)
    assert pulse_area(env, rabi) == pytest.approx(math.pi)


def test_flattop_pulse_area():
    env = PulseEnvelope(shape="flattop", center_time=0.0, intensity_fwhm=2e-9)
    assert pulse_area(env, 1e9) == pytest.approx(2.0)


def test_rabi_from_intensity_anchor():
    assert rabi_from_intensity(CALIBRATION_INTENSITY) == pytest.approx(TWO_PI * 2.3e9)
    assert rabi_from_intensity(CALIBRATION_INTENSITY / 4) == pytest.approx(TWO_PI * 1.15e9)
    assert rabi_from_intensity(0.0) == 0.0


def test_rabi_from_intensity_array_and_inverse():
    intensities = np.array([0.0, 1e10, 2.1e11])
    rabis = rabi_from_intensity(intensities)
    assert rabis.shape == (3,)
    for intensity, rabi in zip(intensities, rabis):
        assert intensity_from_rabi(rabi) == pytest.approx(intensity, abs=1e-3)


def test_rabi_from_intensity_rejects_negative():
    with pytest.raises(DomainError):
        rabi_from_intensity(-1.0)
    with pytest.raises(DomainError):
        calibration_from_anchor(0.0, CALIBRATION_RABI)


def test_laser_field_validation():
    with pytest.raises(ValidationError):
        LaserField(rabi_peak=-1.0, wavelength=780e-9)
    with pytest.raises(ValidationError):
        LaserField(rabi_peak=1.0, wavelength=780e-9, unknown=1)


def test_drive_config_requires_probe_on_axis():
    coupling = LaserField(rabi_peak=1.0, wavelength=480e-9)
    with pytest.raises(ValidationError):
        DriveConfig(probe=LaserField(rabi_peak=1.0, wavelength=780e-9, propagation_angle=0.1),
                    coupling=coupling)


def test_drive_rabi_frequencies_follow_envelopes():
    env = PulseEnvelope(center_time=0.0, intensity_fwhm=1e-9)
    drive = Drive(probe_rabi=2.0, delta_780=0.0, coupling_rabi=4.0, delta_480=0.0, coupling_envelope=env)
    assert drive.omega_780(5e-9) == 2.0
    assert drive.omega_480(0.0) == pytest.approx(4.0)
    assert drive.omega_480(1e-9) == pytest.approx(1.0)
    assert drive.breakpoints() == []


def test_density_matrix_ground_state():
    rho = DensityMatrix.ground_state()
    np.testing.assert_array_equal(rho.populations, [1.0, 0.0, 0.0])
    assert rho.purity == pytest.approx(1.0)
    rho.check()
    with pytest.raises(ValueError):
        rho.data[0, 0] = 0.5


def test_density_matrix_vector_round_trip():
    rho = DensityMatrix(np.diag([0.5, 0.3, 0.2]).astype(complex))
    assert DensityMatrix.from_vector(rho.vector()).data.tolist() == rho.data.tolist()


def test_density_matrix_invariants():
    with pytest.raises(DomainError):
        DensityMatrix(np.eye(2))
    with pytest.raises(InvariantViolation):
        DensityMatrix(np.diag([1.0, 1.0, 0.0])).check()
    not_hermitian = np.diag([1.0, 0.0, 0.0]).astype(complex)
    not_hermitian[0, 1] = 0.1
    with pytest.raises(InvariantViolation):
        DensityMatrix(not_hermitian).check()
    with pytest.raises(InvariantViolation):
        DensityMatrix(np.diag([1.2, -0.2, 0.0])).check()
