# Core model for pulsed Rydberg excitation in thermal rubidium vapor.
# Three-level ladder |1> = 5S1/2, |2> = 5P3/2, |3> = 30S1/2 driven by a cw
# 780 nm probe and a pulsed 480 nm coupling laser.
#
# All frequencies are angular (rad/s). Config files quote ordinary
# frequencies; the 2*pi conversion happens in run_config.py.

from dataclasses import dataclass
from typing import Literal, Optional
import logging
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import constants

from errors import DomainError, InvariantViolation

logger = logging.getLogger(__name__)

# Physical constants
TWO_PI = 2.0 * math.pi
K_B = constants.k
ATOMIC_MASS_UNIT = constants.physical_constants["atomic mass constant"][0]
RB85_MASS = 84.9118 * ATOMIC_MASS_UNIT

# Default experiment parameters
PROBE_WAVELENGTH = 780e-9
COUPLING_WAVELENGTH = 480e-9
COUPLING_ANGLE = math.radians(171.5)
PROBE_RABI = TWO_PI * 220e6
COUPLING_RABI = TWO_PI * 2.2e9
GAMMA_12 = TWO_PI * 6e6
GAMMA_23 = TWO_PI * 8e3
VAPOR_TEMPERATURE = 273.15 + 130.0
NUMBER_DENSITY = 7.4e12 * 1e6  # m^-3
PULSE_CENTER = 2.0e-9
PULSE_FWHM = 2.5e-9
PULSE_EXTENT = 0.5  # pulse_bounds half-width in units of the amplitude FWHM

# Calibration anchor: 21 MW/cm^2 peak intensity <-> 2pi * 2.3 GHz
CALIBRATION_INTENSITY = 21e6 * 1e4  # W/m^2
CALIBRATION_RABI = TWO_PI * 2.3e9

# Gaussian amplitude area factor: integral of exp(-4 ln2 x^2 / tau^2) dx = tau * sqrt(pi / (4 ln2))
_GAUSS_AREA = math.sqrt(math.pi / (4.0 * math.log(2.0)))

# Tolerances for density matrix checks
HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-9
POSITIVITY_TOL = 1e-8


class LaserField(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    rabi_peak: float = Field(ge=0.0)
    detuning: float = 0.0
    wavelength: float = Field(gt=0.0)
    propagation_angle: float = 0.0


class PulseEnvelope(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    shape: Literal["gaussian", "flattop"] = "gaussian"
    center_time: float = PULSE_CENTER
    intensity_fwhm: float = Field(default=PULSE_FWHM, gt=0.0)
    peak_scale: float = Field(default=1.0, ge=0.0, le=1.0)

    @property
    def amplitude_fwhm(self) -> float:
        """FWHM of the Rabi amplitude; sqrt(2) wider than the intensity for a Gaussian."""
        if self.shape == "gaussian":
            return math.sqrt(2.0) * self.intensity_fwhm
        return self.intensity_fwhm


class VaporParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    temperature: float = Field(default=VAPOR_TEMPERATURE, gt=0.0)
    atomic_mass: float = Field(default=RB85_MASS, gt=0.0)
    number_density: float = Field(default=NUMBER_DENSITY, ge=0.0)  # metadata only
    isotope: str = "85Rb"


class DecayRates(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    gamma_12: float = Field(default=GAMMA_12, ge=0.0)
    gamma_23: float = Field(default=GAMMA_23, ge=0.0)


class DriveConfig(BaseModel):
    """Lab-frame drive: probe (cw unless probe_envelope is set) and coupling pulse."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    probe: LaserField
    coupling: LaserField
    coupling_envelope: Optional[PulseEnvelope] = None
    probe_envelope: Optional[PulseEnvelope] = None

    @model_validator(mode="after")
    def _probe_defines_axis(self):
        if self.probe.propagation_angle != 0.0:
            raise ValueError("probe propagation_angle must be 0 (the probe defines the velocity axis)")
        return self


@dataclass(frozen=True)
class Drive:
    """Drive seen by one velocity class: Doppler-shifted detunings, lab-frame envelopes."""
    probe_rabi: float
    delta_780: float
    coupling_rabi: float
    delta_480: float
    probe_envelope: Optional[PulseEnvelope] = None
    coupling_envelope: Optional[PulseEnvelope] = None

    def omega_780(self, t):
        if self.probe_envelope is None:
            return self.probe_rabi
        return self.probe_rabi * envelope_value(t, self.probe_envelope)

    def omega_480(self, t):
        if self.coupling_envelope is None:
            return self.coupling_rabi
        return self.coupling_rabi * envelope_value(t, self.coupling_envelope)

    def breakpoints(self):
        points = []
        for env in (self.probe_envelope, self.coupling_envelope):
            if env is not None:
                points.extend(envelope_breakpoints(env))
        return sorted(set(points))


@dataclass(frozen=True)
class DensityMatrix:
    """3x3 density matrix in the basis (5S1/2, 5P3/2, 30S1/2)."""
    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=complex)
        if arr.shape != (3, 3):
            raise DomainError(f"density matrix must be 3x3, got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def basis_state(cls, k: int) -> "DensityMatrix":
        rho = np.zeros((3, 3), dtype=complex)
        rho[k, k] = 1.0
        return cls(rho)

    @classmethod
    def ground_state(cls) -> "DensityMatrix":
        return cls.basis_state(0)

    @classmethod
    def from_vector(cls, vec) -> "DensityMatrix":
        return cls(np.asarray(vec).reshape(3, 3))

    def vector(self) -> np.ndarray:
        return self.data.reshape(9).copy()

    @property
    def populations(self) -> np.ndarray:
        return self.data.diagonal().real.copy()

    @property
    def purity(self) -> float:
        return float(np.trace(self.data @ self.data).real)

    def check(self, hermitian_tol=HERMITIAN_TOL, trace_tol=TRACE_TOL, positivity_tol=POSITIVITY_TOL):
        check_states(self.data[np.newaxis], hermitian_tol, trace_tol, positivity_tol)
        return self


def check_states(states, hermitian_tol=HERMITIAN_TOL, trace_tol=TRACE_TOL,
                 positivity_tol=POSITIVITY_TOL, times=None):
    """Assert the density matrix invariants on a stack of shape (n, 3, 3)."""
    states = np.asarray(states)
    if states.size == 0:
        return
    herm = np.abs(states - np.conj(np.swapaxes(states, -1, -2))).max(axis=(-1, -2))
    trace_err = np.abs(np.trace(states, axis1=-2, axis2=-1) - 1.0)
    hermitian_part = 0.5 * (states + np.conj(np.swapaxes(states, -1, -2)))
    min_eig = np.linalg.eigvalsh(hermitian_part)[..., 0]

    for label, bad in (
        ("Hermiticity", herm > hermitian_tol),
        ("unit trace", trace_err > trace_tol),
        ("positivity", min_eig < -positivity_tol),
    ):
        if np.any(bad):
            idx = int(np.argmax(bad))
            where = f" at t = {times[idx]:.6e} s" if times is not None else f" at sample {idx}"
            raise InvariantViolation(
                f"density matrix {label} violated{where}: "
                f"hermitian={herm[idx]:.3e}, trace_err={trace_err[idx]:.3e}, min_eig={min_eig[idx]:.3e}"
            )


def calibration_from_anchor(intensity=CALIBRATION_INTENSITY, rabi=CALIBRATION_RABI) -> float:
    """(rad/s)/sqrt(W/m^2) fixed by one (intensity, Rabi frequency) pair."""
    if intensity <= 0 or rabi <= 0:
        raise DomainError(f"calibration anchor must be positive, got intensity={intensity}, rabi={rabi}")
    return rabi / math.sqrt(intensity)


def rabi_from_intensity(intensity, calibration=None):
    if calibration is None:
        calibration = calibration_from_anchor()
    if calibration <= 0:
        raise DomainError(f"calibration must be positive, got {calibration}")
    arr = np.asarray(intensity, dtype=float)
    if np.any(arr < 0):
        raise DomainError(f"intensity must be nonnegative, got {intensity}")
    result = calibration * np.sqrt(arr)
    return float(result) if result.ndim == 0 else result


def intensity_from_rabi(rabi, calibration=None):
    if calibration is None:
        calibration = calibration_from_anchor()
    if rabi < 0:
        raise DomainError(f"Rabi frequency must be nonnegative, got {rabi}")
    return (rabi / calibration) ** 2


def envelope_value(t, env: PulseEnvelope):
    """Rabi amplitude envelope; peak_scale at the pulse center."""
    dt = np.asarray(t, dtype=float) - env.center_time
    if env.shape == "gaussian":
        tau_a = math.sqrt(2.0) * env.intensity_fwhm
        value = env.peak_scale * np.exp(-4.0 * math.log(2.0) * dt * dt / (tau_a * tau_a))
    else:
        value = np.where(np.abs(dt) <= 0.5 * env.intensity_fwhm, env.peak_scale, 0.0)
    return float(value) if value.ndim == 0 else value


def envelope_breakpoints(env: PulseEnvelope):
    if env.shape == "flattop":
        half = 0.5 * env.intensity_fwhm
        return [env.center_time - half, env.center_time + half]
    return []


def pulse_bounds(env: PulseEnvelope, extent=PULSE_EXTENT):
    """Interval where the Rabi amplitude is at least half its peak (the flat-top edges)."""
    half = extent * env.amplitude_fwhm
    return env.center_time - half, env.center_time + half


def pulse_area(env: PulseEnvelope, rabi_peak: float) -> float:
    if env.shape == "gaussian":
        return rabi_peak * env.peak_scale * env.amplitude_fwhm * _GAUSS_AREA
    return rabi_peak * env.peak_scale * env.intensity_fwhm


def rabi_for_area(env: PulseEnvelope, area: float) -> float:
    """Peak Rabi frequency giving the requested pulse area (pi for a pi pulse)."""
    unit = pulse_area(env, 1.0)
    if unit <= 0:
        raise DomainError("envelope has zero area (peak_scale = 0)")
    return area / unit
