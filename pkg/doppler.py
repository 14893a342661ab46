# Thermal velocity classes and Doppler-shifted detunings.
#
# One velocity component (along the probe) is kept. The coupling beam sees the
# same component projected by cos(theta). Sign convention:
#   delta_eff = delta_lab - k * v_projection,  k = 2 pi / lambda

from dataclasses import dataclass
import logging
import math

import numpy as np

from errors import DomainError, ShapeError
from liouville import Trajectory
from rydberg_model import K_B, Drive, DriveConfig, LaserField, VaporParams

logger = logging.getLogger(__name__)

VELOCITY_POINTS = 201
VELOCITY_SPAN = 4.0  # in units of the most probable speed


@dataclass(frozen=True)
class VelocityGrid:
    nodes: np.ndarray    # m/s
    weights: np.ndarray  # sum to 1

    def __len__(self):
        return len(self.nodes)


def most_probable_speed(vapor: VaporParams) -> float:
    if vapor.temperature <= 0 or vapor.atomic_mass <= 0:
        raise DomainError(f"temperature and mass must be positive, got T={vapor.temperature}, m={vapor.atomic_mass}")
    return math.sqrt(2.0 * K_B * vapor.temperature / vapor.atomic_mass)


def velocity_grid(vapor: VaporParams, n_points=VELOCITY_POINTS, span=VELOCITY_SPAN) -> VelocityGrid:
    """Uniform nodes over +-span * v_p with normalized Maxwell-Boltzmann weights."""
    if n_points < 3 or n_points % 2 == 0:
        raise DomainError(f"n_points must be odd and >= 3 so that v = 0 is a node, got {n_points}")
    if span <= 0:
        raise DomainError(f"span must be positive, got {span}")
    v_p = most_probable_speed(vapor)
    nodes = np.linspace(-span * v_p, span * v_p, n_points)
    nodes = 0.5 * (nodes - nodes[::-1])
    raw = np.exp(-(nodes / v_p) ** 2)
    # mirror explicitly so the weights are symmetric to the last bit
    raw = 0.5 * (raw + raw[::-1])
    weights = raw / raw.sum()
    logger.debug(f"velocity grid: {n_points} classes, v_p = {v_p:.2f} m/s, span = +-{span} v_p")
    return VelocityGrid(nodes=nodes, weights=weights)


def single_class_grid(velocity=0.0) -> VelocityGrid:
    return VelocityGrid(nodes=np.array([float(velocity)]), weights=np.array([1.0]))


def refined_points(n_points: int) -> int:
    """Point count that doubles the resolution while keeping every old node."""
    return 2 * n_points - 1


def shifted_detunings(v, probe: LaserField, coupling: LaserField):
    k_probe = 2.0 * math.pi / probe.wavelength
    k_coupling = 2.0 * math.pi / coupling.wavelength
    delta_780 = probe.detuning - k_probe * v * math.cos(probe.propagation_angle)
    delta_480 = coupling.detuning - k_coupling * v * math.cos(coupling.propagation_angle)
    return delta_780, delta_480


def drive_at_velocity(config: DriveConfig, v: float) -> Drive:
    delta_780, delta_480 = shifted_detunings(v, config.probe, config.coupling)
    return Drive(
        probe_rabi=config.probe.rabi_peak,
        delta_780=delta_780,
        coupling_rabi=config.coupling.rabi_peak,
        delta_480=delta_480,
        probe_envelope=config.probe_envelope,
        coupling_envelope=config.coupling_envelope,
    )


def ensemble_average(trajectories, grid: VelocityGrid) -> Trajectory:
    """Weighted sum over classes, accumulated in grid order."""
    if len(trajectories) != len(grid):
        raise ShapeError(f"{len(trajectories)} trajectories for a grid of {len(grid)} classes")
    if not trajectories:
        raise ShapeError("no trajectories to average")
    times = trajectories[0].times
    for traj in trajectories[1:]:
        if traj.times.shape != times.shape or np.any(traj.times != times):
            raise ShapeError("trajectories do not share the same time samples")

    sums = {name: np.zeros_like(times) for name in ("im_rho21", "rho11", "rho22", "rho33")}
    for weight, traj in zip(grid.weights, trajectories):
        for name, values in traj.observables().items():
            sums[name] += weight * values
    return Trajectory(times=times.copy(), **sums)
