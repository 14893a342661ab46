# Scenario drivers: Doppler-averaged traces, intensity and detuning scans,
# post-pulse Rydberg retention, Rabi cycle counting and the simultaneous
# pulse optimizer.
#
# Parallelism: every (scan point, velocity class) pair is one task. Tasks are
# mapped in order and reduced in grid order, so results do not depend on the
# worker count.

from dataclasses import dataclass, field
from multiprocessing import Pool
import itertools
import logging
import os
import time

import numpy as np
from scipy.optimize import minimize
from scipy.signal import find_peaks

from doppler import (VelocityGrid, drive_at_velocity, ensemble_average, single_class_grid,
                     velocity_grid)
from errors import DomainError, RangeError, ResolutionError, ShapeError
from liouville import (EnsembleGenerator, SolverOptions, Trajectory, propagate,
                       propagate_exponential, steady_state)
from rydberg_model import (DecayRates, DensityMatrix, Drive, DriveConfig, LaserField,
                           PulseEnvelope, pulse_bounds, rabi_from_intensity)
from run_config import RunConfig

logger = logging.getLogger(__name__)

MIN_SAMPLES_PER_CYCLE = 20
SEQUENCE_EXTENT = 1.5  # sequence_window margin in units of each pulse's intensity FWHM
OPTIMIZER_PARAMETERS = ("probe_fwhm", "coupling_fwhm", "probe_rabi", "coupling_rabi", "delay")


@dataclass(frozen=True)
class ScanResult:
    param_name: str
    param_unit: str
    params: np.ndarray
    times: np.ndarray
    im_rho21: np.ndarray  # [param, time]
    rho33: np.ndarray     # [param, time]

    def __post_init__(self):
        shape = (len(self.params), len(self.times))
        if self.im_rho21.shape != shape or self.rho33.shape != shape:
            raise ShapeError(f"scan maps must have shape {shape}, got {self.im_rho21.shape} and {self.rho33.shape}")
        if self.rho33.size and (self.rho33.min() < -1e-8 or self.rho33.max() > 1.0 + 1e-8):
            raise ShapeError("rho33 entries outside [0, 1]")

    def row(self, index) -> dict:
        return {"im_rho21": self.im_rho21[index], "rho33": self.rho33[index]}


@dataclass(frozen=True)
class ClassTask:
    drive: Drive
    decay: DecayRates
    solver: SolverOptions
    t_start: float
    t_end: float
    initial_state: str


@dataclass(frozen=True)
class ObjectiveTask:
    params: tuple
    config: RunConfig
    grid: VelocityGrid


@dataclass
class OptimizationResult:
    parameters: dict
    rho33: float
    coarse_rho33: float
    grid_best: dict
    grid_rho33: float
    evaluations: int
    simplex_iterations: int
    velocity_classes: int
    history: list = field(default_factory=list)


def resolve_workers(workers) -> int:
    if workers is None or workers <= 0:
        return os.cpu_count() or 1
    return int(workers)


def imap_tasks(func, tasks, workers=1):
    """Ordered map over tasks, in-process for one worker, a process pool otherwise."""
    n_workers = min(resolve_workers(workers), max(len(tasks), 1))
    if n_workers == 1:
        for task in tasks:
            yield func(task)
        return
    chunksize = max(1, len(tasks) // (8 * n_workers))
    with Pool(processes=n_workers) as pool:
        yield from pool.imap(func, tasks, chunksize=chunksize)


def initial_density_matrix(drive: Drive, decay: DecayRates, mode: str, t_start: float) -> DensityMatrix:
    if mode == "ground":
        return DensityMatrix.ground_state()
    return steady_state(drive.omega_780(t_start), drive.delta_780, decay)


def run_class(task: ClassTask) -> Trajectory:
    rho0 = initial_density_matrix(task.drive, task.decay, task.initial_state, task.t_start)
    return propagate(rho0, task.t_start, task.t_end, task.drive, task.decay, task.solver)


def config_grid(config: RunConfig) -> VelocityGrid:
    return velocity_grid(config.vapor, config.velocity.points, config.velocity.span)


def _class_tasks(config: RunConfig, grid: VelocityGrid):
    drive_config = config.drive_config()
    return [
        ClassTask(
            drive=drive_at_velocity(drive_config, float(v)),
            decay=config.decay,
            solver=config.solver,
            t_start=config.window.t_start,
            t_end=config.window.t_end,
            initial_state=config.initial_state,
        )
        for v in grid.nodes
    ]


def ensemble_traces(configs, grid: VelocityGrid, workers=1):
    """One Doppler-averaged trajectory per config, in config order."""
    tasks = [task for config in configs for task in _class_tasks(config, grid)]
    started = time.time()
    averaged, batch = [], []
    for traj in imap_tasks(run_class, tasks, workers):
        batch.append(traj)
        if len(batch) == len(grid):
            averaged.append(ensemble_average(batch, grid))
            batch = []
            logger.debug(f"scan point {len(averaged)}/{len(configs)} done")
    logger.info(f"{len(configs)} point(s) x {len(grid)} classes in {time.time() - started:.1f} s")
    return averaged


def run_trace(config: RunConfig, workers=1, grid: VelocityGrid = None) -> Trajectory:
    grid = config_grid(config) if grid is None else grid
    return ensemble_traces([config], grid, workers)[0]


def _scan_result(name, unit, params, trajectories) -> ScanResult:
    times = trajectories[0].times if trajectories else np.zeros(0)
    return ScanResult(
        param_name=name,
        param_unit=unit,
        params=np.asarray(params, dtype=float),
        times=times,
        im_rho21=np.array([traj.im_rho21 for traj in trajectories]).reshape(len(params), len(times)),
        rho33=np.array([traj.rho33 for traj in trajectories]).reshape(len(params), len(times)),
    )


def _require_sorted(values, label):
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise DomainError(f"{label} axis is empty")
    if np.any(np.diff(values) < 0):
        raise DomainError(f"{label} axis must be sorted ascending")
    return values


def default_intensity_axis(config: RunConfig) -> np.ndarray:
    return np.linspace(0.0, config.scan.intensity_max, config.scan.intensity_steps)


def default_detuning_axis(config: RunConfig) -> np.ndarray:
    limit = config.scan.detuning_max
    return np.linspace(-limit, limit, config.scan.detuning_steps)


def intensity_scan(config: RunConfig, intensities=None, workers=1) -> ScanResult:
    intensities = default_intensity_axis(config) if intensities is None else intensities
    intensities = _require_sorted(intensities, "intensity")
    if np.any(intensities < 0):
        raise DomainError("intensities must be nonnegative")
    calibration = config.calibration.calibration
    configs = [config.with_coupling(rabi=rabi_from_intensity(float(i), calibration)) for i in intensities]
    logger.info(f"Intensity scan: {len(configs)} rows up to {intensities[-1] / 1e10:.2f} MW/cm2")
    trajectories = ensemble_traces(configs, config_grid(config), workers)
    return _scan_result("intensity", "W/m^2", intensities, trajectories)


def detuning_scan(config: RunConfig, detunings=None, workers=1, grid: VelocityGrid = None) -> ScanResult:
    detunings = default_detuning_axis(config) if detunings is None else detunings
    detunings = _require_sorted(detunings, "detuning")
    if config.probe.detuning != 0.0:
        logger.warning(f"detuning scan with a detuned probe ({config.probe.detuning:.3e} rad/s)")
    grid = config_grid(config) if grid is None else grid
    configs = [config.with_coupling(detuning=float(d)) for d in detunings]
    logger.info(f"Detuning scan: {len(configs)} columns over {len(grid)} velocity class(es)")
    trajectories = ensemble_traces(configs, grid, workers)
    return _scan_result("detuning_480", "rad/s", detunings, trajectories)


def single_velocity_scan(config: RunConfig, detunings=None, workers=1) -> ScanResult:
    return detuning_scan(config, detunings, workers, grid=single_class_grid(0.0))


def rydberg_retention(traj: Trajectory, pulse_end: float, window=1e-9) -> float:
    """Mean rho33 over [pulse_end, pulse_end + window]."""
    slack = 1e-6 * window
    if len(traj) == 0 or pulse_end < traj.times[0] - slack or pulse_end + window > traj.times[-1] + slack:
        raise RangeError(
            f"retention window [{pulse_end:.3e}, {pulse_end + window:.3e}] s lies outside the trajectory"
        )
    mask = (traj.times >= pulse_end - slack) & (traj.times <= pulse_end + window + slack)
    return float(np.mean(traj.rho33[mask]))


def count_rabi_cycles(rho33, prominence=0.02):
    """Number of rho33 maxima (full Rabi cycles) and the accumulated phase 2 pi * cycles."""
    series = np.asarray(rho33, dtype=float)
    if series.size < MIN_SAMPLES_PER_CYCLE:
        raise ResolutionError(f"{series.size} samples cannot resolve a Rabi cycle")
    peaks, _ = find_peaks(series, prominence=prominence)
    if peaks.size > 1 and np.min(np.diff(peaks)) < MIN_SAMPLES_PER_CYCLE:
        raise ResolutionError(
            f"maxima only {np.min(np.diff(peaks))} samples apart, need {MIN_SAMPLES_PER_CYCLE} per cycle"
        )
    cycles = float(peaks.size)
    return cycles, 2.0 * np.pi * cycles


def trace_metrics(traj: Trajectory, config: RunConfig) -> dict:
    settings = config.analysis
    start, end = pulse_bounds(config.pulse, settings.pulse_extent)
    during = traj.window(max(start, traj.times[0]), min(end, traj.times[-1]))
    metrics = {"pulse_start_ns": start * 1e9, "pulse_end_ns": end * 1e9,
               "peak_rho33": float(during.rho33.max()) if len(during) else 0.0}
    try:
        cycles, phase = count_rabi_cycles(during.rho33, settings.cycle_prominence)
        metrics.update(rabi_cycles=cycles, phase_over_pi=phase / np.pi)
    except ResolutionError as exc:
        logger.warning(f"cycle count skipped: {exc}")
    try:
        metrics["retention"] = rydberg_retention(traj, end, settings.retention_window)
    except RangeError as exc:
        logger.warning(f"retention skipped: {exc}")
    return metrics


# --- simultaneous pulse optimizer -------------------------------------------

def sequence_drive_config(config: RunConfig, params) -> DriveConfig:
    probe_fwhm, coupling_fwhm, probe_rabi, coupling_rabi, delay = params
    probe = LaserField(rabi_peak=probe_rabi, detuning=config.probe.detuning,
                       wavelength=config.probe.wavelength)
    coupling = config.coupling.model_copy(update={"rabi_peak": coupling_rabi})
    return DriveConfig(
        probe=probe,
        coupling=coupling,
        probe_envelope=PulseEnvelope(shape="gaussian", center_time=0.0, intensity_fwhm=probe_fwhm),
        coupling_envelope=PulseEnvelope(shape="gaussian", center_time=delay, intensity_fwhm=coupling_fwhm),
    )


def sequence_window(config: RunConfig, params):
    probe_fwhm, coupling_fwhm, _, _, delay = params
    t_start = min(-SEQUENCE_EXTENT * probe_fwhm, delay - SEQUENCE_EXTENT * coupling_fwhm)
    t_end = max(SEQUENCE_EXTENT * probe_fwhm, delay + SEQUENCE_EXTENT * coupling_fwhm) + config.optimizer.settle_time
    return t_start, t_end


def final_rydberg_population(params, config: RunConfig, grid: VelocityGrid) -> float:
    """Doppler-averaged rho33 after both pulses, starting from the ground state."""
    drive_config = sequence_drive_config(config, params)
    drives = [drive_at_velocity(drive_config, float(v)) for v in grid.nodes]
    generator = EnsembleGenerator(drives, config.decay)
    y0 = np.tile(DensityMatrix.ground_state().vector(), (len(grid), 1))
    t_start, t_end = sequence_window(config, params)
    y = propagate_exponential(y0, t_start, t_end, generator, config.optimizer.slice_width, order=4)
    return float(np.dot(grid.weights, y[:, 8].real))


def _evaluate_objective(task: ObjectiveTask) -> float:
    return final_rydberg_population(task.params, task.config, task.grid)


def optimizer_grid(config: RunConfig) -> VelocityGrid:
    points = config.optimizer.velocity_points
    if points < 3:
        return single_class_grid(0.0)
    return velocity_grid(config.vapor, points if points % 2 else points + 1, config.velocity.span)


def optimize_simultaneous_pulses(config: RunConfig, workers=1, full_grid: VelocityGrid = None,
                                 coarse_grid: VelocityGrid = None) -> OptimizationResult:
    """Coarse grid search, Nelder-Mead refinement, final value on the full velocity grid."""
    settings = config.optimizer
    bounds = np.array(settings.bounds(), dtype=float)
    lower, upper = bounds[:, 0], bounds[:, 1]
    if not np.all(np.isfinite(bounds)) or np.any(lower > upper):
        raise DomainError(f"empty search volume: bounds {settings.bounds()}")
    free = upper > lower
    span = upper - lower
    full_grid = config_grid(config) if full_grid is None else full_grid
    coarse_grid = optimizer_grid(config) if coarse_grid is None else coarse_grid

    axes = [np.linspace(lo, hi, settings.grid_points) if is_free else np.array([lo])
            for lo, hi, is_free in zip(lower, upper, free)]
    points = [tuple(float(x) for x in p) for p in itertools.product(*axes)]
    logger.info(f"Optimizer grid stage: {len(points)} points x {len(coarse_grid)} classes")
    tasks = [ObjectiveTask(params=p, config=config, grid=coarse_grid) for p in points]
    values = list(imap_tasks(_evaluate_objective, tasks, workers))
    best_index = int(np.argmax(values))
    grid_best, grid_value = np.array(points[best_index]), values[best_index]
    logger.info(f"Grid best rho33 = {grid_value:.4f} at {dict(zip(OPTIMIZER_PARAMETERS, grid_best))}")

    best, best_value, iterations, history = grid_best, grid_value, 0, []
    if free.any() and settings.simplex_iterations > 0:
        def to_physical(u):
            x = lower.copy()
            x[free] = lower[free] + np.clip(u, 0.0, 1.0) * span[free]
            return x

        def objective(u):
            value = final_rydberg_population(tuple(to_physical(u)), config, coarse_grid)
            history.append(value)
            return -value

        u0 = (grid_best[free] - lower[free]) / span[free]
        step = 0.5 / (settings.grid_points - 1)
        simplex = [u0]
        for i in range(u0.size):
            vertex = u0.copy()
            vertex[i] = vertex[i] + step if vertex[i] + step <= 1.0 else vertex[i] - step
            simplex.append(vertex)
        result = minimize(objective, u0, method="Nelder-Mead", bounds=[(0.0, 1.0)] * u0.size,
                          options={"maxiter": settings.simplex_iterations,
                                   "initial_simplex": np.array(simplex),
                                   "xatol": 1e-4, "fatol": 1e-6})
        iterations = int(result.nit)
        if -result.fun > grid_value:
            best, best_value = to_physical(result.x), float(-result.fun)
        logger.info(f"Simplex refinement: {iterations} iterations, coarse rho33 = {best_value:.4f}")

    final_value = final_rydberg_population(tuple(best), config, full_grid)
    logger.info(f"Best sequence on {len(full_grid)} classes: rho33 = {final_value:.4f}")
    return OptimizationResult(
        parameters=dict(zip(OPTIMIZER_PARAMETERS, (float(x) for x in best))),
        rho33=final_value,
        coarse_rho33=best_value,
        grid_best=dict(zip(OPTIMIZER_PARAMETERS, (float(x) for x in grid_best))),
        grid_rho33=float(grid_value),
        evaluations=len(points) + len(history) + 1,
        simplex_iterations=iterations,
        velocity_classes=len(full_grid),
        history=history,
    )
