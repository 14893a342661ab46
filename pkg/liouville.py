# Liouville - von Neumann dynamics of the three-level ladder:
#   d rho / dt = -i [H, rho] + L(rho)
# with H in the rotating frame (rad/s) and L the two cascade decay channels.
#
# Density matrices are vectorized row-major: vec(rho) = rho.reshape(9).

from dataclasses import dataclass
from typing import Literal, Optional
import logging
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.integrate import solve_ivp
from scipy.linalg import expm, lu_factor, lu_solve

from errors import IntegrationError, ShapeError, SingularSystemError
from rydberg_model import POSITIVITY_TOL, DecayRates, DensityMatrix, Drive, check_states

logger = logging.getLogger(__name__)

# Solver defaults
RTOL = 1e-8
ATOL = 1e-10
SAMPLE_STEP = 1e-12
STEADY_STATE_MAX_COND = 1e12
ORACLE_SLICE = 1e-12


class HamiltonianParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    omega_780: float = Field(ge=0.0)
    omega_480: float = Field(ge=0.0)
    delta_780: float = 0.0
    delta_480: float = 0.0


class SolverOptions(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    method: Literal["RK45", "DOP853"] = "RK45"
    rtol: float = Field(default=RTOL, gt=0.0)
    atol: float = Field(default=ATOL, gt=0.0)
    sample_step: float = Field(default=SAMPLE_STEP, gt=0.0)
    keep_states: bool = False
    check_invariants: bool = True


@dataclass(frozen=True)
class Trajectory:
    """Observables of rho sampled on a strictly increasing time axis."""
    times: np.ndarray
    im_rho21: np.ndarray
    rho11: np.ndarray
    rho22: np.ndarray
    rho33: np.ndarray
    states: Optional[np.ndarray] = None

    @classmethod
    def from_states(cls, times, states, keep_states=False):
        states = np.asarray(states)
        return cls(
            times=np.asarray(times, dtype=float),
            im_rho21=states[:, 1, 0].imag.copy(),
            rho11=states[:, 0, 0].real.copy(),
            rho22=states[:, 1, 1].real.copy(),
            rho33=states[:, 2, 2].real.copy(),
            states=states if keep_states else None,
        )

    @classmethod
    def empty(cls):
        nothing = np.zeros(0)
        return cls(nothing, nothing, nothing, nothing, nothing)

    def __len__(self):
        return len(self.times)

    def observables(self):
        return {"im_rho21": self.im_rho21, "rho11": self.rho11, "rho22": self.rho22, "rho33": self.rho33}

    def window(self, t_from, t_to):
        mask = (self.times >= t_from) & (self.times <= t_to)
        return Trajectory(
            times=self.times[mask],
            im_rho21=self.im_rho21[mask],
            rho11=self.rho11[mask],
            rho22=self.rho22[mask],
            rho33=self.rho33[mask],
            states=None if self.states is None else self.states[mask],
        )


def check_trajectory(traj: Trajectory, population_tol=1e-8, trace_tol=1e-9):
    if len(traj) > 1 and np.any(np.diff(traj.times) <= 0):
        raise ShapeError("trajectory times must be strictly increasing")
    pops = np.vstack([traj.rho11, traj.rho22, traj.rho33])
    if pops.size and (pops.min() < -population_tol or pops.max() > 1.0 + population_tol):
        raise ShapeError(f"populations outside [0, 1]: min={pops.min():.3e}, max={pops.max():.3e}")
    trace_err = np.abs(pops.sum(axis=0) - 1.0)
    if trace_err.size and trace_err.max() > trace_tol:
        raise ShapeError(f"trace deviates from 1 by {trace_err.max():.3e}")
    if traj.states is not None:
        check_states(traj.states, times=traj.times)
    return traj


def build_hamiltonian(p: HamiltonianParams) -> np.ndarray:
    h = np.zeros((3, 3), dtype=complex)
    h[0, 1] = h[1, 0] = 0.5 * p.omega_780
    h[1, 2] = h[2, 1] = 0.5 * p.omega_480
    h[1, 1] = -p.delta_780
    h[2, 2] = -p.delta_780 - p.delta_480
    return h


def lindblad_apply(rho, g: DecayRates) -> np.ndarray:
    """Cascade decay 3 -> 2 -> 1, written term by term."""
    r = rho.data if isinstance(rho, DensityMatrix) else np.asarray(rho)
    g12, g23 = g.gamma_12, g.gamma_23
    out = np.zeros((3, 3), dtype=complex)

    out[0, 0] += g12 * r[1, 1]
    out[0, 1] += -0.5 * g12 * r[0, 1]
    out[1, 0] += -0.5 * g12 * r[1, 0]
    out[1, 1] += -g12 * r[1, 1]
    out[1, 2] += -0.5 * g12 * r[1, 2]
    out[2, 1] += -0.5 * g12 * r[2, 1]

    out[0, 2] += -0.5 * g23 * r[0, 2]
    out[1, 1] += g23 * r[2, 2]
    out[1, 2] += -0.5 * g23 * r[1, 2]
    out[2, 0] += -0.5 * g23 * r[2, 0]
    out[2, 1] += -0.5 * g23 * r[2, 1]
    out[2, 2] += -g23 * r[2, 2]
    return out


def commutator_term(h, rho):
    return -1j * (h @ rho - rho @ h)


def hamiltonian_params(drive: Drive, t: float) -> HamiltonianParams:
    return HamiltonianParams(
        omega_780=drive.omega_780(t),
        omega_480=drive.omega_480(t),
        delta_780=drive.delta_780,
        delta_480=drive.delta_480,
    )


def rhs(t, rho, drive: Drive, g: DecayRates) -> np.ndarray:
    r = rho.data if isinstance(rho, DensityMatrix) else np.asarray(rho)
    h = build_hamiltonian(hamiltonian_params(drive, t))
    return commutator_term(h, r) + lindblad_apply(r, g)


def superoperator(linear_map) -> np.ndarray:
    """9x9 matrix of a linear map on 3x3 matrices, from its action on |i><j|."""
    s = np.zeros((9, 9), dtype=complex)
    for k in range(9):
        unit = np.zeros(9, dtype=complex)
        unit[k] = 1.0
        s[:, k] = np.asarray(linear_map(unit.reshape(3, 3))).reshape(9)
    return s


def liouvillian(p: HamiltonianParams, g: DecayRates) -> np.ndarray:
    h = build_hamiltonian(p)
    return superoperator(lambda r: commutator_term(h, r) + lindblad_apply(r, g))


_UNIT_PROBE = build_hamiltonian(HamiltonianParams(omega_780=1.0, omega_480=0.0))
_UNIT_COUPLING = build_hamiltonian(HamiltonianParams(omega_780=0.0, omega_480=1.0))
PROBE_PART = superoperator(lambda r: commutator_term(_UNIT_PROBE, r))
COUPLING_PART = superoperator(lambda r: commutator_term(_UNIT_COUPLING, r))


def _hermitian_coordinate_maps():
    """Maps between vec(rho) and the real coordinates of a Hermitian rho.

    Coordinates: rho11, rho22, rho33, Re/Im rho21, Re/Im rho31, Re/Im rho32.
    """
    to_vec = np.zeros((9, 9), dtype=complex)
    from_vec = np.zeros((9, 9), dtype=complex)
    for k, idx in enumerate((0, 4, 8)):
        to_vec[idx, k] = from_vec[k, idx] = 1.0
    # vec indices of (rho21, rho12), (rho31, rho13), (rho32, rho23)
    for k, (lower, upper) in enumerate(((3, 1), (6, 2), (7, 5))):
        re, im = 3 + 2 * k, 4 + 2 * k
        to_vec[lower, re] = to_vec[upper, re] = 1.0
        to_vec[lower, im], to_vec[upper, im] = 1j, -1j
        from_vec[re, lower] = from_vec[re, upper] = 0.5
        from_vec[im, lower], from_vec[im, upper] = -0.5j, 0.5j
    return to_vec, from_vec


HERMITIAN_TO_VEC, VEC_TO_HERMITIAN = _hermitian_coordinate_maps()


def hermitian_generator(generator) -> np.ndarray:
    """Real 9x9 generator acting on Hermitian coordinates."""
    return (VEC_TO_HERMITIAN @ generator @ HERMITIAN_TO_VEC).real


def to_hermitian_coordinates(vec) -> np.ndarray:
    """Real coordinates of the Hermitian part of vec(rho)."""
    return (VEC_TO_HERMITIAN @ np.asarray(vec, dtype=complex)).real


PROBE_PART_REAL = hermitian_generator(PROBE_PART)
COUPLING_PART_REAL = hermitian_generator(COUPLING_PART)

# Function evaluations per accepted step, used to turn nfev into a step count
EVALUATIONS_PER_STEP = {"RK45": 6, "DOP853": 12}


def positivity_tolerance(solver: "SolverOptions", evaluations: int) -> float:
    """Eigenvalue slack allowed after `evaluations` right-hand-side calls.

    Local errors of up to 3 (atol + rtol) per coordinate are accepted by the
    RMS error norm over 9 coordinates; they add up over the steps taken.
    """
    steps = evaluations / EVALUATIONS_PER_STEP[solver.method]
    return max(POSITIVITY_TOL, 3.0 * steps * (solver.atol + solver.rtol))


class LiouvilleGenerator:
    """Time-dependent 9x9 generator L(t) = L_const + Omega780(t) P + Omega480(t) C.

    Static detunings, decay and any cw field are folded into L_const so the
    per-step cost is one or two scaled additions.
    """

    def __init__(self, drive: Drive, g: DecayRates):
        self.drive = drive
        static = HamiltonianParams(omega_780=0.0, omega_480=0.0,
                                   delta_780=drive.delta_780, delta_480=drive.delta_480)
        constant = liouvillian(static, g)
        if drive.probe_envelope is None:
            constant = constant + drive.probe_rabi * PROBE_PART
        if drive.coupling_envelope is None:
            constant = constant + drive.coupling_rabi * COUPLING_PART
        self.constant = constant
        self.hermitian_constant = hermitian_generator(constant)

    def varying(self, t):
        drive = self.drive
        term = 0.0
        if drive.probe_envelope is not None:
            term = term + drive.omega_780(t) * PROBE_PART
        if drive.coupling_envelope is not None:
            term = term + drive.omega_480(t) * COUPLING_PART
        return term

    def __call__(self, t):
        return self.constant + self.varying(t)

    def hermitian_rhs(self, t, y):
        """Time derivative of the real Hermitian coordinates y."""
        out = self.hermitian_constant @ y
        if self.drive.probe_envelope is not None:
            out += self.drive.omega_780(t) * (PROBE_PART_REAL @ y)
        if self.drive.coupling_envelope is not None:
            out += self.drive.omega_480(t) * (COUPLING_PART_REAL @ y)
        return out


class EnsembleGenerator:
    """Generators of several velocity classes stacked to shape (n, 9, 9).

    The classes differ only in their detunings, so the pulsed parts are shared.
    """

    def __init__(self, drives, g: DecayRates):
        generators = [LiouvilleGenerator(d, g) for d in drives]
        reference = drives[0]
        for d in drives[1:]:
            if (d.probe_rabi, d.coupling_rabi, d.probe_envelope, d.coupling_envelope) != (
                    reference.probe_rabi, reference.coupling_rabi,
                    reference.probe_envelope, reference.coupling_envelope):
                raise ShapeError("ensemble classes must share Rabi frequencies and envelopes")
        self.reference = generators[0]
        self.constant = np.stack([gen.constant for gen in generators])

    def __call__(self, t):
        return self.constant + self.reference.varying(t)


def steady_state(omega_780, delta_780, g: DecayRates) -> DensityMatrix:
    """Fixed point of the master equation with only the cw probe on."""
    drive = Drive(probe_rabi=omega_780, delta_780=delta_780, coupling_rabi=0.0, delta_480=0.0)
    generator = LiouvilleGenerator(drive, g).constant

    # The population equations are linearly dependent; swap the rho11 row for the trace.
    scale = max(g.gamma_12, g.gamma_23, omega_780, 1.0)
    system = generator.copy()
    system[0, :] = 0.0
    system[0, [0, 4, 8]] = scale
    rhs_vec = np.zeros(9, dtype=complex)
    rhs_vec[0] = scale

    cond = np.linalg.cond(system)
    if not np.isfinite(cond) or cond > STEADY_STATE_MAX_COND:
        raise SingularSystemError(
            f"steady-state system is singular (cond = {cond:.3e})",
            diagnostics={"cond": cond, "omega_780": omega_780, "delta_780": delta_780,
                         "gamma_12": g.gamma_12, "gamma_23": g.gamma_23},
        )
    solution = lu_solve(lu_factor(system), rhs_vec)
    rho = DensityMatrix.from_vector(solution)
    residual = np.abs(generator @ solution).max()
    logger.debug(f"steady state: rho22={rho.data[1, 1].real:.6f}, residual={residual:.3e}, cond={cond:.3e}")
    return rho


def two_level_steady_state(omega, delta, gamma):
    """Closed-form (rho22, rho21) of the driven, decaying two-level system."""
    rho22 = (omega ** 2 / 4.0) / (delta ** 2 + omega ** 2 / 2.0 + gamma ** 2 / 4.0)
    rho21 = (0.5j * omega) * (1.0 - 2.0 * rho22) / (1j * delta - 0.5 * gamma)
    return rho22, rho21


def sample_times(t_start, t_end, step):
    n = int(round((t_end - t_start) / step)) + 1
    return np.linspace(t_start, t_end, max(n, 2))


def propagate(rho0, t_start, t_end, drive: Drive, g: DecayRates,
              solver: SolverOptions = SolverOptions(), times=None) -> Trajectory:
    """Integrate rho from t_start to t_end with adaptive RK and dense output.

    The real Hermitian coordinates are integrated, so every sample is exactly
    Hermitian. Integration restarts at envelope discontinuities so no step
    straddles one.
    """
    if not t_end > t_start:
        raise ShapeError(f"t_end must exceed t_start, got [{t_start}, {t_end}]")
    if times is None:
        times = sample_times(t_start, t_end, solver.sample_step)
    times = np.asarray(times, dtype=float)

    generator = LiouvilleGenerator(drive, g)
    rho0 = (rho0.data if isinstance(rho0, DensityMatrix) else np.asarray(rho0)).reshape(3, 3)
    if solver.check_invariants:
        check_states(rho0[np.newaxis], times=[t_start])
    y = to_hermitian_coordinates(rho0.reshape(9))
    edges = [t_start] + [b for b in drive.breakpoints() if t_start < b < t_end] + [t_end]

    samples = []
    evaluations = 0
    for k, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
        last = k == len(edges) - 2
        mask = (times >= a) & ((times <= b) if last else (times < b))
        t_eval = times[mask]
        if t_eval.size == 0 or t_eval[-1] != b:
            t_eval = np.append(t_eval, b)
        sol = solve_ivp(generator.hermitian_rhs, (a, b), y, method=solver.method, t_eval=t_eval,
                        rtol=solver.rtol, atol=solver.atol)
        if not sol.success:
            failed_at = float(sol.t[-1]) if sol.t.size else a
            raise IntegrationError(f"integration failed: {sol.message}", time=failed_at)
        evaluations += sol.nfev
        y = sol.y[:, -1]
        samples.append(sol.y[:, :int(mask.sum())])

    states = (HERMITIAN_TO_VEC @ np.concatenate(samples, axis=1)).T.reshape(-1, 3, 3)
    if solver.check_invariants:
        check_states(states, positivity_tol=positivity_tolerance(solver, evaluations), times=times)
    return Trajectory.from_states(times, states, keep_states=solver.keep_states)


def propagate_exponential(y0, t_start, t_end, generator_fn, slice_width, order=4):
    """Exact exponentials of a per-slice constant generator.

    order 2 uses the midpoint generator, order 4 the two-point Gauss-Legendre
    Magnus exponent. y0 may carry leading batch axes: (..., 9), matched by
    generator_fn(t) of shape (..., 9, 9).
    """
    if slice_width <= 0:
        raise ShapeError(f"slice must be positive, got {slice_width}")
    n_slices = max(1, int(math.ceil((t_end - t_start) / slice_width - 1e-9)))
    h = (t_end - t_start) / n_slices
    c = math.sqrt(3.0) / 6.0
    y = np.asarray(y0, dtype=complex)

    for k in range(n_slices):
        t_a = t_start + k * h
        if order == 2:
            exponent = h * generator_fn(t_a + 0.5 * h)
        else:
            a1 = generator_fn(t_a + (0.5 - c) * h)
            a2 = generator_fn(t_a + (0.5 + c) * h)
            exponent = 0.5 * h * (a1 + a2) + (math.sqrt(3.0) / 12.0) * h * h * (a2 @ a1 - a1 @ a2)
        y = (expm(exponent) @ y[..., np.newaxis])[..., 0]
    return y


def propagate_oracle(rho0, t_start, t_end, drive: Drive, g: DecayRates, slice_width=ORACLE_SLICE) -> DensityMatrix:
    generator = LiouvilleGenerator(drive, g)
    y0 = (rho0.data if isinstance(rho0, DensityMatrix) else np.asarray(rho0)).reshape(9)
    return DensityMatrix.from_vector(propagate_exponential(y0, t_start, t_end, generator, slice_width, order=4))


def purity(rho) -> float:
    r = rho.data if isinstance(rho, DensityMatrix) else np.asarray(rho)
    return float(np.trace(r @ r).real)
