import math

import numpy as np
import pytest
from scipy.linalg import expm

from doppler import drive_at_velocity
from errors import InvariantViolation, ShapeError, SingularSystemError
from liouville import (HERMITIAN_TO_VEC, HamiltonianParams, LiouvilleGenerator, SolverOptions,
                       Trajectory, build_hamiltonian, check_trajectory, hamiltonian_params,
                       liouvillian, positivity_tolerance, propagate, propagate_exponential,
                       propagate_oracle, purity, rhs, steady_state, to_hermitian_coordinates,
                       two_level_steady_state)
from rydberg_model import POSITIVITY_TOL, TWO_PI, DecayRates, DensityMatrix, Drive, PulseEnvelope
from run_config import RunConfig

NO_DECAY = DecayRates(gamma_12=0.0, gamma_23=0.0)
REFERENCE = SolverOptions(method="DOP853", rtol=1e-11, atol=1e-13, sample_step=10e-12, keep_states=True)


def random_density_matrix(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def test_hamiltonian_layout():
    h = build_hamiltonian(HamiltonianParams(omega_780=2.0, omega_480=4.0, delta_780=1.0, delta_480=3.0))
    np.testing.assert_allclose(h, h.conj().T)
    assert h[0, 1] == 1.0 and h[1, 2] == 2.0
    assert h[1, 1] == -1.0 and h[2, 2] == -4.0
    assert h[0, 2] == 0.0


def test_rhs_sign_from_ground_state():
    drive = Drive(probe_rabi=1.0, delta_780=0.0, coupling_rabi=0.0, delta_480=0.0)
    d_rho = rhs(0.0, DensityMatrix.ground_state(), drive, NO_DECAY)
    assert d_rho[1, 0] == pytest.approx(-0.5j)
    assert d_rho[0, 1] == pytest.approx(0.5j)


def test_rhs_preserves_trace_and_hermiticity():
    drive = Drive(probe_rabi=3.0, delta_780=0.7, coupling_rabi=5.0, delta_480=-1.1)
    g = DecayRates(gamma_12=0.4, gamma_23=0.2)
    for seed in range(5):
        d_rho = rhs(0.0, random_density_matrix(seed), drive, g)
        assert abs(np.trace(d_rho)) < 1e-12
        np.testing.assert_allclose(d_rho, d_rho.conj().T, atol=1e-12)


def test_liouvillian_matches_rhs():
    g = DecayRates(gamma_12=0.4, gamma_23=0.2)
    p = HamiltonianParams(omega_780=1.3, omega_480=2.1, delta_780=0.3, delta_480=-0.5)
    drive = Drive(probe_rabi=1.3, delta_780=0.3, coupling_rabi=2.1, delta_480=-0.5)
    rho = random_density_matrix(7)
    np.testing.assert_allclose(liouvillian(p, g) @ rho.reshape(9), rhs(0.0, rho, drive, g).reshape(9), atol=1e-12)


def test_generator_tracks_pulsed_drive():
    env = PulseEnvelope(center_time=0.0, intensity_fwhm=1.0)
    drive = Drive(probe_rabi=1.0, delta_780=0.2, coupling_rabi=3.0, delta_480=0.1, coupling_envelope=env)
    g = DecayRates(gamma_12=0.1, gamma_23=0.01)
    generator = LiouvilleGenerator(drive, g)
    for t in (-1.0, 0.0, 0.4):
        np.testing.assert_allclose(generator(t), liouvillian(hamiltonian_params(drive, t), g), atol=1e-12)


def test_steady_state_matches_two_level_closed_form():
    omega, gamma = TWO_PI * 220e6, TWO_PI * 6e6
    rho = steady_state(omega, 0.0, DecayRates(gamma_12=gamma))
    rho22, rho21 = two_level_steady_state(omega, 0.0, gamma)
    assert rho.populations[1] == pytest.approx(0.4998, abs=1e-4)
    assert rho.populations[1] == pytest.approx(rho22, abs=1e-9)
    assert rho.data[1, 0] == pytest.approx(rho21, abs=1e-9)
    assert abs(rho.data[2, 2]) < 1e-12
    rho.check()


def test_steady_state_residual():
    g = DecayRates(gamma_12=TWO_PI * 6e6)
    omega = TWO_PI * 220e6
    rho = steady_state(omega, TWO_PI * 30e6, g)
    drive = Drive(probe_rabi=omega, delta_780=TWO_PI * 30e6, coupling_rabi=0.0, delta_480=0.0)
    assert np.abs(rhs(0.0, rho, drive, g)).max() <= 1e-10 * g.gamma_12


def test_steady_state_singular_without_decay():
    with pytest.raises(SingularSystemError) as info:
        steady_state(TWO_PI * 220e6, 0.0, NO_DECAY)
    assert "cond" in info.value.diagnostics


def test_two_level_rabi_oscillation_without_decay():
    omega = TWO_PI * 220e6
    drive = Drive(probe_rabi=omega, delta_780=0.0, coupling_rabi=0.0, delta_480=0.0)
    t_end = 10 * TWO_PI / omega
    traj = propagate(DensityMatrix.ground_state(), 0.0, t_end, drive, NO_DECAY, REFERENCE)
    np.testing.assert_allclose(traj.rho22, np.sin(0.5 * omega * traj.times) ** 2, atol=1e-6)
    purities = [purity(state) for state in traj.states]
    np.testing.assert_allclose(purities, 1.0, atol=1e-7)
    assert np.abs(traj.rho33).max() < 1e-12


def test_propagate_samples_window():
    drive = Drive(probe_rabi=1e9, delta_780=0.0, coupling_rabi=1e9, delta_480=0.0)
    solver = SolverOptions(sample_step=1e-11)
    traj = propagate(DensityMatrix.ground_state(), 0.0, 1e-9, drive, DecayRates(), solver)
    assert len(traj) == 101
    assert traj.times[0] == 0.0 and traj.times[-1] == pytest.approx(1e-9)
    check_trajectory(traj)


def test_propagate_rejects_reversed_window():
    drive = Drive(probe_rabi=1.0, delta_780=0.0, coupling_rabi=0.0, delta_480=0.0)
    with pytest.raises(ShapeError):
        propagate(DensityMatrix.ground_state(), 1.0, 0.0, drive, DecayRates())


def test_propagate_flags_unphysical_start():
    drive = Drive(probe_rabi=1e9, delta_780=0.0, coupling_rabi=0.0, delta_480=0.0)
    doubled = np.diag([2.0, 0.0, 0.0]).astype(complex)
    with pytest.raises(InvariantViolation):
        propagate(doubled, 0.0, 1e-10, drive, DecayRates())


def test_hermitian_coordinates_represent_generator():
    drive = Drive(probe_rabi=3.0, delta_780=0.7, coupling_rabi=5.0, delta_480=-1.1)
    g = DecayRates(gamma_12=0.4, gamma_23=0.2)
    generator = LiouvilleGenerator(drive, g)
    rho = random_density_matrix(3).reshape(9)
    y = to_hermitian_coordinates(rho)
    np.testing.assert_allclose(HERMITIAN_TO_VEC @ y, rho, atol=1e-14)
    np.testing.assert_allclose(generator.hermitian_rhs(0.0, y), to_hermitian_coordinates(generator.constant @ rho),
                               atol=1e-12)
    assert generator.hermitian_constant.dtype == np.float64


def test_positivity_tolerance_grows_with_steps():
    solver = SolverOptions()
    assert positivity_tolerance(solver, 0) == POSITIVITY_TOL
    assert positivity_tolerance(solver, 6_000_000) == pytest.approx(3.0 * 1e6 * (solver.atol + solver.rtol))
    dop = SolverOptions(method="DOP853")
    assert positivity_tolerance(dop, 12_000_000) == pytest.approx(3.0 * 1e6 * (dop.atol + dop.rtol))


def test_strong_detuned_flattop_keeps_invariants():
    env = PulseEnvelope(shape="flattop", center_time=4e-9, intensity_fwhm=8e-9)
    drive = Drive(probe_rabi=TWO_PI * 220e6, delta_780=0.0, coupling_rabi=TWO_PI * 2.3e9,
                  delta_480=TWO_PI * 1e9, coupling_envelope=env)
    traj = propagate(DensityMatrix.ground_state(), 0.0, 8e-9, drive, NO_DECAY,
                     SolverOptions(keep_states=True))
    assert len(traj) == 8001
    herm = np.abs(traj.states - np.conj(np.swapaxes(traj.states, -1, -2))).max()
    assert herm <= 1e-15
    np.testing.assert_allclose(traj.rho11 + traj.rho22 + traj.rho33, 1.0, atol=1e-9)


def test_purity_conserved_over_gaussian_pulse_without_decay():
    drive = Drive(probe_rabi=TWO_PI * 220e6, delta_780=0.0, coupling_rabi=TWO_PI * 2.2e9,
                  delta_480=0.0, coupling_envelope=PulseEnvelope())
    solver = SolverOptions(method="DOP853", rtol=1e-10, atol=1e-12, sample_step=10e-12, keep_states=True)
    traj = propagate(DensityMatrix.ground_state(), -1e-9, 8e-9, drive, NO_DECAY, solver)
    purities = np.array([purity(state) for state in traj.states])
    np.testing.assert_allclose(purities, 1.0, atol=1e-7)


def test_third_level_stays_empty_without_coupling():
    drive = Drive(probe_rabi=TWO_PI * 220e6, delta_780=0.0, coupling_rabi=0.0,
                  delta_480=0.0, coupling_envelope=PulseEnvelope())
    g = DecayRates()
    rho0 = steady_state(drive.probe_rabi, 0.0, g)
    traj = propagate(rho0, -1e-9, 8e-9, drive, g, SolverOptions(sample_step=10e-12))
    assert np.abs(traj.rho33).max() <= 1e-12
    assert np.ptp(traj.rho22) < 1e-6


def test_propagate_matches_oracle_on_resonant_pulse():
    config = RunConfig()
    drive = drive_at_velocity(config.drive_config(), 0.0)
    rho0 = steady_state(config.probe.rabi_peak, 0.0, config.decay)
    traj = propagate(rho0, 1e-9, 3e-9, drive, config.decay, REFERENCE)
    oracle = propagate_oracle(rho0, 1e-9, 3e-9, drive, config.decay)
    assert np.abs(traj.states[-1] - oracle.data).max() <= 1e-8


def test_propagate_matches_oracle_across_flattop_edges():
    env = PulseEnvelope(shape="flattop", center_time=1e-9, intensity_fwhm=1e-9)
    drive = Drive(probe_rabi=TWO_PI * 220e6, delta_780=0.0, coupling_rabi=TWO_PI * 1e9,
                  delta_480=0.0, coupling_envelope=env)
    g = DecayRates()
    rho0 = DensityMatrix.ground_state()
    traj = propagate(rho0, 0.0, 2e-9, drive, g, REFERENCE)
    oracle = propagate_oracle(rho0, 0.0, 2e-9, drive, g)
    assert np.abs(traj.states[-1] - oracle.data).max() <= 1e-8


@pytest.mark.slow
def test_propagate_matches_oracle_on_full_window():
    config = RunConfig()
    drive = drive_at_velocity(config.drive_config(), 0.0)
    rho0 = steady_state(config.probe.rabi_peak, 0.0, config.decay)
    traj = propagate(rho0, -1e-9, 8e-9, drive, config.decay, REFERENCE)
    oracle = propagate_oracle(rho0, -1e-9, 8e-9, drive, config.decay)
    assert np.abs(traj.states[-1] - oracle.data).max() <= 1e-8


def test_exponential_propagator_exact_for_constant_generator():
    drive = Drive(probe_rabi=1.0, delta_780=0.3, coupling_rabi=2.0, delta_480=-0.2)
    g = DecayRates(gamma_12=0.1, gamma_23=0.05)
    generator = LiouvilleGenerator(drive, g)
    y0 = DensityMatrix.ground_state().vector()
    expected = expm(generator.constant * 3.0) @ y0
    for order in (2, 4):
        result = propagate_exponential(y0, 0.0, 3.0, generator, 0.25, order=order)
        np.testing.assert_allclose(result, expected, atol=1e-12)


def test_exponential_propagator_batches():
    g = DecayRates(gamma_12=0.1, gamma_23=0.05)
    drives = [Drive(probe_rabi=1.0, delta_780=d, coupling_rabi=2.0, delta_480=0.0) for d in (-0.5, 0.5)]
    y0 = np.tile(DensityMatrix.ground_state().vector(), (2, 1))
    constants = np.stack([LiouvilleGenerator(d, g).constant for d in drives])
    batched = propagate_exponential(y0, 0.0, 2.0, lambda t: constants, 0.5)
    for k, drive in enumerate(drives):
        single = propagate_exponential(y0[k], 0.0, 2.0, LiouvilleGenerator(drive, g), 0.5)
        np.testing.assert_allclose(batched[k], single, atol=1e-12)
    with pytest.raises(ShapeError):
        propagate_exponential(y0, 0.0, 1.0, lambda t: constants, 0.0)


def test_trajectory_window_and_checks(synthetic_trajectory):
    part = synthetic_trajectory.window(1e-9, 2e-9)
    assert part.times[0] >= 1e-9 and part.times[-1] <= 2e-9
    assert 99 <= len(part) <= 101
    check_trajectory(synthetic_trajectory)
    broken = Trajectory(times=np.array([0.0, 1.0]), im_rho21=np.zeros(2), rho11=np.array([1.0, 1.5]),
                        rho22=np.zeros(2), rho33=np.zeros(2))
    with pytest.raises(ShapeError):
        check_trajectory(broken)
    assert len(Trajectory.empty()) == 0


def test_purity_of_mixed_state():
    assert purity(np.eye(3) / 3.0) == pytest.approx(1.0 / 3.0)
    assert math.isclose(purity(DensityMatrix.ground_state()), 1.0)
