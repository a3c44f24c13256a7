import numpy as np
import pytest

from qphase.errors import DimensionMismatchError, FixedPointDetectedError, NotConvergedError
from qphase.hilbert import expectation, make_annihilation, make_qvdp, number_operator
from qphase.limit_cycle import (
    CycleOptions,
    LimitCycle,
    asymptotic_phase,
    cycle_expectations,
    default_initial_state,
    deterministic_evolve,
    find_limit_cycle,
    harmonicity,
    measurement_variance,
    norm_drift_vs_calculus,
    project_phase,
)

FAST = CycleOptions(burn_in=40.0, probe_time=30.0, relax_periods=30, grid_size=64)


def test_period_is_set_by_detuning(cycle10):
    # H = delta n commutes with the U(1) symmetry of the dissipators, so the
    # cycle is a pure rotation at angular frequency delta
    assert abs(cycle10.period - 2 * np.pi) < 1e-6
    lc = find_limit_cycle(make_qvdp(6, 2.0, 0.2, 1.0), opts=FAST)
    assert abs(lc.period - np.pi) < 1e-6


def test_zero_detuning_is_a_fixed_point():
    with pytest.raises(FixedPointDetectedError):
        find_limit_cycle(make_qvdp(6, 0.0, 0.2, 1.0), opts=FAST)


def test_cycle_states_are_normalized_and_closed(cycle10):
    norms = np.linalg.norm(cycle10.states, axis=1)
    assert np.allclose(norms, 1.0, atol=1e-10)
    after = cycle10.flow.evolve(cycle10.states[0][:, None], cycle10.dt, cycle10.grid_size * cycle10.substeps)[:, 0]
    assert abs(abs(np.vdot(after, cycle10.states[0])) - 1) < 1e-8


def test_origin_alignment(cycle10):
    ea = expectation(make_annihilation(10), cycle10.states[0])
    assert ea.real > 0 and abs(np.angle(ea)) < 1e-6


def test_harmonic_cycle(cycle10):
    h = harmonicity(cycle10)
    assert h["relative_spread"] < 1e-3
    assert h["arg_residual"] < 1e-3
    n = cycle_expectations(cycle10, number_operator(10)).real
    assert np.ptp(n) < 1e-6


def test_grid_states_read_out_their_own_phase(cycle10):
    idx = np.arange(0, cycle10.grid_size, 17)
    theta = asymptotic_phase(cycle10.states[idx].T, cycle10, relax_periods=2, steps_per_period=256)
    err = np.angle(np.exp(1j * (theta - cycle10.thetas[idx])))
    assert np.max(np.abs(err)) < 1e-6
    th, ov = project_phase(cycle10.states[idx].T, cycle10)
    assert np.allclose(ov, 1.0, atol=1e-9)


def test_isochrone_phase_of_time_shifted_state(cycle10):
    psi = default_initial_state(10)
    t = 1.3
    later = deterministic_evolve(cycle10.model, psi, t, dt=1e-3)
    p0 = asymptotic_phase(psi, cycle10)
    p1 = asymptotic_phase(later, cycle10)
    assert abs(np.angle(np.exp(1j * (p1 - p0 - cycle10.frequency * t)))) < 1e-4


def test_asymptotic_phase_reports_nonconvergence(cycle10):
    far = np.zeros(10, complex)
    far[0] = 1.0
    far[9] = 1.0
    with pytest.raises(NotConvergedError):
        asymptotic_phase(far / np.sqrt(2), cycle10, relax_periods=1, steps_per_period=64, on_cycle_threshold=1 - 1e-12)
    with pytest.raises(DimensionMismatchError):
        asymptotic_phase(np.ones(4), cycle10)


def test_save_load_roundtrip(cycle10, tmp_path):
    path = tmp_path / "cycle.json"
    cycle10.save(path)
    back = LimitCycle.load(path)
    assert back.period == cycle10.period
    assert np.array_equal(back.states, cycle10.states)
    assert np.array_equal(back.model.hamiltonian, cycle10.model.hamiltonian)


def test_norm_drift_calculus(qvdp10):
    psi = default_initial_state(10)
    var = measurement_variance(qvdp10, psi)
    for p in (0.0, 0.5, 1.0):
        assert abs(norm_drift_vs_calculus(qvdp10, psi, p) - (2 * p - 1) * var) < 1e-6 * max(var, 1)


def test_readout_stays_stable_for_stiff_truncations(cycle14):
    # the top Fock level decays at ~78 here, beyond RK4 at 128 steps per period
    psi = cycle14.states[40].copy()
    psi[-1] = 0.16
    theta = asymptotic_phase(psi, cycle14, relax_periods=4, steps_per_period=128, max_periods=8)
    assert abs(np.angle(np.exp(1j * (theta - cycle14.thetas[40])))) < 0.2
