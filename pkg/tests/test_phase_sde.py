import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qphase.errors import InvalidParameterError, ValidationFailure
from qphase.phase_sde import (
    PhaseModel,
    PhaseSeries,
    periodic_interp,
    simulate_phase_ito,
    simulate_phase_pair_common,
    simulate_phase_stratonovich,
    spectral_derivative,
    strat_to_ito,
)

M = 256
TH = 2 * np.pi * np.arange(M) / M


def test_zero_noise_is_exact_rotation():
    pm = PhaseModel(1.3, np.zeros((2, M)))
    th0 = np.array([0.1, 2.0, 5.0])
    s = simulate_phase_stratonovich(pm, th0, 10.0, 0.01, seed=1, record_stride=100)
    i = simulate_phase_ito(pm, th0, 10.0, 0.01, seed=1, record_stride=100)
    expected = th0[None] + 1.3 * s.times[:, None]
    assert np.allclose(s.unwrapped, expected, atol=1e-11)
    assert np.allclose(i.unwrapped, expected, atol=1e-11)


def test_constant_noise_makes_the_schemes_coincide():
    pm = PhaseModel(1.0, np.full((1, M), 0.4))
    assert np.allclose(strat_to_ito(pm.noise_curves), 0.0)
    s = simulate_phase_stratonovich(pm, [0.0, 1.0], 5.0, 0.01, seed=7)
    i = simulate_phase_ito(pm, [0.0, 1.0], 5.0, 0.01, seed=7)
    assert np.allclose(s.unwrapped, i.unwrapped, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 3.0), st.integers(1, 5))
def test_ito_correction_of_single_harmonic(v, n):
    corr = strat_to_ito(v * np.sin(n * TH))
    assert np.max(np.abs(corr - 0.5 * n * v**2 * np.sin(n * TH) * np.cos(n * TH))) < 1e-6


def test_qvdp_correction_cancels():
    pm = PhaseModel.qvdp(1.0, 0.375, 0.12, M, offsets=(0.3, -1.0))
    assert np.max(np.abs(pm.ito_drift())) < 1e-12
    assert np.ptp(pm.noise_power()) < 1e-12


def test_interpolation_and_derivative():
    y = np.sin(TH)
    assert np.allclose(periodic_interp(y, TH + 4 * np.pi), y)
    x = np.array([0.123, 3.3, -1.0])
    assert np.allclose(periodic_interp(y, x), np.sin(x), atol=2e-4)
    assert np.allclose(spectral_derivative(np.sin(3 * TH)), 3 * np.cos(3 * TH))


def test_consolidation_preserves_the_law():
    v1, v2 = 0.375, 0.12
    pm = PhaseModel.qvdp(1.0, v1, v2, M)
    one = pm.consolidated()
    assert one.n_noises == 1 and np.isclose(one.noise_curves[0, 0] ** 2, v1**2 + v2**2)
    th0 = np.zeros(4000)
    t = 4.0
    var_full = np.var(simulate_phase_stratonovich(pm, th0, t, 0.01, seed=3, record_stride=400).unwrapped[-1])
    var_one = np.var(simulate_phase_stratonovich(one, th0, t, 0.01, seed=4, record_stride=400).unwrapped[-1])
    expected = (v1**2 + v2**2) * t
    for var in (var_full, var_one):
        assert abs(var / expected - 1) < 0.08
    with pytest.raises(ValidationFailure):
        PhaseModel(1.0, [np.sin(TH)]).consolidated()
    with pytest.raises(ValidationFailure):
        PhaseModel(1.0, np.full((1, M), 0.3), np.sin(TH)).consolidated()


def test_pair_without_common_noise_diffuses():
    v = 0.4
    pm = PhaseModel(1.0, np.full((1, M), v))
    pairs = np.zeros((3000, 2))
    _, _, d = simulate_phase_pair_common(pm, np.zeros(M), pairs, 5.0, 0.01, seed=8, record_stride=250)
    rate = np.var(d[1:], axis=1) / np.array([2.5, 5.0])
    assert np.allclose(rate, 2 * v**2, rtol=0.08)


def test_pair_with_strong_common_noise_stays_together():
    pm = PhaseModel(1.0, np.full((1, M), 0.05))
    pairs = np.tile([[0.0, 0.2]], (200, 1))
    _, _, d = simulate_phase_pair_common(pm, 0.8 * np.sin(TH), pairs, 50.0, 0.01, seed=2, record_stride=5000)
    # independent phases would give a median |difference| of pi / 2
    assert np.median(np.abs(np.angle(np.exp(1j * d[-1])))) < 0.3


def test_series_roundtrip(tmp_path):
    pm = PhaseModel(1.0, np.full((1, M), 0.2))
    s = simulate_phase_ito(pm, [0.0, 1.0], 1.0, 0.01, seed=5, record_stride=10)
    s.to_csv(tmp_path / "s.csv")
    back = PhaseSeries.from_csv(tmp_path / "s.csv", seed=5)
    assert np.array_equal(back.times, s.times)
    assert np.array_equal(back.unwrapped, s.unwrapped)
    assert np.all((s.wrapped >= 0) & (s.wrapped < 2 * np.pi))


def test_errors():
    pm = PhaseModel(1.0, np.full((1, M), 0.2))
    with pytest.raises(InvalidParameterError):
        simulate_phase_stratonovich(pm, 0.0, 1.0, 0.0, seed=0)
    with pytest.raises(InvalidParameterError):
        simulate_phase_ito(pm, 0.0, 1.0, -0.1, seed=0)
    with pytest.raises(InvalidParameterError):
        PhaseModel(0.0, np.zeros((1, M)))
    with pytest.raises(InvalidParameterError):
        PhaseModel(1.0, np.zeros((1, M)), np.zeros(M + 1))
    with pytest.raises(InvalidParameterError):
        simulate_phase_pair_common(pm, np.zeros(M - 1), [0.0, 0.0], 1.0, 0.01, seed=0)
