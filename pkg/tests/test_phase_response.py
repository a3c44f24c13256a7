import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qphase.errors import NotConvergedError, NotHermitianError
from qphase.hilbert import OscillatorModel, adjoint, make_annihilation, number_operator, random_state
from qphase.limit_cycle import LimitCycle
from qphase.phase_response import (
    PRCTable,
    backaction_coeffs,
    dominant_mode,
    harmonic_fit,
    hermitianize,
    homodyne_difference_prcs,
    phase_gradient,
    prc_along,
    prc_directional,
    prc_table,
    stochastic_hermitians,
)
from qphase.sun_basis import build_generators, decompose

a = make_annihilation(10)
S1 = 1j * (a - adjoint(a))
S2 = 1j * (a @ a - adjoint(a @ a))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_hermitianize_reproduces_the_kick(seed):
    rng = np.random.default_rng(seed)
    N = 5
    psi = random_state(N, rng)
    B = rng.normal(size=(N, N)) + 1j * rng.normal(size=(N, N))
    H = hermitianize(B, psi)
    assert np.allclose(H, adjoint(H))
    eB = np.vdot(psi, B @ psi)
    assert np.allclose(H @ psi, B @ psi - eB * psi)


def test_stochastic_hermitians_are_hermitian(cycle10):
    for L in cycle10.model.jumps:
        for H in stochastic_hermitians(L, cycle10.states[5]):
            assert np.allclose(H, adjoint(H))


def test_adjoint_prc_matches_isochrone_differences(cycle10):
    idx = np.array([0, 37, 101, 190])
    for S in (S1, S2):
        Z = prc_along(cycle10, S)
        brute = prc_directional(cycle10, S, cycle10.thetas[idx], g=1e-3, relax_periods=6, steps_per_period=256)
        assert np.max(np.abs(Z[idx] - brute)) < 2e-3 * np.max(np.abs(Z))


def test_prc_shapes(cycle10):
    f1 = harmonic_fit(prc_along(cycle10, S1), 1)
    f2 = harmonic_fit(prc_along(cycle10, S2), 2)
    assert f1["residual"] < 1e-3 and f2["residual"] < 1e-3
    assert np.allclose([f1["amplitude"], f2["amplitude"]], [0.395961, 0.389701], atol=1e-4)
    # number-conserving perturbations only shift the phase uniformly
    Zn = prc_along(cycle10, number_operator(10))
    assert np.ptp(Zn) < 1e-6


def test_phase_gradient_normalization(cycle10):
    zeta = phase_gradient(cycle10)
    flow = cycle10.flow.rhs(cycle10.states.T).T
    assert np.allclose(np.real(np.sum(zeta.conj() * flow, axis=1)), cycle10.frequency, atol=1e-6)


def test_generator_route_equals_direct_route(cycle10):
    basis = build_generators(10)
    direct = backaction_coeffs(cycle10)
    via = backaction_coeffs(cycle10, basis=basis)
    for key in direct.backaction:
        assert np.allclose(direct.backaction[key], via.backaction[key], atol=1e-9)
    # generator expansion of a single perturbation
    table = prc_table(cycle10, basis)
    g = decompose(S1, basis)
    assert np.allclose(table.generator_curves @ g, prc_along(cycle10, S1), atol=1e-10)


def test_backaction_structure(backaction10):
    ba = backaction10.backaction_strengths()
    assert ba["1"]["mode"] == 1 and ba["2"]["mode"] == 2
    assert abs(ba["1"]["v"] - 0.375188) < 1e-4
    assert abs(ba["2"]["v"] - 0.120277) < 1e-4
    assert abs(ba["v"] - 0.393996) < 1e-4
    nv = backaction10.noise_variance()
    assert np.ptp(nv) / nv.mean() < 1e-6


def test_table_roundtrips(backaction10, cycle10, tmp_path):
    table = PRCTable(cycle10.thetas.copy(), cycle10.frequency, backaction=dict(backaction10.backaction))
    table.directional["i(a-adag)"] = prc_along(cycle10, S1)
    table.save(tmp_path / "t.json")
    back = PRCTable.load(tmp_path / "t.json")
    table.to_csv(tmp_path / "t.csv")
    back_csv = PRCTable.from_csv(tmp_path / "t.csv", cycle10.frequency)
    for other in (back, back_csv):
        assert np.array_equal(other.thetas, table.thetas)
        for k in table.backaction:
            assert np.array_equal(other.backaction[k], table.backaction[k])
        assert np.array_equal(other.directional["i(a-adag)"], table.directional["i(a-adag)"])


def test_homodyne_dominant_modes(cycle10):
    hd = homodyne_difference_prcs(cycle10, 0.0)
    assert dominant_mode(hd["stoch_1"]) == 1
    assert dominant_mode(hd["stoch_2"]) == 2
    assert dominant_mode(hd["drift_1"]) == 2
    assert dominant_mode(hd["drift_2"]) == 4


def test_homodyne_rotation_shifts_curves(cycle10):
    k = 20
    lam = 2 * np.pi * k / cycle10.grid_size
    base = homodyne_difference_prcs(cycle10, (0.0, 0.0))
    rot = homodyne_difference_prcs(cycle10, (lam, -2 * lam))
    for key in base:
        err = min(np.max(np.abs(rot[key] - np.roll(base[key], s))) for s in (k, -k))
        assert err < 1e-6


def test_errors(cycle10):
    with pytest.raises(NotHermitianError):
        prc_along(cycle10, a)
    empty = OscillatorModel(number_operator(4))
    psi = np.exp(-1j * np.outer(np.arange(32) * 2 * np.pi / 32, np.arange(4)))[:, :] @ np.diag([0.5, 0.5, 0.5, 0.5])
    lc = LimitCycle(empty, 2 * np.pi, psi)
    with pytest.raises(NotConvergedError):
        phase_gradient(lc)


def test_harmonic_fit_recovers_parameters():
    th = 2 * np.pi * np.arange(128) / 128
    fit = harmonic_fit(0.7 * np.sin(3 * th + 0.4) + 0.2, 3, with_constant=True)
    assert np.allclose([fit["amplitude"], fit["offset"], fit["constant"]], [0.7, 0.4, 0.2])
    assert fit["residual"] < 1e-12
