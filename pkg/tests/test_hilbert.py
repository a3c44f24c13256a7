import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qphase.errors import (
    DimensionMismatchError,
    InvalidDimensionError,
    InvalidParameterError,
    InvalidStateError,
    NotHermitianError,
)
from qphase.hilbert import (
    OscillatorModel,
    adjoint,
    check_state,
    commutator,
    expectation,
    fock_state,
    make_annihilation,
    make_creation,
    make_qvdp,
    normalize,
    number_operator,
    physically_equal,
    random_hermitian,
    random_state,
)


def test_ladder_operators_act_on_fock_states():
    N = 6
    a = make_annihilation(N)
    for n in range(1, N):
        assert np.allclose(a @ fock_state(N, n), np.sqrt(n) * fock_state(N, n - 1))
    assert np.allclose(make_creation(N) @ a, number_operator(N))


def test_commutator_is_identity_except_at_truncation_edge():
    N = 7
    a = make_annihilation(N)
    c = commutator(a, adjoint(a))
    expected = np.eye(N)
    expected[-1, -1] = -(N - 1)
    assert np.allclose(c, expected)


@pytest.mark.parametrize("N", [0, 1, 2.5])
def test_bad_truncation_rejected(N):
    with pytest.raises(InvalidDimensionError):
        make_annihilation(N)


def test_expectation_batched_matches_single(rng):
    N = 5
    O = random_hermitian(N, rng)
    batch = np.column_stack([random_state(N, rng) for _ in range(4)])
    single = [expectation(O, batch[:, b]) for b in range(4)]
    assert np.allclose(expectation(O, batch), single)
    with pytest.raises(DimensionMismatchError):
        expectation(O, np.ones(N + 1))


def test_normalize_and_check_state():
    with pytest.raises(InvalidStateError):
        normalize(np.zeros(3))
    with pytest.raises(InvalidStateError):
        check_state(np.array([1.0, 1.0]))
    check_state(normalize(np.array([1.0, 1.0j])))


def test_model_validation():
    N = 4
    with pytest.raises(NotHermitianError):
        OscillatorModel(make_annihilation(N))
    with pytest.raises(DimensionMismatchError):
        OscillatorModel(number_operator(N), (make_annihilation(N + 1),))
    with pytest.raises(InvalidParameterError):
        make_qvdp(10, 1.0, 0.0, 1.0)
    with pytest.raises(InvalidDimensionError):
        make_qvdp(2, 1.0, 0.2, 1.0)


def test_model_arrays_are_read_only(qvdp10):
    with pytest.raises(ValueError):
        qvdp10.hamiltonian[0, 0] = 1.0


def test_qvdp_structure(qvdp10):
    a = make_annihilation(10)
    assert np.allclose(qvdp10.hamiltonian, number_operator(10))
    assert np.allclose(qvdp10.jumps[0], np.sqrt(0.2) * adjoint(a))
    assert np.allclose(qvdp10.jumps[1], a @ a)
    Heff = qvdp10.effective_hamiltonian()
    assert np.allclose(Heff - adjoint(Heff), -1j * sum(adjoint(L) @ L for L in qvdp10.jumps))


def test_rotation_multiplies_jumps(qvdp10):
    rot = qvdp10.rotated([0.3, -1.1])
    assert np.allclose(rot.jumps[0], np.exp(0.3j) * qvdp10.jumps[0])
    assert np.allclose(rot.jumps[1], np.exp(-1.1j) * qvdp10.jumps[1])


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 8), st.floats(-np.pi, np.pi), st.integers(0, 2**32 - 1))
def test_global_phase_is_unphysical(N, phase, seed):
    psi = random_state(N, np.random.default_rng(seed))
    assert physically_equal(psi, np.exp(1j * phase) * psi)
    O = random_hermitian(N, np.random.default_rng(seed + 1))
    assert np.isclose(expectation(O, psi), expectation(O, np.exp(1j * phase) * psi))
    assert abs(expectation(O, psi).imag) < 1e-12
