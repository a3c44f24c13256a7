"""Truncated bosonic Hilbert-space primitives.

Operators are plain ``numpy`` complex arrays of shape ``(N, N)`` and pure
states are complex vectors of shape ``(N,)``.  Most helpers also accept a
batch of states stored column-wise as an ``(N, B)`` array, which is how the
integrators push many trajectories through the same dynamics at once.
"""

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    InvalidDimensionError,
    InvalidParameterError,
    InvalidStateError,
    NotHermitianError,
)

HERMITIAN_TOL = 1e-12
NORM_TOL = 1e-9


def _frozen(arr):
    arr = np.array(arr, dtype=complex)
    arr.setflags(write=False)
    return arr


def make_annihilation(N: int) -> np.ndarray:
    """Bosonic lowering operator truncated to the lowest ``N`` Fock levels."""
    if int(N) != N or N < 2:
        raise InvalidDimensionError(f"Fock truncation must be an integer >= 2, got {N!r}")
    return np.diag(np.sqrt(np.arange(1, N)), 1).astype(complex)


def make_creation(N: int) -> np.ndarray:
    return adjoint(make_annihilation(N))


def number_operator(N: int) -> np.ndarray:
    return np.diag(np.arange(N)).astype(complex)


def adjoint(O: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(O, -1, -2))


def commutator(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return A @ B - B @ A


def is_hermitian(O: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    O = np.asarray(O)
    if O.ndim != 2 or O.shape[0] != O.shape[1]:
        return False
    return bool(np.max(np.abs(O - adjoint(O)), initial=0.0) <= tol)


def check_hermitian(O, name="operator", tol=HERMITIAN_TOL):
    if not is_hermitian(O, tol):
        raise NotHermitianError(f"{name} is not Hermitian within {tol:g}")


def fock_state(N: int, n: int) -> np.ndarray:
    if not 0 <= n < N:
        raise InvalidDimensionError(f"Fock level {n} outside truncation {N}")
    psi = np.zeros(N, dtype=complex)
    psi[n] = 1.0
    return psi


def normalize(psi: np.ndarray) -> np.ndarray:
    """Return ``psi`` scaled to unit norm (column-wise for a batch)."""
    psi = np.asarray(psi, dtype=complex)
    nrm = np.linalg.norm(psi, axis=0)
    if np.any(nrm == 0) or not np.all(np.isfinite(nrm)):
        raise InvalidStateError("cannot normalize a zero or non-finite state")
    return psi / nrm


def check_state(psi, dim=None, tol=NORM_TOL):
    psi = np.asarray(psi)
    if dim is not None and psi.shape[0] != dim:
        raise DimensionMismatchError(f"state has dimension {psi.shape[0]}, expected {dim}")
    if np.max(np.abs(np.linalg.norm(psi, axis=0) - 1.0)) > tol:
        raise InvalidStateError("state is not normalized")


def expectation(O: np.ndarray, psi: np.ndarray) -> complex:
    """``<psi|O|psi>``; for an ``(N, B)`` batch returns a length-``B`` array."""
    O = np.asarray(O)
    psi = np.asarray(psi)
    if O.shape[-1] != psi.shape[0]:
        raise DimensionMismatchError(
            f"operator of dimension {O.shape[-1]} applied to state of dimension {psi.shape[0]}"
        )
    return np.sum(np.conj(psi) * (O @ psi), axis=0)


def overlap(psi: np.ndarray, phi: np.ndarray) -> complex:
    return np.sum(np.conj(psi) * phi, axis=0)


def physically_equal(psi, phi, tol: float = NORM_TOL) -> bool:
    """True when the two unit states differ only by a global phase."""
    return bool(np.all(np.abs(overlap(psi, phi)) >= 1.0 - tol))


@dataclass(frozen=True)
class OscillatorModel:
    """Hamiltonian plus an ordered list of jump operators on a common space.

    The arrays are copied and made read-only on construction, so instances
    can be shared freely between workers.
    """

    hamiltonian: np.ndarray
    jumps: tuple = ()
    labels: tuple = ()
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        H = _frozen(self.hamiltonian)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise InvalidDimensionError("Hamiltonian must be a square matrix")
        check_hermitian(H, "Hamiltonian")
        jumps = tuple(_frozen(L) for L in self.jumps)
        for k, L in enumerate(jumps):
            if L.shape != H.shape:
                raise DimensionMismatchError(
                    f"jump {k} has shape {L.shape}, Hamiltonian has {H.shape}"
                )
        labels = tuple(self.labels) or tuple(f"L{k + 1}" for k in range(len(jumps)))
        if len(labels) != len(jumps):
            raise InvalidParameterError("one label per jump operator is required")
        object.__setattr__(self, "hamiltonian", H)
        object.__setattr__(self, "jumps", jumps)
        object.__setattr__(self, "labels", labels)

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]

    @property
    def n_jumps(self) -> int:
        return len(self.jumps)

    def effective_hamiltonian(self) -> np.ndarray:
        """``H - (i/2) sum_k L_k^dag L_k``."""
        H = self.hamiltonian.copy()
        for L in self.jumps:
            H = H - 0.5j * adjoint(L) @ L
        return H

    def rotated(self, angles: Sequence[float]) -> "OscillatorModel":
        """Copy with every jump multiplied by ``exp(i * angle_k)``."""
        angles = np.broadcast_to(np.asarray(angles, dtype=float), (self.n_jumps,))
        return OscillatorModel(
            self.hamiltonian,
            tuple(np.exp(1j * lam) * L for lam, L in zip(angles, self.jumps)),
            self.labels,
            self.name,
            dict(self.params, angles=[float(x) for x in angles]),
        )

    def with_jumps(self, jumps, labels=()) -> "OscillatorModel":
        return OscillatorModel(self.hamiltonian, tuple(jumps), tuple(labels), self.name, dict(self.params))


def make_qvdp(N: int, delta: float, gamma_g: float, gamma_d: float) -> OscillatorModel:
    """Quantum van der Pol oscillator in a frame detuned by ``delta``.

    ``H = delta a^dag a`` with one-particle gain ``sqrt(gamma_g) a^dag`` and
    two-particle loss ``sqrt(gamma_d) a^2``.
    """
    if int(N) != N or N < 3:
        raise InvalidDimensionError(f"qvdP needs N >= 3, got {N!r}")
    if not (gamma_g > 0 and gamma_d > 0):
        raise InvalidParameterError("gain and loss rates must be positive")
    a = make_annihilation(N)
    ad = adjoint(a)
    return OscillatorModel(
        hamiltonian=delta * ad @ a,
        jumps=(np.sqrt(gamma_g) * ad, np.sqrt(gamma_d) * a @ a),
        labels=("gain", "loss"),
        name="qvdp",
        params={"N": int(N), "delta": float(delta), "gamma_g": float(gamma_g), "gamma_d": float(gamma_d)},
    )


def random_state(N: int, rng: np.random.Generator) -> np.ndarray:
    return normalize(rng.normal(size=N) + 1j * rng.normal(size=N))


def random_hermitian(N: int, rng: np.random.Generator, traceless: bool = False) -> np.ndarray:
    X = rng.normal(size=(N, N)) + 1j * rng.normal(size=(N, N))
    H = 0.5 * (X + adjoint(X))
    if traceless:
        H = H - np.trace(H) / N * np.eye(N)
    return H
