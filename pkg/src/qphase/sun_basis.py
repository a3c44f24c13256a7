"""Trace-orthonormal generalized Gell-Mann basis of su(N).

Generator order is fixed: every symmetric pair ``(j, k)`` with ``j < k`` in
row-major order, then the antisymmetric pairs in the same order, then the
``N - 1`` diagonal generators.  Coefficient vectors are therefore stable
across runs and can be written to disk.
"""

from dataclasses import dataclass

import numpy as np

from .errors import BasisError, DimensionMismatchError, InvalidDimensionError, NotHermitianError
from .hilbert import HERMITIAN_TOL, is_hermitian

TRACE_PROJECT_TOL = 1e-10


@dataclass(frozen=True)
class GeneratorBasis:
    dim: int
    generators: np.ndarray  # shape (N^2 - 1, N, N)
    labels: tuple

    def __len__(self):
        return self.generators.shape[0]

    def __getitem__(self, l):
        return self.generators[l]

    def gram(self) -> np.ndarray:
        """Matrix of ``Tr[E_l E_m]``; the identity for a valid basis."""
        E = self.generators
        return np.einsum("lij,mji->lm", E, E)


def _lambda_matrices(N):
    eye = np.eye(N)
    sym, anti, labels_s, labels_a = [], [], [], []
    for j in range(N):
        for k in range(j + 1, N):
            S = np.zeros((N, N), complex)
            S[j, k] = S[k, j] = 1.0
            A = np.zeros((N, N), complex)
            A[j, k] = -1j
            A[k, j] = 1j
            sym.append(S)
            anti.append(A)
            labels_s.append(f"sym({j},{k})")
            labels_a.append(f"asym({j},{k})")
    diag, labels_d = [], []
    for j in range(1, N):
        d = np.zeros(N)
        d[:j] = 1.0
        d[j] = -j
        diag.append(np.sqrt(2.0 / (j * (j + 1))) * np.diag(d).astype(complex))
        labels_d.append(f"diag({j})")
    return sym + anti + diag, labels_s + labels_a + labels_d


def build_generators(N: int) -> GeneratorBasis:
    if int(N) != N or N < 2:
        raise InvalidDimensionError(f"su(N) basis needs N >= 2, got {N!r}")
    lams, labels = _lambda_matrices(int(N))
    gens = np.array([L / np.sqrt(np.trace(L @ L).real) for L in lams])
    gens.setflags(write=False)
    return GeneratorBasis(int(N), gens, tuple(labels))


def check_basis(basis: GeneratorBasis, tol: float = 1e-12) -> None:
    """Raise :class:`BasisError` naming the first generator that breaks a contract."""
    N = basis.dim
    if len(basis) != N * N - 1:
        raise BasisError(f"expected {N * N - 1} generators, found {len(basis)}")
    for l, E in enumerate(basis.generators):
        if not is_hermitian(E, tol):
            raise BasisError(f"generator {l} ({basis.labels[l]}) is not Hermitian", index=l)
        if abs(np.trace(E)) > tol:
            raise BasisError(f"generator {l} ({basis.labels[l]}) is not traceless", index=l)
    err = np.abs(basis.gram() - np.eye(len(basis)))
    if err.max() > tol:
        l, m = np.unravel_index(np.argmax(err), err.shape)
        raise BasisError(
            f"Gram matrix deviates from identity at ({l},{m}) by {err[l, m]:.3g}", index=int(l)
        )


def decompose(H: np.ndarray, basis: GeneratorBasis) -> np.ndarray:
    """Real coefficients ``g_l = Tr[H E_l]`` of a traceless Hermitian ``H``.

    A residual trace up to 1e-10 is projected out; anything larger is an
    error rather than being silently dropped.
    """
    H = np.asarray(H, dtype=complex)
    if H.shape != (basis.dim, basis.dim):
        raise DimensionMismatchError(f"operator shape {H.shape} vs basis dimension {basis.dim}")
    if not is_hermitian(H, max(HERMITIAN_TOL, 1e-12 * np.abs(H).max(initial=0.0))):
        raise NotHermitianError("only Hermitian operators can be decomposed")
    tr = np.trace(H)
    if abs(tr) > TRACE_PROJECT_TOL:
        raise ValueError(f"operator has trace {tr:.3g}; remove it before decomposing")
    H = H - tr / basis.dim * np.eye(basis.dim)
    return np.einsum("ij,lji->l", H, basis.generators).real


def decompose_many(Hs: np.ndarray, basis: GeneratorBasis) -> np.ndarray:
    """Unchecked batched ``Tr[H E_l]`` for an ``(..., N, N)`` stack."""
    return np.einsum("...ij,lji->...l", Hs, basis.generators).real


def reconstruct(g, basis: GeneratorBasis) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.shape != (len(basis),):
        raise DimensionMismatchError(f"expected {len(basis)} coefficients, got shape {g.shape}")
    return np.tensordot(g, basis.generators, axes=1)
