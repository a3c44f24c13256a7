"""Phase response curves on a limit cycle.

Two independent routes compute the PRC ``Z_H(theta)`` of a unitary kick
``exp(-i g H)``:

* :func:`prc_directional` differences the isochrone phase returned by
  :func:`~qphase.limit_cycle.asymptotic_phase` (slow; used as the oracle);
* :func:`phase_gradient` builds the gradient of the asymptotic phase on the
  whole grid from the monodromy matrix of the cycle, after which any PRC is
  a contraction ``Re <zeta(theta)| -i H psi0(theta)>``.
"""

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import DimensionMismatchError, NotConvergedError
from .hilbert import OscillatorModel, adjoint, check_hermitian, check_state, expectation
from .limit_cycle import TWO_PI, LimitCycle, asymptotic_phase
from .sun_basis import GeneratorBasis, decompose_many

SQRT_HALF = np.sqrt(0.5)


def hermitianize(B, psi) -> np.ndarray:
    """Hermitian ``H_B = (B - <B>)|psi><psi| + h.c.`` with ``H_B psi = (B - <B>) psi``.

    ``B`` may be a matrix or a callable returning one for the given state.
    """
    psi = np.asarray(psi, dtype=complex)
    check_state(psi)
    B = np.asarray(B(psi) if callable(B) else B, dtype=complex)
    if B.shape != (psi.size, psi.size):
        raise DimensionMismatchError(f"operator shape {B.shape} vs state dimension {psi.size}")
    chi = B @ psi - expectation(B, psi) * psi
    K = np.outer(chi, psi.conj())
    return K + adjoint(K)


def stochastic_hermitians(L, psi):
    """The two traceless Hermitian operators carrying heterodyne backaction.

    With ``dW~ = (dW1 + i dW2)/sqrt(2)`` they satisfy
    ``-i H1 psi dW1 - i H2 psi dW2 = (L - <L>) psi dW~*``.
    """
    psi = np.asarray(psi, dtype=complex)
    check_state(psi)
    L = np.asarray(L, dtype=complex)
    if L.shape != (psi.size, psi.size):
        raise DimensionMismatchError(f"operator shape {L.shape} vs state dimension {psi.size}")
    chi = L @ psi - expectation(L, psi) * psi
    K = SQRT_HALF * np.outer(chi, psi.conj())
    H1 = 1j * K + adjoint(1j * K)
    H2 = K + adjoint(K)
    return H1, H2


def _real(z):
    return np.concatenate([z.real, z.imag], axis=0)


def _complex(x):
    n = x.shape[0] // 2
    return x[:n] + 1j * x[n:]


def _rot(alpha, N):
    """Real representation of multiplication by ``exp(i alpha)``."""
    c, s = np.cos(alpha), np.sin(alpha)
    eye = np.eye(N)
    return np.block([[c * eye, -s * eye], [s * eye, c * eye]])


def phase_gradient(lc: LimitCycle) -> np.ndarray:
    """Gradient ``zeta(theta_j)`` of the asymptotic phase at every grid state.

    Returned as an ``(M, N)`` complex array such that a small displacement
    ``delta`` of ``states[j]`` changes the phase by ``Re(zeta_j^dag delta)``.
    The gradient at ``theta = 0`` is the left Floquet vector of the
    one-period map with unit multiplier, pinned by three conditions: it
    annihilates the norm and global-phase directions and returns ``omega``
    along the flow.  It is then carried backwards through the per-cell
    transition matrices, which is numerically stable because the cycle is
    attracting.
    """
    if "phase_gradient" in lc._cache:
        return lc._cache["phase_gradient"]
    flow = lc.flow
    N, M, s, dt = lc.dim, lc.grid_size, lc.substeps, lc.dt
    tangent0 = np.hstack([np.eye(N), 1j * np.eye(N)]).astype(complex)
    psi = lc.states[0][:, None].copy()
    cells = np.empty((M, 2 * N, 2 * N))
    raw = np.empty((M + 1, N), complex)
    raw[0] = psi[:, 0]
    for j in range(M):
        d = tangent0.copy()
        for _ in range(s):
            psi, d = flow.rk4_tangent_step(psi, d, dt)
            nrm = np.linalg.norm(psi)
            psi = psi / nrm
            d = d / nrm
        cells[j] = _real(d)
        raw[j + 1] = psi[:, 0]
    alpha = np.angle(np.vdot(lc.states[0], raw[M]))
    mono = np.eye(2 * N)
    for j in range(M):
        mono = cells[j] @ mono
    P = _rot(-alpha, N) @ mono
    # flow, global phase and norm directions carry unit multipliers; any other
    # neutral direction means the orbit is not isolated and the phase is undefined
    neutral = int(np.sum(np.abs(np.linalg.eigvals(P)) > 1.0 - 1e-6))
    if neutral > 3:
        raise NotConvergedError(f"periodic orbit is not attracting ({neutral} unit Floquet multipliers)")
    psi0 = lc.states[0][:, None]
    F0 = flow.rhs(psi0)
    A = np.vstack([(P - np.eye(2 * N)).T, _real(psi0).T, _real(1j * psi0).T, _real(F0).T])
    b = np.zeros(2 * N + 3)
    b[-1] = lc.frequency
    zeta0 = np.linalg.lstsq(A, b, rcond=None)[0]

    grads = np.empty((M, N), complex)
    z = _rot(alpha, N) @ zeta0
    for j in range(M - 1, -1, -1):
        z = cells[j].T @ z
        # raw[j] = exp(i beta_j) states[j]; rotate the gradient back to the stored gauge
        beta = np.angle(np.vdot(lc.states[j], raw[j]))
        grads[j] = np.exp(-1j * beta) * _complex(z)
    grads.setflags(write=False)
    lc._cache["phase_gradient"] = grads
    return grads


def prc_along(lc: LimitCycle, H) -> np.ndarray:
    """PRC of ``exp(-i g H)`` on the grid, from the phase gradient."""
    H = np.asarray(H, dtype=complex)
    check_hermitian(H, "perturbation", tol=1e-10)
    zeta = phase_gradient(lc)
    kicks = -1j * lc.states @ H.T
    return np.real(np.sum(zeta.conj() * kicks, axis=1))


def _displacement_response(lc, vectors):
    """``Re <zeta_j | v_j>`` for an ``(M, N)`` array of displacements."""
    return np.real(np.sum(phase_gradient(lc).conj() * vectors, axis=-1))


def prc_directional(lc: LimitCycle, H, theta, g: float = 1e-3, check: bool = False, **iso):
    """Brute-force PRC by central differences of the isochrone phase.

    ``theta`` may be a scalar or an array.  With ``check=True`` the value is
    recomputed at ``g/2`` and a :class:`NotConvergedError` is raised if the
    two differ by more than 1e-3 relative.
    """
    H = np.asarray(H, dtype=complex)
    check_hermitian(H, "perturbation", tol=1e-10)
    thetas = np.atleast_1d(np.asarray(theta, dtype=float))

    def estimate(step):
        Up, Um = expm(-1j * step * H), expm(1j * step * H)
        base = np.array([lc.state_at(t) for t in thetas]).T
        batch = np.hstack([Up @ base, Um @ base])
        ph = asymptotic_phase(batch, lc, **iso)
        n = thetas.size
        return np.angle(np.exp(1j * (ph[:n] - ph[n:]))) / (2.0 * step)

    Z = estimate(g)
    if check:
        Z2 = estimate(0.5 * g)
        scale = max(np.max(np.abs(Z)), 1e-12)
        if np.max(np.abs(Z - Z2)) > 1e-3 * scale:
            raise NotConvergedError("PRC differences at g and g/2 disagree beyond 1e-3")
    return float(Z[0]) if np.ndim(theta) == 0 else Z


def harmonic_fit(curve, mode: int, with_constant: bool = False) -> dict:
    """Least-squares fit ``A sin(mode*theta + phi) (+ c)`` on a uniform grid.

    ``residual`` is the largest pointwise misfit divided by ``A``.
    """
    y = np.asarray(curve, dtype=float)
    th = TWO_PI * np.arange(y.size) / y.size
    cols = [np.sin(mode * th), np.cos(mode * th)] + ([np.ones_like(th)] if with_constant else [])
    X = np.column_stack(cols)
    coef = np.linalg.lstsq(X, y, rcond=None)[0]
    amp = float(np.hypot(coef[0], coef[1]))
    fit = X @ coef
    return {
        "mode": int(mode),
        "amplitude": amp,
        "offset": float(np.arctan2(coef[1], coef[0])),
        "constant": float(coef[2]) if with_constant else 0.0,
        "residual": float(np.max(np.abs(y - fit)) / amp) if amp > 0 else float("inf"),
    }


def dominant_mode(curve) -> int:
    c = np.abs(np.fft.rfft(np.asarray(curve, dtype=float)))
    return int(np.argmax(c))


@dataclass
class PRCTable:
    """Phase response and backaction curves sampled on the cycle grid."""

    thetas: np.ndarray
    frequency: float
    directional: dict = field(default_factory=dict)
    generator_curves: np.ndarray = None  # (M, N^2 - 1)
    backaction: dict = field(default_factory=dict)  # "Y_km" -> (M,)

    @property
    def grid_size(self):
        return self.thetas.size

    def backaction_matrix(self) -> np.ndarray:
        """All ``Y_km`` curves as rows, ordered ``Y_11, Y_12, Y_21, ...``."""
        return np.array([self.backaction[k] for k in sorted(self.backaction)]).reshape(-1, self.grid_size)

    def noise_variance(self) -> np.ndarray:
        """``sum_km Y_km(theta)^2``, the phase-diffusion rate at each grid point."""
        if not self.backaction:
            return np.zeros(self.grid_size)
        return np.sum(self.backaction_matrix() ** 2, axis=0)

    def backaction_strengths(self) -> dict:
        """Per-jump amplitude ``v_k`` with single-harmonic fits of both quadratures."""
        out = {}
        jumps = sorted({key.split("_")[1][:-1] for key in self.backaction})
        total = 0.0
        for k in jumps:
            y1, y2 = self.backaction[f"Y_{k}1"], self.backaction[f"Y_{k}2"]
            v = float(np.sqrt(np.mean(y1**2 + y2**2)))
            total += v**2
            m = dominant_mode(y1)
            out[k] = {
                "v": v,
                "mode": m,
                "fit_1": harmonic_fit(y1, m) if m > 0 else None,
                "fit_2": harmonic_fit(y2, m) if m > 0 else None,
            }
        out["v"] = float(np.sqrt(total))
        return out

    def columns(self) -> dict:
        cols = {"theta": self.thetas}
        for name in sorted(self.directional):
            cols[f"Z[{name}]"] = self.directional[name]
        for name in sorted(self.backaction):
            cols[name] = self.backaction[name]
        if self.generator_curves is not None:
            for l in range(self.generator_curves.shape[1]):
                cols[f"Z_{l + 1}"] = self.generator_curves[:, l]
        return cols

    def to_csv(self, path=None) -> str:
        cols = self.columns()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(cols))
        for row in zip(*cols.values()):
            w.writerow([repr(float(x)) for x in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def to_dict(self) -> dict:
        return {
            "format": "qphase.prc_table/1",
            "frequency": self.frequency,
            "thetas": self.thetas.tolist(),
            "directional": {k: np.asarray(v).tolist() for k, v in sorted(self.directional.items())},
            "backaction": {k: np.asarray(v).tolist() for k, v in sorted(self.backaction.items())},
            "generator_curves": None if self.generator_curves is None else self.generator_curves.tolist(),
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)

    @classmethod
    def from_dict(cls, data) -> "PRCTable":
        if data.get("format") != "qphase.prc_table/1":
            raise ValueError("not a qphase PRC table")
        gen = data.get("generator_curves")
        return cls(
            np.array(data["thetas"]),
            float(data["frequency"]),
            {k: np.array(v) for k, v in data["directional"].items()},
            None if gen is None else np.array(gen),
            {k: np.array(v) for k, v in data["backaction"].items()},
        )

    @classmethod
    def load(cls, path) -> "PRCTable":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def from_csv(cls, path, frequency: float) -> "PRCTable":
        """Rebuild a table from :meth:`to_csv` output (the frequency is not stored there)."""
        with open(path) as fh:
            rows = list(csv.reader(fh))
        head, data = rows[0], np.array(rows[1:], dtype=float)
        table = cls(data[:, 0], frequency)
        gens = []
        for i, name in enumerate(head[1:], start=1):
            if name.startswith("Z["):
                table.directional[name[2:-1]] = data[:, i]
            elif name.startswith("Y_"):
                table.backaction[name] = data[:, i]
            elif name.startswith("Z_"):
                gens.append(data[:, i])
        if gens:
            table.generator_curves = np.column_stack(gens)
        return table


def prc_table(lc: LimitCycle, basis: GeneratorBasis, method: str = "adjoint", **iso) -> PRCTable:
    """Generator PRCs ``Z_l(theta_j)`` for the whole basis.

    ``method="adjoint"`` uses :func:`phase_gradient`; ``method="isochrone"``
    differences the isochrone phase for all ``M (N^2 - 1)`` kicks (expensive).
    """
    if basis.dim != lc.dim:
        raise DimensionMismatchError(f"basis dimension {basis.dim} vs cycle dimension {lc.dim}")
    if method == "adjoint":
        zeta = phase_gradient(lc)
        kicks = -1j * np.einsum("lab,mb->mla", basis.generators, lc.states)
        Z = np.real(np.einsum("ma,mla->ml", zeta.conj(), kicks))
    elif method == "isochrone":
        Z = np.empty((lc.grid_size, len(basis)))
        for l, E in enumerate(basis.generators):
            Z[:, l] = prc_directional(lc, E, lc.thetas, **iso)
    else:
        raise ValueError(f"unknown PRC method {method!r}")
    return PRCTable(lc.thetas.copy(), lc.frequency, generator_curves=Z)


def backaction_coeffs(
    lc: LimitCycle, model: OscillatorModel = None, basis: GeneratorBasis = None, table: PRCTable = None
) -> PRCTable:
    """Backaction curves ``Y_km(theta) = sum_l Z_l(theta) g_km,l(theta)``.

    ``g_km,l = Tr[H_km E_l]`` are the generator coefficients of the
    heterodyne backaction operators at ``psi0(theta)``.  Without a basis the
    same contraction is taken directly against the phase gradient.
    """
    model = model or lc.model
    if model.dim != lc.dim:
        raise DimensionMismatchError("model and cycle dimensions differ")
    table = table or PRCTable(lc.thetas.copy(), lc.frequency)
    if basis is not None and table.generator_curves is None:
        table.generator_curves = prc_table(lc, basis).generator_curves
    for k, L in enumerate(model.jumps, start=1):
        pairs = [stochastic_hermitians(L, psi) for psi in lc.states]
        for m in (1, 2):
            Hs = np.array([p[m - 1] for p in pairs])
            if basis is not None:
                g = decompose_many(Hs, basis)  # (M, N^2 - 1)
                Y = np.sum(table.generator_curves * g, axis=1)
            else:
                Y = _displacement_response(lc, -1j * np.einsum("mab,mb->ma", Hs, lc.states))
            table.backaction[f"Y_{k}{m}"] = Y
    return table


def homodyne_difference_generator(model: OscillatorModel, angles, psi):
    """Hermitian generators of the homodyne-minus-heterodyne dynamics at ``psi``.

    Returns ``(H_drift, [H_1, ..., H_K])``.  ``-i H_drift psi`` reproduces
    the drift ``sum_k -(1/2)(L_k^2 - <L_k^2>) + <L_k>(L_k - <L_k>)`` and
    ``-i H_k psi = (L_k - <L_k>) psi`` multiplies ``dW_k``.  Jumps are
    rotated by ``exp(i angles_k)`` first.
    """
    psi = np.asarray(psi, dtype=complex)
    check_state(psi, model.dim)
    rotated = model.rotated(angles) if model.n_jumps else model
    drift, stoch = _homodyne_parts(rotated, psi)
    H_drift = np.zeros((model.dim, model.dim), complex)
    for D in drift:
        H_drift = H_drift + hermitianize(1j * D, psi)
    H_stoch = []
    for L in rotated.jumps:
        chi = L @ psi - expectation(L, psi) * psi
        K = 1j * np.outer(chi, psi.conj())
        H_stoch.append(K + adjoint(K))
    return H_drift, H_stoch


def _homodyne_parts(model, psi):
    drift = []
    for L in model.jumps:
        eL = expectation(L, psi)
        L2 = L @ L
        drift.append(-0.5 * (L2 - expectation(L2, psi) * np.eye(model.dim)) + eL * (L - eL * np.eye(model.dim)))
    return drift, list(model.jumps)


def homodyne_difference_prcs(lc: LimitCycle, angles=0.0, model: OscillatorModel = None) -> dict:
    """Per-jump PRC curves of the homodyne backaction in cycle phase coordinates.

    Keys ``drift_<k>`` give the deterministic part, ``stoch_<k>`` the
    coefficient of ``dW_k``.
    """
    model = (model or lc.model)
    rotated = model.rotated(angles) if model.n_jumps else model
    out = {}
    for k in range(1, model.n_jumps + 1):
        out[f"drift_{k}"] = np.empty(lc.grid_size)
        out[f"stoch_{k}"] = np.empty(lc.grid_size)
    zeta = phase_gradient(lc)
    for j, psi in enumerate(lc.states):
        drift, jumps = _homodyne_parts(rotated, psi)
        for k, (D, L) in enumerate(zip(drift, jumps), start=1):
            Hd = hermitianize(1j * D, psi)
            chi = L @ psi - expectation(L, psi) * psi
            K = 1j * np.outer(chi, psi.conj())
            Hs = K + adjoint(K)
            out[f"drift_{k}"][j] = np.real(np.vdot(zeta[j], -1j * Hd @ psi))
            out[f"stoch_{k}"][j] = np.real(np.vdot(zeta[j], -1j * Hs @ psi))
    return out
