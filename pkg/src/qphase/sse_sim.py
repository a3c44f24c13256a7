"""Quantum trajectories of the homodyne and heterodyne stochastic Schroedinger equations.

Both unravellings are integrated in Stratonovich form with the Euler-Heun
predictor-corrector and renormalized every step.  Trajectories are
propagated as column batches; every trajectory owns its random stream so a
result depends only on ``(master_seed, trajectory_index)``.

Heterodyne (fast local-oscillator rotation limit)::

    dpsi = [-i H_eff + sum_k (1/2)<L_k^dag L_k> + <L_k^dag>(L_k - <L_k>)] psi dt
           + sum_k (L_k - <L_k>) psi o dW~_k^*

Homodyne::

    dpsi = [-i H + sum_k -(1/2)(X_k L_k - <X_k L_k>) + <X_k>(L_k - <L_k>)] psi dt
           + sum_k (L_k - <L_k>) psi o dW_k,      X_k = L_k + L_k^dag

An optional Hermitian noise adds ``-i s S_N psi o dW_N``.
"""

import csv
import io
import json
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import DimensionMismatchError, IntegrationDivergedError, InvalidParameterError, InvalidStateError
from .hilbert import OscillatorModel, adjoint, check_hermitian, check_state, normalize
from .limit_cycle import DeterministicFlow, LimitCycle, asymptotic_phase
from .streams import COMMON, MEASUREMENT, WienerSource, stream

SQRT_HALF = np.sqrt(0.5)


@dataclass(frozen=True)
class NoiseSpec:
    """Hermitian noise ``strength * operator o xi_N(t)``; ``shared`` couples a pair."""

    operator: np.ndarray
    strength: float = 1.0
    shared: bool = True

    def __post_init__(self):
        op = np.array(self.operator, dtype=complex)
        check_hermitian(op, "noise operator", tol=1e-10)
        op.setflags(write=False)
        object.__setattr__(self, "operator", op)


@dataclass
class TrajectoryRecord:
    """One trajectory: measurement currents every step and sampled states.

    ``currents`` has shape ``(n_steps, K)``; complex ``<L_k> + xi~_k`` for
    heterodyne, real ``<X_k> + xi_k`` for homodyne.  ``phases`` is filled by
    :func:`attach_phases`.
    """

    seed: int
    times: np.ndarray
    currents: np.ndarray
    sample_times: np.ndarray
    states: np.ndarray
    detection: str = "heterodyne"
    index: int = 0
    phases: np.ndarray = None

    def to_csv(self, path=None) -> str:
        """Columns: time, phase (sampled rows only, blank elsewhere), current components."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        K = self.currents.shape[1] if self.currents.size else 0
        head = ["time", "phase"]
        for k in range(1, K + 1):
            head += [f"J{k}_re", f"J{k}_im"] if self.detection == "heterodyne" else [f"J{k}"]
        w.writerow(head)
        phase_at = {}
        if self.phases is not None:
            phase_at = {round(float(t) / self._dt()): p for t, p in zip(self.sample_times, self.phases)}
        for i, t in enumerate(self.times):
            row = [repr(float(t))]
            p = phase_at.get(round(float(t) / self._dt()))
            row.append("" if p is None else repr(float(p)))
            for z in self.currents[i]:
                row += [repr(float(z.real)), repr(float(z.imag))] if self.detection == "heterodyne" else [repr(float(np.real(z)))]
            w.writerow(row)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def _dt(self):
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 1.0

    # binary layout: magic b"QPTR", then little-endian header
    # <I version, I dim, I n_steps, I n_jumps, I n_samples, I hetero_flag, Q seed, Q index>
    # followed by float64 arrays: times, currents (re,im interleaved), sample_times,
    # states (re,im interleaved), phases (NaN-filled if absent).
    _HEADER = "<IIIIIIQQ"

    def to_binary(self, path) -> None:
        K = self.currents.shape[1] if self.currents.ndim == 2 else 0
        S, N = self.states.shape
        cur = np.asarray(self.currents, dtype=complex)
        phases = self.phases if self.phases is not None else np.full(S, np.nan)
        with open(path, "wb") as fh:
            fh.write(b"QPTR")
            fh.write(struct.pack(self._HEADER, 1, N, self.times.size, K, S, self.detection == "heterodyne", self.seed, self.index))
            for arr in (self.times, cur.view(float).ravel(), self.sample_times, self.states.view(float).ravel(), phases):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    @classmethod
    def from_binary(cls, path) -> "TrajectoryRecord":
        with open(path, "rb") as fh:
            if fh.read(4) != b"QPTR":
                raise ValueError("not a qphase trajectory file")
            size = struct.calcsize(cls._HEADER)
            _, N, n, K, S, het, seed, index = struct.unpack(cls._HEADER, fh.read(size))
            data = np.frombuffer(fh.read(), dtype="<f8")
        pos = 0

        def take(count):
            nonlocal pos
            out = data[pos : pos + count]
            pos += count
            return out

        times = take(n).copy()
        cur = take(2 * n * K).copy().view(complex).reshape(n, K)
        sample_times = take(S).copy()
        states = take(2 * S * N).copy().view(complex).reshape(S, N)
        phases = take(S).copy()
        return cls(
            int(seed), times, cur if het else cur.real.copy(), sample_times, states,
            "heterodyne" if het else "homodyne", int(index), None if np.all(np.isnan(phases)) else phases,
        )


@dataclass
class Ensemble:
    """Sampled states of many trajectories: ``states[s, i]`` at ``sample_times[s]``."""

    master_seed: int
    sample_times: np.ndarray
    states: np.ndarray  # (S, n_traj, N)
    detection: str = "heterodyne"
    meta: dict = field(default_factory=dict)

    @property
    def n_traj(self):
        return self.states.shape[1]

    def density_matrix(self, sample: int = -1) -> np.ndarray:
        psi = self.states[sample]
        return np.einsum("bi,bj->ij", psi, psi.conj()) / psi.shape[0]


class _Kernel:
    def __init__(self, model: OscillatorModel, detection: str, angles=None, noise: NoiseSpec = None):
        if detection not in ("heterodyne", "homodyne"):
            raise InvalidParameterError(f"unknown detection scheme {detection!r}")
        if angles is not None and model.n_jumps:
            model = model.rotated(angles)
        self.model = model
        self.detection = detection
        N = model.dim
        K = model.n_jumps
        self.L = np.array(model.jumps) if K else np.zeros((0, N, N), complex)
        self.Ld = adjoint(self.L)
        H = model.hamiltonian
        if detection == "heterodyne":
            self.A0 = -1j * model.effective_hamiltonian()
            self.XL = None
        else:
            self.A0 = -1j * H - 0.5 * sum((L @ L + adjoint(L) @ L for L in model.jumps), np.zeros((N, N), complex))
            self.XL = np.array([L @ L + adjoint(L) @ L for L in model.jumps]) if K else None
        self.noise = None
        if noise is not None:
            if noise.operator.shape != (N, N):
                raise DimensionMismatchError("noise operator dimension does not match the model")
            self.noise = -1j * noise.strength * noise.operator
        self.n_meas = (2 * K) if detection == "heterodyne" else K

    def terms(self, psi):
        """Drift, per-jump innovation vectors and <L_k> (all normalized)."""
        nrm = np.sum(np.abs(psi) ** 2, axis=0)
        drift = self.A0 @ psi
        if not len(self.L):
            return drift, None, None
        Lp = self.L @ psi
        eL = np.sum(np.conj(psi) * Lp, axis=1) / nrm  # (K, B)
        chi = Lp - eL[:, None, :] * psi[None]
        if self.detection == "heterodyne":
            eLL = np.sum(np.abs(Lp) ** 2, axis=1) / nrm
            drift = drift + np.sum(0.5 * eLL, axis=0) * psi + np.sum(np.conj(eL)[:, None, :] * chi, axis=0)
        else:
            eXL = np.sum(np.conj(psi)[None] * (self.XL @ psi), axis=1) / nrm
            eX = 2.0 * eL.real
            drift = drift + np.sum(0.5 * eXL, axis=0) * psi + np.sum(eX[:, None, :] * chi, axis=0)
        return drift, chi, eL

    def kick(self, psi, chi, dw_meas, dw_noise):
        if chi is None:
            out = 0.0
        elif self.detection == "heterodyne":
            K = chi.shape[0]
            c = SQRT_HALF * (dw_meas[:K] - 1j * dw_meas[K:])  # dW~^*
            out = np.einsum("knb,kb->nb", chi, c)
        else:
            out = np.einsum("knb,kb->nb", chi, dw_meas)
        if self.noise is not None:
            out = out + (self.noise @ psi) * dw_noise
        return out


def _integrate(*args, **kw):
    # overflow is detected and reported with its step index below
    with np.errstate(over="ignore", invalid="ignore"):
        return _integrate_steps(*args, **kw)


def _integrate_steps(kernel, psi, n_steps, meas, common, dt, sample_stride, record_currents, pair_map=None):
    """Euler-Heun loop over a column batch.

    ``common`` yields one shared increment per noise group; ``pair_map``
    maps trajectory columns onto those groups.
    """
    B = psi.shape[1]
    K = kernel.model.n_jumps
    samples = [psi.copy()]
    currents = np.empty((n_steps, K, B), complex) if record_currents else None
    if not kernel.n_meas and kernel.noise is None:
        # nothing stochastic left: use the higher-order deterministic stepper
        flow = DeterministicFlow(kernel.model)
        for step in range(n_steps):
            psi = flow.rk4_step(psi, dt)
            if (step + 1) % sample_stride == 0:
                samples.append(psi.copy())
        return np.array(samples), currents
    for step in range(n_steps):
        dw = meas.next() if kernel.n_meas else None
        dn = None
        if kernel.noise is not None:
            dn = common.next()[0]
            dn = dn[pair_map] if pair_map is not None else dn
        f0, chi0, eL = kernel.terms(psi)
        g0 = kernel.kick(psi, chi0, dw, dn)
        pred = psi + f0 * dt + g0
        f1, chi1, _ = kernel.terms(pred)
        g1 = kernel.kick(pred, chi1, dw, dn)
        psi = psi + 0.5 * (f0 + f1) * dt + 0.5 * (g0 + g1)
        nrm = np.linalg.norm(psi, axis=0)
        if not np.all(np.isfinite(nrm)):
            raise IntegrationDivergedError("stochastic integration diverged", step=step)
        psi = psi / nrm
        if record_currents and K:
            if kernel.detection == "heterodyne":
                currents[step] = eL + SQRT_HALF * (dw[:K] + 1j * dw[K:]) / dt
            else:
                currents[step] = 2.0 * eL.real + dw / dt
        if (step + 1) % sample_stride == 0:
            samples.append(psi.copy())
    return np.array(samples), currents


def _prepare(model, psi_init, t_end, dt):
    if dt <= 0 or t_end <= 0:
        raise InvalidParameterError("dt and t_end must be positive")
    psi = np.asarray(psi_init, dtype=complex)
    if psi.ndim == 2:
        for col in psi.T:
            check_state(col, model.dim)
    else:
        check_state(psi, model.dim)
    n_steps = int(round(t_end / dt))
    if abs(n_steps * dt - t_end) > 1e-9 * max(t_end, 1.0):
        raise InvalidParameterError("t_end must be an integer multiple of dt")
    return psi, n_steps


def _simulate_single(model, detection, angles, psi_init, t_end, dt, seed, noise, sample_stride, index, noise_substeps):
    psi, n_steps = _prepare(model, psi_init, t_end, dt)
    kernel = _Kernel(model, detection, angles, noise)
    meas = WienerSource([stream(seed, index, MEASUREMENT)], kernel.n_meas, dt, noise_substeps)
    common = WienerSource([stream(seed, index, COMMON)], 1, dt, noise_substeps)
    samples, currents = _integrate(kernel, psi[:, None], n_steps, meas, common, dt, sample_stride, True)
    times = dt * np.arange(1, n_steps + 1)
    sample_times = dt * sample_stride * np.arange(samples.shape[0])
    cur = currents[:, :, 0]
    if detection == "homodyne":
        cur = cur.real.copy()
    return TrajectoryRecord(int(seed), times, cur, sample_times, samples[:, :, 0], detection, index)


def simulate_heterodyne(model, psi_init, t_end, dt, seed, noise: NoiseSpec = None, sample_stride=100, index=0, noise_substeps=1):
    """Single heterodyne trajectory; identical arguments give bit-identical records."""
    return _simulate_single(model, "heterodyne", None, psi_init, t_end, dt, seed, noise, sample_stride, index, noise_substeps)


def simulate_homodyne(model, angles, psi_init, t_end, dt, seed, noise: NoiseSpec = None, sample_stride=100, index=0, noise_substeps=1):
    """Single homodyne trajectory measuring the quadratures of ``exp(i angles_k) L_k``."""
    return _simulate_single(model, "homodyne", angles, psi_init, t_end, dt, seed, noise, sample_stride, index, noise_substeps)


def _ensemble_chunk(args):
    (model, detection, angles, psi, n_steps, dt, seed, noise, stride, indices, pair_ids, noise_substeps) = args
    kernel = _Kernel(model, detection, angles, noise)
    meas = WienerSource([stream(seed, i, MEASUREMENT) for i in indices], kernel.n_meas, dt, noise_substeps)
    groups = sorted(set(pair_ids))
    common = WienerSource([stream(seed, g, COMMON) for g in groups], 1, dt, noise_substeps)
    pair_map = np.searchsorted(groups, pair_ids)
    if psi.ndim == 2:
        batch = psi[:, indices].copy()
    else:
        batch = np.repeat(psi[:, None], len(indices), axis=1)
    samples, _ = _integrate(kernel, batch, n_steps, meas, common, dt, stride, False, pair_map)
    return samples


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("QPHASE_THREADS", "1")))
    except ValueError:
        return 1


def run_ensemble(
    model,
    psi_init,
    t_end,
    dt,
    n_traj,
    master_seed,
    detection="heterodyne",
    angles=None,
    noise: NoiseSpec = None,
    sample_stride=100,
    noise_substeps=1,
    chunk_size=250,
    workers=None,
    pairs=False,
) -> Ensemble:
    """Integrate ``n_traj`` trajectories.

    ``psi_init`` is one state shared by all trajectories or an
    ``(N, n_traj)`` array of per-trajectory initial states.
    Currents are not stored.  With ``pairs=True`` trajectories ``2i`` and
    ``2i+1`` share the Hermitian-noise increments of stream ``i``; otherwise
    each trajectory has its own.  Chunk boundaries are fixed by
    ``chunk_size`` alone, so the result does not depend on ``workers``.
    """
    psi, n_steps = _prepare(model, psi_init, t_end, dt)
    if psi.ndim == 2 and psi.shape[1] != n_traj:
        raise DimensionMismatchError("one initial state per trajectory is required")
    if pairs and chunk_size % 2:
        raise InvalidParameterError("chunk_size must be even for paired ensembles")
    idx = np.arange(int(n_traj))
    pair_ids = idx // 2 if pairs else idx
    jobs = [
        (model, detection, angles, psi, n_steps, dt, master_seed, noise, sample_stride,
         idx[s : s + chunk_size].tolist(), pair_ids[s : s + chunk_size].tolist(), noise_substeps)
        for s in range(0, len(idx), chunk_size)
    ]
    workers = workers or default_workers()
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_ensemble_chunk, jobs))
    else:
        parts = [_ensemble_chunk(j) for j in jobs]
    samples = np.concatenate(parts, axis=2)  # (S, N, n_traj)
    states = np.transpose(samples, (0, 2, 1)).copy()
    times = dt * sample_stride * np.arange(states.shape[0])
    meta = {"dt": dt, "t_end": t_end, "n_traj": int(n_traj), "noise_substeps": noise_substeps, "pairs": pairs}
    return Ensemble(int(master_seed), times, states, detection, meta)


def simulate_pair_common_noise(
    model, S_N, t_end, dt, seed, detection="heterodyne", strength=1.0, psi_init=None, sample_stride=100
):
    """Two uncoupled copies driven by the same Hermitian noise path.

    Measurement noise is independent for each copy.  Returns two
    :class:`TrajectoryRecord` objects (currents every step).
    """
    noise = NoiseSpec(S_N, strength, shared=True)
    psi = _default_psi(model) if psi_init is None else psi_init
    psi, n_steps = _prepare(model, psi, t_end, dt)
    kernel = _Kernel(model, detection, None, noise)
    meas = WienerSource([stream(seed, 0, MEASUREMENT), stream(seed, 1, MEASUREMENT)], kernel.n_meas, dt)
    common = WienerSource([stream(seed, 0, COMMON)], 1, dt)
    batch = np.repeat(psi[:, None], 2, axis=1)
    samples, currents = _integrate(kernel, batch, n_steps, meas, common, dt, sample_stride, True, np.array([0, 0]))
    times = dt * np.arange(1, n_steps + 1)
    sample_times = dt * sample_stride * np.arange(samples.shape[0])
    recs = []
    for i in range(2):
        cur = currents[:, :, i]
        recs.append(TrajectoryRecord(int(seed), times, cur if detection == "heterodyne" else cur.real.copy(),
                                     sample_times, samples[:, :, i], detection, i))
    return recs[0], recs[1]


def _default_psi(model):
    from .limit_cycle import default_initial_state

    return default_initial_state(model.dim)


def attach_phases(record: TrajectoryRecord, lc: LimitCycle, **iso) -> TrajectoryRecord:
    record.phases = np.asarray(asymptotic_phase(record.states.T, lc, **iso))
    return record


def ensemble_phases(ens: Ensemble, lc: LimitCycle, start_sample: int = 0, **iso) -> np.ndarray:
    """Isochrone phases of all sampled states from ``start_sample`` on, shape ``(S', n_traj)``."""
    iso.setdefault("relax_periods", 4)
    iso.setdefault("steps_per_period", 128)
    iso.setdefault("max_periods", 200)
    st = ens.states[start_sample:]
    S, B, N = st.shape
    flat = st.reshape(S * B, N).T
    out = np.empty(S * B)
    step = 8192
    for s in range(0, S * B, step):
        out[s : s + step] = asymptotic_phase(flat[:, s : s + step], lc, **iso)
    return out.reshape(S, B)


def liouvillian(model: OscillatorModel) -> np.ndarray:
    """Superoperator acting on row-major ``vec(rho)``."""
    N = model.dim
    eye = np.eye(N)
    H = model.hamiltonian
    Lv = -1j * (np.kron(H, eye) - np.kron(eye, H.T))
    for L in model.jumps:
        LdL = adjoint(L) @ L
        Lv = Lv + np.kron(L, L.conj()) - 0.5 * (np.kron(LdL, eye) + np.kron(eye, LdL.T))
    return Lv


def check_density_matrix(rho, dim, tol=1e-10):
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (dim, dim):
        raise DimensionMismatchError(f"density matrix shape {rho.shape} vs dimension {dim}")
    if np.max(np.abs(rho - adjoint(rho))) > tol:
        raise InvalidStateError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1.0) > tol:
        raise InvalidStateError("density matrix does not have unit trace")
    if np.min(np.linalg.eigvalsh(0.5 * (rho + adjoint(rho)))) < -tol:
        raise InvalidStateError("density matrix is not positive semidefinite")
    return rho


def lindblad_evolve(model: OscillatorModel, rho, t: float) -> np.ndarray:
    """Exact propagation ``exp(L t) rho`` of the Lindblad equation."""
    N = model.dim
    rho = check_density_matrix(rho, N)
    out = (expm(liouvillian(model) * t) @ rho.reshape(-1)).reshape(N, N)
    return 0.5 * (out + adjoint(out))


def trace_distance(rho, sigma) -> float:
    d = np.asarray(rho) - np.asarray(sigma)
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(0.5 * (d + adjoint(d))))))


def ensemble_summary(ens: Ensemble) -> dict:
    return {
        "master_seed": ens.master_seed,
        "detection": ens.detection,
        "n_traj": ens.n_traj,
        "sample_times": [float(t) for t in ens.sample_times],
        **ens.meta,
    }


def save_summary(summary: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
