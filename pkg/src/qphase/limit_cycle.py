"""Noise-free Stratonovich dynamics, limit-cycle detection and isochrone phase.

The deterministic flow is

    dpsi/dt = [-i H_eff + sum_k (1/2)<L_k^dag L_k> + <L_k^dag>(L_k - <L_k>)] psi,

which preserves the norm exactly.  Everything here works on batches of
states stored column-wise so that isochrone evaluations for many perturbed
states share a single integration loop.
"""

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import (
    DimensionMismatchError,
    FixedPointDetectedError,
    IntegrationDivergedError,
    InvalidParameterError,
    NoCycleDetectedError,
    NotConvergedError,
)
from .hilbert import OscillatorModel, adjoint, check_state, fock_state, make_annihilation, normalize

TWO_PI = 2.0 * np.pi


class DeterministicFlow:
    """Right-hand side of the noise-free dynamics and its linearization.

    ``p`` selects the evaluation point of the stochastic calculus whose drift
    is kept: ``p=0.5`` (Stratonovich) is the norm-preserving limit-cycle
    dynamics, ``p=0`` is the Ito drift.
    """

    def __init__(self, model: OscillatorModel, p: float = 0.5):
        self.model = model
        self.p = float(p)
        N = model.dim
        self.A0 = -1j * model.effective_hamiltonian()
        self.L = np.array(model.jumps) if model.n_jumps else np.zeros((0, N, N), complex)
        self.stiffness = float(np.max(np.abs(np.linalg.eigvals(self.A0)), initial=0.0))

    def rhs(self, psi):
        """Drift for an ``(N, B)`` batch of (not necessarily unit) states."""
        nrm = np.sum(np.abs(psi) ** 2, axis=0)
        out = self.A0 @ psi
        if len(self.L):
            Lp = self.L @ psi  # (K, N, B)
            eL = np.sum(np.conj(psi) * Lp, axis=1) / nrm
            eLL = np.sum(np.abs(Lp) ** 2, axis=1) / nrm
            var = eLL - np.abs(eL) ** 2
            coef = np.sum(self.p * var - 0.5 * np.abs(eL) ** 2, axis=0)
            out = out + coef * psi + np.sum(np.conj(eL)[:, None, :] * Lp, axis=0)
        return out

    def jvp(self, psi, d):
        """Directional derivative of :meth:`rhs` at unit states ``psi`` along ``d``."""
        if self.p != 0.5:
            raise InvalidParameterError("linearization is only implemented for p = 1/2")
        out = self.A0 @ d
        if not len(self.L):
            return out
        Lp = self.L @ psi
        Ld = self.L @ d
        eL = np.sum(np.conj(psi) * Lp, axis=1)
        eLL = np.sum(np.abs(Lp) ** 2, axis=1)
        pd = 2.0 * np.real(np.sum(np.conj(psi) * d, axis=0))
        deL = np.sum(np.conj(psi) * Ld, axis=1) + np.sum(np.conj(d) * Lp, axis=1) - eL * pd
        deLL = 2.0 * np.real(np.sum(np.conj(Lp) * Ld, axis=1)) - eLL * pd
        c0 = np.sum(0.5 * eLL - np.abs(eL) ** 2, axis=0)
        c1 = np.sum(0.5 * deLL - 2.0 * np.real(np.conj(eL) * deL), axis=0)
        out = out + c0 * d + c1 * psi
        out = out + np.sum(np.conj(eL)[:, None, :] * Ld + np.conj(deL)[:, None, :] * Lp, axis=0)
        return out

    def rk4_step(self, psi, dt, renormalize=True):
        k1 = self.rhs(psi)
        k2 = self.rhs(psi + 0.5 * dt * k1)
        k3 = self.rhs(psi + 0.5 * dt * k2)
        k4 = self.rhs(psi + dt * k3)
        out = psi + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return out / np.linalg.norm(out, axis=0) if renormalize else out

    def evolve(self, psi, dt, n_steps, observe=None):
        """Fixed-step RK4 over ``n_steps`` steps with per-step renormalization.

        ``observe(step, psi)`` is called after every step when given.
        """
        for step in range(int(n_steps)):
            k1 = self.rhs(psi)
            k2 = self.rhs(psi + 0.5 * dt * k1)
            k3 = self.rhs(psi + 0.5 * dt * k2)
            k4 = self.rhs(psi + dt * k3)
            psi = psi + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            nrm = np.linalg.norm(psi, axis=0)
            if not np.all(np.isfinite(nrm)) or np.any(nrm == 0):
                raise IntegrationDivergedError("deterministic integration diverged", step=step)
            psi = psi / nrm
            if observe is not None:
                observe(step, psi)
        return psi

    def rk4_tangent_step(self, psi, d, dt):
        """One RK4 step of the state together with tangent vectors ``d``."""
        k1, l1 = self.rhs(psi), self.jvp(psi, d)
        y = psi + 0.5 * dt * k1
        k2, l2 = self.rhs(y), self.jvp(y, d + 0.5 * dt * l1)
        y = psi + 0.5 * dt * k2
        k3, l3 = self.rhs(y), self.jvp(y, d + 0.5 * dt * l2)
        y = psi + dt * k3
        k4, l4 = self.rhs(y), self.jvp(y, d + dt * l3)
        return (
            psi + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4),
            d + (dt / 6.0) * (l1 + 2 * l2 + 2 * l3 + l4),
        )


def _as_batch(psi):
    psi = np.asarray(psi, dtype=complex)
    return (psi[:, None], True) if psi.ndim == 1 else (psi, False)


def deterministic_step(model: OscillatorModel, psi, dt: float):
    """Advance ``psi`` by one RK4 step of the noise-free dynamics."""
    if dt <= 0:
        raise InvalidParameterError("dt must be positive")
    batch, single = _as_batch(psi)
    out = DeterministicFlow(model).evolve(batch, dt, 1)
    return out[:, 0] if single else out


def deterministic_evolve(model: OscillatorModel, psi, t: float, dt: float = 1e-3):
    """Evolve for total time ``t`` using steps no larger than ``dt``."""
    if t < 0 or dt <= 0:
        raise InvalidParameterError("need t >= 0 and dt > 0")
    batch, single = _as_batch(psi)
    n = max(int(np.ceil(t / dt - 1e-9)), 1) if t > 0 else 0
    out = DeterministicFlow(model).evolve(batch, t / n, n) if n else batch
    return out[:, 0] if single else out


def norm_drift_vs_calculus(model: OscillatorModel, psi, p: float, dt: float = 1e-4) -> float:
    """Rate of change of ``<psi|psi>`` under the drift kept by calculus ``p``.

    Measured with a symmetric forward/backward Euler pair, which isolates
    the first-order term exactly.
    """
    if not 0.0 <= p <= 1.0:
        raise InvalidParameterError("p must lie in [0, 1]")
    psi = normalize(np.asarray(psi, dtype=complex).reshape(-1, 1))
    f = DeterministicFlow(model, p).rhs(psi)
    plus = np.sum(np.abs(psi + dt * f) ** 2)
    minus = np.sum(np.abs(psi - dt * f) ** 2)
    rate = (plus - minus) / (2.0 * dt)
    if not np.isfinite(rate):
        raise IntegrationDivergedError("norm drift evaluation diverged")
    return float(rate)


def measurement_variance(model: OscillatorModel, psi) -> float:
    """``sum_k (<L_k^dag L_k> - |<L_k>|^2)`` at ``psi``."""
    psi = normalize(np.asarray(psi, dtype=complex))
    total = 0.0
    for L in model.jumps:
        Lp = L @ psi
        total += np.vdot(Lp, Lp).real - abs(np.vdot(psi, Lp)) ** 2
    return float(total)


@dataclass(frozen=True)
class CycleOptions:
    """Numerical settings for :func:`find_limit_cycle`.

    Times are in the model's natural units.  ``period_guess`` skips the
    rotation-based coarse estimate.  ``align_origin`` places ``theta = 0``
    where ``<a>`` is real and positive (skipped if ``<a>`` vanishes).
    """

    burn_in: float = 50.0
    probe_time: float = 50.0
    relax_periods: int = 50
    grid_size: int = 256
    substeps: int = 8
    tol: float = 1e-8
    scan_points: int = 2000
    coarse_dt: float = None
    period_guess: float = None
    align_origin: bool = True


def default_initial_state(N: int) -> np.ndarray:
    """``|1>`` with small admixtures of its neighbours."""
    psi = fock_state(N, 1)
    psi[0] = 0.1
    psi[2] = 0.1
    return normalize(psi)


@dataclass(frozen=True, eq=False)
class LimitCycle:
    """Phase-indexed samples of a converged limit cycle.

    ``states[j]`` is the cycle state at phase ``2 pi j / M``; consecutive
    states are phase-aligned so that their overlaps are real and positive.
    """

    model: OscillatorModel
    period: float
    states: np.ndarray  # (M, N)
    substeps: int = 8
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def frequency(self) -> float:
        return TWO_PI / self.period

    @property
    def grid_size(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def thetas(self) -> np.ndarray:
        return TWO_PI * np.arange(self.grid_size) / self.grid_size

    @property
    def dt(self) -> float:
        return self.period / (self.grid_size * self.substeps)

    @cached_property
    def flow(self) -> DeterministicFlow:
        return DeterministicFlow(self.model)

    def state_at(self, theta) -> np.ndarray:
        """Cycle state at an arbitrary phase by geodesic interpolation."""
        M = self.grid_size
        x = np.mod(theta, TWO_PI) / TWO_PI * M
        j = int(np.floor(x)) % M
        s = x - np.floor(x)
        a, b = self.states[j], self.states[(j + 1) % M]
        ov = np.vdot(a, b)
        b = b * np.exp(-1j * np.angle(ov))
        ang = np.arccos(min(abs(ov), 1.0))
        if ang < 1e-14:
            return a.copy()
        return (np.sin((1 - s) * ang) * a + np.sin(s * ang) * b) / np.sin(ang)

    @cached_property
    def _readout_modes(self):
        f = np.abs(self.states.conj() @ self.states[0]) ** 2
        c = np.abs(np.fft.rfft(f))
        keep = np.nonzero(c > 1e-13 * c.max())[0]
        kmax = int(min(max(keep.max() + 4, 8), self.grid_size // 2 - 1))
        return kmax

    def to_dict(self) -> dict:
        return {
            "format": "qphase.limit_cycle/1",
            "dim": self.dim,
            "period": self.period,
            "frequency": self.frequency,
            "grid_size": self.grid_size,
            "substeps": self.substeps,
            "model": model_to_dict(self.model),
            "states": [_interleave(s) for s in self.states],
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)

    @classmethod
    def from_dict(cls, data) -> "LimitCycle":
        if data.get("format") != "qphase.limit_cycle/1":
            raise ValueError("not a qphase limit-cycle file")
        states = np.array([_deinterleave(s) for s in data["states"]])
        if states.shape != (data["grid_size"], data["dim"]):
            raise DimensionMismatchError("limit-cycle file has inconsistent dimensions")
        return cls(model_from_dict(data["model"]), float(data["period"]), states, int(data["substeps"]))

    @classmethod
    def load(cls, path) -> "LimitCycle":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _interleave(z):
    z = np.asarray(z, dtype=complex).ravel()
    out = np.empty(2 * z.size)
    out[0::2] = z.real
    out[1::2] = z.imag
    return out.tolist()


def _deinterleave(x):
    x = np.asarray(x, dtype=float)
    return x[0::2] + 1j * x[1::2]


def model_to_dict(model: OscillatorModel) -> dict:
    N = model.dim
    return {
        "name": model.name,
        "params": model.params,
        "dim": N,
        "labels": list(model.labels),
        "hamiltonian": _interleave(model.hamiltonian),
        "jumps": [_interleave(L) for L in model.jumps],
    }


def model_from_dict(data) -> OscillatorModel:
    N = int(data["dim"])
    H = _deinterleave(data["hamiltonian"]).reshape(N, N)
    jumps = tuple(_deinterleave(L).reshape(N, N) for L in data["jumps"])
    return OscillatorModel(H, jumps, tuple(data["labels"]), data.get("name", "custom"), dict(data.get("params", {})))


def _coarse_period(flow, psi, dt, opts):
    N = flow.model.dim
    a = make_annihilation(N)
    n_burn = int(np.ceil(opts.burn_in / dt))
    psi = flow.evolve(psi, dt, n_burn)
    start = psi.copy()
    n_probe = int(np.ceil(opts.probe_time / dt))
    samples = np.empty(n_probe, complex)

    def record(step, state):
        samples[step] = np.vdot(state[:, 0], a @ state[:, 0])

    psi = flow.evolve(psi, dt, n_probe, observe=record)
    drift = 1.0 - abs(np.vdot(start[:, 0], psi[:, 0]))
    if np.min(np.abs(samples)) < 1e-8:
        if drift < opts.tol:
            raise FixedPointDetectedError("state stopped evolving; the dynamics has a fixed point")
        raise NoCycleDetectedError("<a> vanishes on the attractor; pass CycleOptions(period_guess=...)")
    ang = np.unwrap(np.angle(samples))
    t = dt * np.arange(1, n_probe + 1)
    rate = np.polyfit(t, ang, 1)[0]
    if abs(rate) * opts.probe_time < 0.5:
        # slow transients: keep relaxing for a few more windows before deciding
        for _ in range(4):
            if drift < opts.tol:
                raise FixedPointDetectedError("no rotation of <a> and no state change: fixed point")
            start = psi.copy()
            psi = flow.evolve(psi, dt, n_probe)
            drift = 1.0 - abs(np.vdot(start[:, 0], psi[:, 0]))
        if drift < opts.tol:
            raise FixedPointDetectedError("no rotation of <a> and no state change: fixed point")
        raise NoCycleDetectedError("could not estimate a rotation period from <a>")
    return TWO_PI / abs(rate), psi


def find_limit_cycle(model: OscillatorModel, initial=None, opts: CycleOptions = None) -> LimitCycle:
    """Relax onto the attracting cycle, measure its period and sample it.

    The period is the smallest ``T`` in ``[0.5, 1.5] T_est`` maximizing
    ``|<psi(t)|psi(t+T)>|``: a grid scan, a parabolic refinement, and a
    final bounded minimization on the exact overlap.
    """
    opts = opts or CycleOptions()
    N = model.dim
    psi = default_initial_state(N) if initial is None else normalize(np.asarray(initial, complex))
    check_state(psi, N)
    flow = DeterministicFlow(model)
    psi = psi[:, None]
    dt_c = opts.coarse_dt or min(0.02, 1.0 / max(flow.stiffness, 1e-12))

    if opts.period_guess:
        T_est = float(opts.period_guess)
        psi = flow.evolve(psi, dt_c, int(np.ceil(opts.burn_in / dt_c)))
    else:
        T_est, psi = _coarse_period(flow, psi, dt_c, opts)
    dt_r = min(dt_c, T_est / 200.0)
    psi = flow.evolve(psi, dt_r, int(np.ceil(opts.relax_periods * T_est / dt_r)))
    ref = psi[:, 0].copy()

    dt_s = T_est / opts.scan_points
    n_scan = int(np.ceil(1.5 * opts.scan_points)) + 2
    traj = np.empty((n_scan + 1, N), complex)
    traj[0] = ref
    state = psi
    for i in range(1, n_scan + 1):
        state = flow.evolve(state, dt_s, 1)
        traj[i] = state[:, 0]
    ov = np.abs(traj.conj() @ ref)
    lo = int(np.floor(0.5 * opts.scan_points))
    window = ov[lo : n_scan]
    if np.min(window) >= 1.0 - opts.tol:
        raise FixedPointDetectedError("overlap stays at 1 for all delays: fixed point")
    i = lo + int(np.argmax(window))
    i = min(max(i, 1), n_scan - 1)
    y0, y1, y2 = ov[i - 1], ov[i], ov[i + 1]
    den = y0 - 2 * y1 + y2
    shift = 0.5 * (y0 - y2) / den if den < 0 else 0.0

    base = traj[i - 1][:, None]

    def loss(tau):
        h = tau - (i - 1) * dt_s
        out = flow.rk4_step(base, h) if h > 0 else base
        return 1.0 - abs(np.vdot(ref, out[:, 0]))

    res = minimize_scalar(
        loss, bounds=((i - 1) * dt_s, (i + 1) * dt_s), method="bounded", options={"xatol": 1e-13 * T_est}
    )
    T = float(res.x) if res.fun <= loss((i + shift) * dt_s) else (i + shift) * dt_s
    if loss(T) > opts.tol:
        raise NoCycleDetectedError(
            f"best return overlap 1-{loss(T):.2e} misses tolerance {opts.tol:g}; no closed orbit found"
        )

    M, s = opts.grid_size, opts.substeps
    dt = T / (M * s)
    if opts.align_origin:
        ref = _align_origin(flow, ref, dt, M * s)
    states = np.empty((M, N), complex)
    state = ref[:, None]
    for j in range(M):
        states[j] = state[:, 0]
        state = flow.evolve(state, dt, s)
    closure = 1.0 - abs(np.vdot(states[0], state[:, 0]))
    if closure > max(opts.tol, 1e-8):
        raise NoCycleDetectedError(f"grid does not close: 1-|overlap| = {closure:.2e}")
    states[0] *= np.exp(-1j * np.angle(states[0][np.argmax(np.abs(states[0]))]))
    for j in range(1, M):
        states[j] *= np.exp(-1j * np.angle(np.vdot(states[j - 1], states[j])))
    states.setflags(write=False)
    return LimitCycle(model, T, states, s)


def _align_origin(flow, ref, dt, n_steps):
    a = make_annihilation(ref.size)
    state = ref[:, None]
    path = [ref]
    for _ in range(n_steps):
        state = flow.evolve(state, dt, 1)
        path.append(state[:, 0])
    path = np.array(path)
    ea = np.einsum("ti,ij,tj->t", path.conj(), a, path)
    if np.min(np.abs(ea)) < 1e-6:
        return ref
    ang = np.angle(ea)
    hits = np.flatnonzero((np.abs(ang[:-1]) < 0.5) & (np.sign(ang[:-1]) != np.sign(ang[1:])))
    if ang[0] == 0.0 or not hits.size:
        return ref
    k = int(hits[0])
    base = path[k][:, None]
    h = dt * ang[k] / (ang[k] - ang[k + 1])
    for _ in range(3):
        out = flow.rk4_step(base, h)
        phi = np.angle(np.vdot(out[:, 0], a @ out[:, 0]))
        rate = (ang[k + 1] - ang[k]) / dt
        h -= phi / rate
    return flow.rk4_step(base, h)[:, 0] if h > 0 else base[:, 0]


def project_phase(psi, lc: LimitCycle, chunk: int = 4096):
    """Phase of the cycle state closest to each column of ``psi``.

    Maximizes the trigonometric interpolant of ``|<psi0(theta)|psi>|^2``
    sampled on the grid.  Returns ``(theta, overlap_modulus)``.
    """
    batch, single = _as_batch(psi)
    M = lc.grid_size
    K = lc._readout_modes
    k = np.concatenate([np.arange(0, K + 1), np.arange(-K, 0)])
    theta_out = np.empty(batch.shape[1])
    ov_out = np.empty(batch.shape[1])
    for start in range(0, batch.shape[1], chunk):
        cols = batch[:, start : start + chunk]
        f = np.abs(lc.states.conj() @ cols) ** 2  # (M, B)
        c = np.fft.fft(f, axis=0) / M
        c = np.concatenate([c[: K + 1], c[M - K :]], axis=0)
        th = TWO_PI * np.argmax(f, axis=0) / M
        for _ in range(6):
            e = np.exp(1j * np.outer(k, th))
            d1 = np.real(np.sum((1j * k)[:, None] * c * e, axis=0))
            d2 = np.real(np.sum((-(k**2))[:, None] * c * e, axis=0))
            step = np.where(d2 < 0, -d1 / np.where(d2 < 0, d2, -1.0), 0.0)
            th = th + np.clip(step, -TWO_PI / M, TWO_PI / M)
        val = np.real(np.sum(c * np.exp(1j * np.outer(k, th)), axis=0))
        theta_out[start : start + chunk] = np.mod(th, TWO_PI)
        ov_out[start : start + chunk] = np.sqrt(np.clip(val, 0.0, None))
    if single:
        return float(theta_out[0]), float(ov_out[0])
    return theta_out, ov_out


def asymptotic_phase(
    psi,
    lc: LimitCycle,
    relax_periods: int = 20,
    steps_per_period: int = 512,
    on_cycle_threshold: float = 0.999,
    max_periods: int = None,
):
    """Isochrone phase: relax for an integer number of periods, then read off.

    Accepts one state or an ``(N, B)`` batch.  Integrating exactly
    ``relax_periods * T`` leaves the phase unchanged modulo 2 pi, so no
    offset bookkeeping is required.  Columns still off the cycle are relaxed
    further in blocks of ``relax_periods`` up to ``max_periods`` in total.
    ``steps_per_period`` is raised when the flow is too stiff for it.
    """
    batch, single = _as_batch(psi)
    if batch.shape[0] != lc.dim:
        raise DimensionMismatchError(f"state dimension {batch.shape[0]} vs cycle dimension {lc.dim}")
    batch = batch / np.linalg.norm(batch, axis=0)
    # keep RK4 inside its stability region (|dt * lambda| <= 2) for stiff top levels
    steps_per_period = max(int(steps_per_period), int(np.ceil(lc.period * lc.flow.stiffness / 2.0)))
    dt = lc.period / steps_per_period
    max_periods = max(relax_periods, max_periods or relax_periods)
    out = lc.flow.evolve(batch, dt, relax_periods * steps_per_period)
    theta, ov = project_phase(out, lc)
    theta, ov = np.atleast_1d(theta), np.atleast_1d(ov)
    done = relax_periods
    while done < max_periods and np.any(ov < on_cycle_threshold):
        bad = np.flatnonzero(ov < on_cycle_threshold)
        extra = min(relax_periods, max_periods - done)
        out[:, bad] = lc.flow.evolve(out[:, bad], dt, extra * steps_per_period)
        theta[bad], ov[bad] = project_phase(out[:, bad], lc)
        done += extra
    if np.any(ov < on_cycle_threshold):
        bad = int(np.argmin(ov))
        raise NotConvergedError(
            f"state {bad} ended {1 - ov[bad]:.2e} away from the cycle after {done} periods"
        )
    return theta if not single else float(theta[0])


def cycle_expectations(lc: LimitCycle, O) -> np.ndarray:
    return np.einsum("mi,ij,mj->m", lc.states.conj(), O, lc.states)


def harmonicity(lc: LimitCycle) -> dict:
    """How closely ``<a>(theta)`` traces a uniformly rotating circle."""
    a_exp = cycle_expectations(lc, make_annihilation(lc.dim))
    mod = np.abs(a_exp)
    ang = np.unwrap(np.angle(a_exp))
    slope, icpt = np.polyfit(lc.thetas, ang, 1)
    resid = ang - (slope * lc.thetas + icpt)
    return {
        "mean_abs_a": float(mod.mean()),
        "relative_spread": float(np.ptp(mod) / mod.mean()),
        "arg_slope": float(slope),
        "arg_residual": float(np.max(np.abs(resid))),
    }
