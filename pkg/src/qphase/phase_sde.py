"""Reduced phase equations driven by white noise.

A :class:`PhaseModel` holds grid-sampled curves on ``theta_j = 2 pi j / M``::

    dtheta = [omega + drift(theta)] dt + sum_k Y_k(theta) o dW_k

Stratonovich runs use Euler-Heun, Ito runs use Euler-Maruyama with the
correction ``(1/2) sum_k Y_k' Y_k``.  Curves are interpolated linearly.
Series are stored unwrapped.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError, ValidationFailure
from .streams import COMMON, PHASE, WienerSource, stream

TWO_PI = 2.0 * np.pi


def _grid(M):
    return TWO_PI * np.arange(M) / M


def periodic_interp(curve, theta):
    """Linear interpolation of a grid curve at arbitrary (unwrapped) angles."""
    curve = np.asarray(curve)
    M = curve.shape[-1]
    x = np.mod(theta, TWO_PI) * (M / TWO_PI)
    i0 = np.floor(x).astype(int) % M
    w = x - np.floor(x)
    i1 = (i0 + 1) % M
    return curve[..., i0] * (1.0 - w) + curve[..., i1] * w


def spectral_derivative(curve):
    curve = np.asarray(curve, dtype=float)
    M = curve.shape[-1]
    k = np.fft.fftfreq(M, d=1.0 / M)
    if M % 2 == 0:
        k[M // 2] = 0.0
    return np.real(np.fft.ifft(1j * k * np.fft.fft(curve, axis=-1), axis=-1))


def strat_to_ito(curves) -> np.ndarray:
    """Ito drift correction ``(1/2) sum_k Y_k'(theta) Y_k(theta)`` on the grid."""
    Y = np.atleast_2d(np.asarray(curves, dtype=float))
    return 0.5 * np.sum(spectral_derivative(Y) * Y, axis=0)


@dataclass(frozen=True)
class PhaseModel:
    omega: float
    noise_curves: np.ndarray  # (K, M)
    drift_curve: np.ndarray = None
    labels: tuple = ()
    closed_form: dict = field(default=None, compare=False)

    def __post_init__(self):
        if not self.omega > 0:
            raise InvalidParameterError("omega must be positive")
        Y = np.atleast_2d(np.array(self.noise_curves, dtype=float))
        if Y.ndim != 2 or Y.shape[1] < 2:
            raise InvalidParameterError("noise curves must be (K, M) grid samples")
        Y.setflags(write=False)
        object.__setattr__(self, "noise_curves", Y)
        if self.drift_curve is not None:
            d = np.array(self.drift_curve, dtype=float)
            if d.shape != (Y.shape[1],):
                raise InvalidParameterError("drift curve must live on the noise-curve grid")
            d.setflags(write=False)
            object.__setattr__(self, "drift_curve", d)
        labels = tuple(self.labels) or tuple(f"Y{k + 1}" for k in range(Y.shape[0]))
        object.__setattr__(self, "labels", labels)

    @property
    def grid_size(self):
        return self.noise_curves.shape[1]

    @property
    def n_noises(self):
        return self.noise_curves.shape[0]

    @property
    def thetas(self):
        return _grid(self.grid_size)

    @classmethod
    def from_prc_table(cls, table, drift=None) -> "PhaseModel":
        """Backaction curves ``Y_km`` of a :class:`~qphase.phase_response.PRCTable`."""
        keys = sorted(table.backaction)
        return cls(table.frequency, np.array([table.backaction[k] for k in keys]), drift, tuple(keys))

    @classmethod
    def qvdp(cls, omega, v1, v2, M=256, offsets=(0.0, 0.0)) -> "PhaseModel":
        """Closed form ``{v1 sin, v1 cos}(theta + c1)``, ``{v2 sin, v2 cos}(2 theta + c2)``."""
        th = _grid(M)
        c1, c2 = offsets
        Y = np.array([
            v1 * np.sin(th + c1), v1 * np.cos(th + c1),
            v2 * np.sin(2 * th + c2), v2 * np.cos(2 * th + c2),
        ])
        return cls(omega, Y, None, ("Y11", "Y12", "Y21", "Y22"), {"v1": float(v1), "v2": float(v2)})

    def noise_power(self) -> np.ndarray:
        return np.sum(self.noise_curves**2, axis=0)

    def consolidated(self, rtol: float = 1e-6) -> "PhaseModel":
        """Replace the noises by one constant amplitude ``sqrt(sum_k Y_k^2)``.

        Only valid when that sum is independent of theta and there is no
        drift curve; otherwise :class:`ValidationFailure` is raised.
        """
        p = self.noise_power()
        if np.ptp(p) > rtol * max(np.mean(p), 1e-300):
            raise ValidationFailure("noise power depends on theta; consolidation would change the law")
        if self.drift_curve is not None and np.any(self.drift_curve):
            raise ValidationFailure("consolidation is only defined without a drift curve")
        v = np.sqrt(np.mean(p))
        return PhaseModel(self.omega, np.full((1, self.grid_size), v), None, ("v",), self.closed_form)

    def ito_drift(self, Z_common=None) -> np.ndarray:
        curves = self.noise_curves if Z_common is None else np.vstack([self.noise_curves, Z_common])
        out = strat_to_ito(curves)
        if self.drift_curve is not None:
            out = out + self.drift_curve
        return out


@dataclass
class PhaseSeries:
    """Sampled phase trajectories; ``unwrapped[s, b]`` at ``times[s]``."""

    times: np.ndarray
    unwrapped: np.ndarray
    seed: int = 0

    @property
    def wrapped(self):
        return np.mod(self.unwrapped, TWO_PI)

    def to_csv(self, path=None, labels=None) -> str:
        B = self.unwrapped.shape[1]
        labels = labels or [f"theta{b + 1}" for b in range(B)]
        lines = [",".join(["time"] + list(labels))]
        for t, row in zip(self.times, self.unwrapped):
            lines.append(",".join([repr(float(t))] + [repr(float(x)) for x in row]))
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path, seed=0) -> "PhaseSeries":
        with open(path) as fh:
            rows = list(csv.reader(fh))
        data = np.array(rows[1:], dtype=float)
        return cls(data[:, 0], data[:, 1:], seed)


def _check_run(t_end, dt):
    if not dt > 0:
        raise InvalidParameterError("dt must be positive")
    if not t_end > 0:
        raise InvalidParameterError("t_end must be positive")
    n = int(round(t_end / dt))
    if n < 1:
        raise InvalidParameterError("t_end shorter than one step")
    return n


def _run(pm, theta0, n_steps, dt, meas, common, Z_common, pair_map, scheme, record_stride):
    th = np.array(theta0, dtype=float)
    Y = pm.noise_curves
    drift_c = pm.drift_curve
    ito = pm.ito_drift(Z_common) if scheme == "ito" else None
    out = [th.copy()]
    for step in range(n_steps):
        dw = meas.next()  # (K, B)
        dn = None
        if Z_common is not None:
            dn = common.next()[0][pair_map]
        if scheme == "ito":
            inc = (pm.omega + periodic_interp(ito, th)) * dt + np.sum(periodic_interp(Y, th) * dw, axis=0)
            if dn is not None:
                inc = inc + periodic_interp(Z_common, th) * dn
            th = th + inc
        else:
            def f(x):
                a = pm.omega + (periodic_interp(drift_c, x) if drift_c is not None else 0.0)
                g = np.sum(periodic_interp(Y, x) * dw, axis=0)
                if dn is not None:
                    g = g + periodic_interp(Z_common, x) * dn
                return a * dt + g

            k0 = f(th)
            th = th + 0.5 * (k0 + f(th + k0))
        if (step + 1) % record_stride == 0:
            out.append(th.copy())
    return np.array(out)


def _simulate(pm, theta0, t_end, dt, seed, scheme, record_stride, index0=0):
    n = _check_run(t_end, dt)
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    gens = [stream(seed, index0 + b, PHASE) for b in range(theta0.size)]
    meas = WienerSource(gens, pm.n_noises, dt)
    th = _run(pm, theta0, n, dt, meas, None, None, None, scheme, record_stride)
    times = dt * record_stride * np.arange(th.shape[0])
    return PhaseSeries(times, th, int(seed))


def simulate_phase_stratonovich(pm: PhaseModel, theta0, t_end, dt, seed, record_stride=1) -> PhaseSeries:
    """Euler-Heun integration; ``theta0`` may be an array of independent runs."""
    return _simulate(pm, theta0, t_end, dt, seed, "stratonovich", record_stride)


def simulate_phase_ito(pm: PhaseModel, theta0, t_end, dt, seed, record_stride=1) -> PhaseSeries:
    """Euler-Maruyama integration of the equivalent Ito equation.

    Uses the same Wiener increments as :func:`simulate_phase_stratonovich`
    for equal arguments.
    """
    return _simulate(pm, theta0, t_end, dt, seed, "ito", record_stride)


def simulate_phase_pair_common(
    pm: PhaseModel, Z_common, theta0_pairs, t_end, dt, seed, scheme="stratonovich", record_stride=1
):
    """Pairs ``(theta1, theta2)`` with independent ``pm`` noises and a shared ``Z_common o dW_N``.

    ``theta0_pairs`` is ``(2,)`` or ``(P, 2)``.  Returns the two
    :class:`PhaseSeries` (each ``(S, P)``) and the phase difference
    ``theta1 - theta2`` (unwrapped, ``(S, P)``).
    """
    Z = np.asarray(Z_common, dtype=float)
    if Z.shape != (pm.grid_size,):
        raise InvalidParameterError("common-noise PRC must live on the model grid")
    n = _check_run(t_end, dt)
    th0 = np.atleast_2d(np.asarray(theta0_pairs, dtype=float))
    P = th0.shape[0]
    flat = th0.reshape(-1)  # theta1 of pair p at 2p, theta2 at 2p+1
    meas = WienerSource([stream(seed, b, PHASE) for b in range(2 * P)], pm.n_noises, dt)
    common = WienerSource([stream(seed, p, COMMON) for p in range(P)], 1, dt)
    th = _run(pm, flat, n, dt, meas, common, Z, np.arange(2 * P) // 2, scheme, record_stride)
    times = dt * record_stride * np.arange(th.shape[0])
    s1 = PhaseSeries(times, th[:, 0::2].copy(), int(seed))
    s2 = PhaseSeries(times, th[:, 1::2].copy(), int(seed))
    return s1, s2, s1.unwrapped - s2.unwrapped
