"""Averaged Fokker-Planck quantities for a pair of oscillators under common noise.

With independent phase noise of amplitude ``v`` and a shared noise entering
through ``Z(theta)``, averaging over one period gives the diffusion matrix
``D_ij = v^2 delta_ij + h(phi_i - phi_j)`` with the circular
autocorrelation ``h``, and the stationary phase-difference density
``Q(phi) = q0 / (v^2 + h(0) - h(phi))``.  The overall factor of ``D``
(the Fokker-Planck operator carries ``1/2``) does not affect ``Q``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, NonNormalizableError

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class PhaseDistribution:
    """Piecewise-constant density on ``bins`` equal cells of ``[0, 2 pi)``."""

    density: np.ndarray
    sample_count: int = 0

    def __post_init__(self):
        d = np.array(self.density, dtype=float)
        if d.ndim != 1 or d.size < 2:
            raise InvalidParameterError("density must be a vector of at least two bins")
        if np.any(d < 0):
            raise InvalidParameterError("density must be non-negative")
        total = d.sum() * TWO_PI / d.size
        if abs(total - 1.0) > 1e-9:
            raise InvalidParameterError(f"density integrates to {total}, not 1")
        d.setflags(write=False)
        object.__setattr__(self, "density", d)

    @property
    def bins(self):
        return self.density.size

    @property
    def width(self):
        return TWO_PI / self.bins

    @property
    def edges(self):
        return np.linspace(0.0, TWO_PI, self.bins + 1)

    @property
    def centers(self):
        return (np.arange(self.bins) + 0.5) * self.width

    def rebinned(self, bins: int) -> "PhaseDistribution":
        if self.bins % bins:
            raise InvalidParameterError(f"cannot rebin {self.bins} cells into {bins}")
        return PhaseDistribution(self.density.reshape(bins, -1).mean(axis=1), self.sample_count)

    def to_csv(self, path=None) -> str:
        lines = ["bin_center,density"]
        lines += [f"{c!r},{p!r}" for c, p in zip(self.centers.tolist(), self.density.tolist())]
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def uniform(bins: int) -> PhaseDistribution:
    return PhaseDistribution(np.full(bins, 1.0 / TWO_PI))


def from_grid(values) -> PhaseDistribution:
    """Normalize non-negative samples on the grid ``2 pi j / M`` by the trapezoid rule.

    The grid points are taken as cell centers of a density with ``M`` bins
    after a half-cell shift, which is immaterial for smooth curves.
    """
    v = np.asarray(values, dtype=float)
    return PhaseDistribution(v / (v.sum() * TWO_PI / v.size))


def correlation_h(Z, phi=None):
    """Circular autocorrelation ``(1/2 pi) int Z(phi + x) Z(x) dx`` on the grid.

    Periodic trapezoid quadrature, evaluated by FFT.  Returns the whole
    grid curve, or its linear interpolant at ``phi`` when given.
    """
    Z = np.asarray(Z, dtype=float)
    M = Z.size
    F = np.fft.fft(Z)
    h = np.real(np.fft.ifft(np.abs(F) ** 2)) / M
    if phi is None:
        return h
    x = np.mod(np.asarray(phi, dtype=float), TWO_PI) * (M / TWO_PI)
    i0 = np.floor(x).astype(int) % M
    w = x - np.floor(x)
    return h[i0] * (1 - w) + h[(i0 + 1) % M] * w


def grid_to_bins(values, bins: int) -> PhaseDistribution:
    """Cell averages of a periodic grid curve over ``bins`` equal cells (trapezoid rule)."""
    v = np.asarray(values, dtype=float)
    M = v.size
    if M % bins:
        raise InvalidParameterError(f"grid of {M} points cannot be split into {bins} cells")
    r = M // bins
    ext = np.append(v, v[0]).astype(float)
    cells = np.array([np.trapezoid(ext[b * r : (b + 1) * r + 1]) / r for b in range(bins)])
    return PhaseDistribution(cells / (cells.sum() * TWO_PI / bins))


def steady_state_Q(h, v: float, bins: int = None) -> PhaseDistribution:
    """Stationary phase-difference density.

    Returned on the grid of ``h`` (one cell per grid point) or, with
    ``bins``, as cell averages comparable with a histogram.
    """
    h = np.asarray(h, dtype=float)
    if v < 0:
        raise InvalidParameterError("v must be non-negative")
    denom = v**2 + h[0] - h
    scale = max(abs(h[0]), v**2, 1e-300)
    if v == 0 and np.all(np.abs(h - h[0]) <= 1e-12 * scale):
        raise NonNormalizableError("v = 0 with flat correlation: the pair synchronizes perfectly")
    if v == 0:
        # h(0) - h(phi) ~ phi^2 near 0, so 1/phi^2 is not integrable
        raise NonNormalizableError("v = 0: Q has a non-integrable singularity at phi = 0")
    if np.any(denom <= 0):
        raise NonNormalizableError("denominator of Q is not positive")
    if bins is not None:
        return grid_to_bins(1.0 / denom, bins)
    return from_grid(1.0 / denom)


def averaged_diffusion(Z, v: float) -> np.ndarray:
    """``D(phi)[i, j] = v^2 delta_ij + h(phi_i - phi_j)`` as an ``(M, 2, 2)`` array in ``phi = phi_1 - phi_2``."""
    h = correlation_h(Z)
    hm = np.roll(h[::-1], 1)  # h(-phi)
    D = np.empty((h.size, 2, 2))
    D[:, 0, 0] = D[:, 1, 1] = v**2 + h[0]
    D[:, 0, 1] = h
    D[:, 1, 0] = hm
    return D


def histogram_phases(series, bins: int = 32) -> PhaseDistribution:
    x = np.asarray(series, dtype=float).ravel()
    if x.size == 0:
        raise InvalidParameterError("cannot histogram an empty series")
    if bins < 8:
        raise InvalidParameterError("at least 8 bins are required")
    counts, _ = np.histogram(np.mod(x, TWO_PI), bins=bins, range=(0.0, TWO_PI))
    return PhaseDistribution(counts / (x.size * TWO_PI / bins), int(x.size))


def _check_pair(P, Q):
    if P.bins != Q.bins:
        raise InvalidParameterError(f"bin mismatch {P.bins} vs {Q.bins}")


def l1_distance(P: PhaseDistribution, Q: PhaseDistribution) -> float:
    """``int |P - Q| dphi`` (between 0 and 2)."""
    _check_pair(P, Q)
    return float(np.sum(np.abs(P.density - Q.density)) * P.width)


def total_variation(P: PhaseDistribution, Q: PhaseDistribution) -> float:
    return 0.5 * l1_distance(P, Q)


def fourier_spectrum(curve) -> np.ndarray:
    """Power in harmonics ``0 .. M/2`` (one-sided, so ``sum`` equals the mean square)."""
    c = np.fft.rfft(np.asarray(curve, dtype=float)) / len(curve)
    p = np.abs(c) ** 2
    M = len(curve)
    p[1 : (M + 1) // 2] *= 2
    return p


def dominant_mode(curve) -> int:
    p = fourier_spectrum(curve)
    return int(np.argmax(p[1:]) + 1)


def high_mode_fraction(curve, n_min: int) -> float:
    """Fraction of the non-constant power carried by modes ``>= n_min``."""
    p = fourier_spectrum(curve)[1:]
    total = p.sum()
    return float(p[n_min - 1 :].sum() / total) if total > 0 else 0.0


def count_clusters(P: PhaseDistribution, threshold: float = 1.2) -> int:
    """Local maxima of the 3-bin circularly smoothed density above ``threshold / 2 pi``."""
    d = P.density
    s = (np.roll(d, 1) + d + np.roll(d, -1)) / 3.0
    level = threshold / TWO_PI
    left, right = np.roll(s, 1), np.roll(s, -1)
    # ">=" on one side so a flat top of equal values counts once
    peaks = (s > level) & (s >= left) & (s > right)
    return int(np.count_nonzero(peaks))


def cluster_positions(P: PhaseDistribution, threshold: float = 1.2) -> np.ndarray:
    d = P.density
    s = (np.roll(d, 1) + d + np.roll(d, -1)) / 3.0
    left, right = np.roll(s, 1), np.roll(s, -1)
    peaks = (s > threshold / TWO_PI) & (s >= left) & (s > right)
    return P.centers[peaks]


def threshold_sensitivity(P: PhaseDistribution, thresholds=(1.1, 1.2, 1.3, 1.4, 1.5)) -> dict:
    return {float(t): count_clusters(P, t) for t in thresholds}


def circular_distance(a, b):
    return np.abs(np.angle(np.exp(1j * (np.asarray(a) - np.asarray(b)))))


def bootstrap_tv(samples, bins: int, reference: PhaseDistribution = None, n_boot: int = 200, rng=None):
    """Total variation of the pooled histogram and its bootstrap Monte Carlo error.

    ``samples`` is ``(S, R)`` with independent replicas (trajectories) along
    the second axis; resampling whole replicas keeps the time correlation
    inside each one.  The error is the mean bootstrap distance between a
    resampled histogram and the pooled one.  Returns ``(tv, error)``.
    """
    x = np.mod(np.asarray(samples, dtype=float), TWO_PI)
    if x.ndim == 1:
        x = x[:, None]
    reference = reference or uniform(bins)
    pooled = histogram_phases(x, bins)
    tv = total_variation(pooled, reference)
    rng = rng or np.random.default_rng(0)
    counts = np.stack([np.histogram(x[:, r], bins=bins, range=(0.0, TWO_PI))[0] for r in range(x.shape[1])])
    dist = []
    for _ in range(n_boot):
        pick = rng.integers(0, x.shape[1], x.shape[1])
        c = counts[pick].sum(axis=0)
        dist.append(0.5 * np.sum(np.abs(c / c.sum() - pooled.density * pooled.width)))
    return tv, float(np.mean(dist))
