"""Invariant checks shared by the ``validate`` subcommand and the test-suite.

Every check returns a JSON-ready dict with a boolean ``"pass"`` entry.
"""

import numpy as np

from .errors import BasisError
from .fp_analysis import dominant_mode
from .hilbert import OscillatorModel, adjoint, make_annihilation, make_qvdp
from .limit_cycle import (
    CycleOptions,
    default_initial_state,
    find_limit_cycle,
    harmonicity,
    measurement_variance,
    norm_drift_vs_calculus,
)
from .phase_response import backaction_coeffs, harmonic_fit, homodyne_difference_prcs, prc_along
from .sse_sim import lindblad_evolve, run_ensemble, trace_distance
from .sun_basis import GeneratorBasis, build_generators, check_basis


def basis_check(dims=(2, 3, 6, 10), corrupt_index=None, tol=1e-12) -> dict:
    """Structural checks of the generator basis; ``corrupt_index`` injects a fault into the last one."""
    out = {"pass": True, "dims": {}}
    for i, N in enumerate(dims):
        basis = build_generators(N)
        if corrupt_index is not None and i == len(dims) - 1:
            gens = np.array(basis.generators)
            gens[corrupt_index] = 1.01 * gens[corrupt_index]
            basis = GeneratorBasis(N, gens, basis.labels)
        try:
            check_basis(basis, tol)
            out["dims"][str(N)] = {"pass": True}
        except BasisError as exc:
            out["dims"][str(N)] = {"pass": False, "index": exc.index, "message": str(exc)}
            out["pass"] = False
    return out


def norm_calculus_sweep(model: OscillatorModel, psi=None, ps=(0.0, 0.25, 0.5, 0.75, 1.0)) -> dict:
    """Norm-drift rate against ``p``; the expected line is ``(2p - 1) sum_k Var(L_k)``."""
    psi = default_initial_state(model.dim) if psi is None else psi
    ps = np.asarray(ps, dtype=float)
    rates = np.array([norm_drift_vs_calculus(model, psi, p) for p in ps])
    var = measurement_variance(model, psi)
    slope, icpt = np.polyfit(ps, rates, 1)
    zero = -icpt / slope if slope != 0 else float("nan")
    slope_err = abs(slope - 2 * var) / (2 * var)
    return {
        "pass": bool(slope_err < 0.01 and abs(zero - 0.5) < 0.01),
        "p": ps.tolist(),
        "rates": rates.tolist(),
        "expected_slope": 2 * var,
        "slope": float(slope),
        "slope_error": float(slope_err),
        "zero_crossing": float(zero),
    }


def lindblad_consistency(model, n_traj=500, t=5.0, dt=1e-3, seed=0, detection="heterodyne", angles=None, tol=0.05, psi=None):
    psi = default_initial_state(model.dim) if psi is None else psi
    ref = lindblad_evolve(model, np.outer(psi, psi.conj()), t)
    ens = run_ensemble(model, psi, t, dt, n_traj, seed, detection=detection, angles=angles, sample_stride=int(round(t / dt)))
    d = trace_distance(ens.density_matrix(), ref)
    return {"pass": bool(d <= tol), "trace_distance": d, "n_traj": n_traj, "t": t, "dt": dt}


def dt_halving(model, n_traj=500, t=5.0, dt=1e-3, seed=0, tol=0.2, psi=None) -> dict:
    """Trace distance to the Lindblad solution at ``dt`` and ``dt/2`` on the same Brownian paths."""
    psi = default_initial_state(model.dim) if psi is None else psi
    ref = lindblad_evolve(model, np.outer(psi, psi.conj()), t)
    dist = []
    for h, refine in ((dt, 2), (dt / 2, 1)):
        ens = run_ensemble(model, psi, t, h, n_traj, seed, sample_stride=int(round(t / h)), noise_substeps=refine)
        dist.append(trace_distance(ens.density_matrix(), ref))
    change = abs(dist[1] - dist[0]) / dist[0]
    return {"pass": bool(change < tol), "distance_dt": dist[0], "distance_half_dt": dist[1], "relative_change": change}


def u1_equivariance(lc, model=None, shift=0.7, seed=0, n_traj=300, t=5.0, dt=1e-3) -> dict:
    """Phase-covariance of the jump rotation.

    For qvdP-like models, rotating the jumps by ``(lam, -2 lam)`` equals
    conjugation by ``exp(i lam n)``: the homodyne curves must shift by
    ``lam`` in theta.  Heterodyne ensembles with rotated jumps must still
    reproduce the Lindblad solution.
    """
    model = model or lc.model
    M = lc.grid_size
    k = int(round(shift * M / (2 * np.pi)))
    lam = 2 * np.pi * k / M
    base = homodyne_difference_prcs(lc, (0.0, 0.0), model)
    rot = homodyne_difference_prcs(lc, (lam, -2 * lam), model)
    errs = {}
    for key in base:
        fwd = np.max(np.abs(rot[key] - np.roll(base[key], k)))
        bwd = np.max(np.abs(rot[key] - np.roll(base[key], -k)))
        errs[key] = float(min(fwd, bwd))
    scale = max(np.max(np.abs(v)) for v in base.values())
    curves_ok = all(e < 1e-6 * scale for e in errs.values())
    het = lindblad_consistency(model.rotated((shift, -0.3)), n_traj, t, dt, seed, tol=0.08)
    return {"pass": bool(curves_ok and het["pass"]), "shift": lam, "curve_shift_errors": errs, "heterodyne_rotated": het}


def cycle_report(lc) -> dict:
    """Harmonicity, backaction amplitudes and PRC fits for the standard common noises."""
    a = make_annihilation(lc.dim)
    h = harmonicity(lc)
    ba = backaction_coeffs(lc).backaction_strengths()
    fits = {}
    for name, S, mode in (("i(a-adag)", 1j * (a - adjoint(a)), 1), ("i(a2-adag2)", 1j * (a @ a - adjoint(a @ a)), 2)):
        Z = prc_along(lc, S)
        fits[name] = {"dominant_mode": dominant_mode(Z), **harmonic_fit(Z, mode)}
    return {
        "period": lc.period,
        "harmonicity": h,
        "v": {k: (d["v"] if isinstance(d, dict) else d) for k, d in ba.items()},
        "prc_fits": fits,
    }


def truncation_check(delta=1.0, gamma_g=0.2, gamma_d=1.0, N=10, extra=4, tol=0.02, opts: CycleOptions = None) -> dict:
    """Compare cycle and PRC quantities at ``N`` and ``N + extra`` levels."""
    reports = {}
    for n in (N, N + extra):
        lc = find_limit_cycle(make_qvdp(n, delta, gamma_g, gamma_d), opts=opts)
        reports[n] = cycle_report(lc)
    a, b = reports[N], reports[N + extra]
    drift = {
        "mean_abs_a": _rel(a["harmonicity"]["mean_abs_a"], b["harmonicity"]["mean_abs_a"]),
        "period": _rel(a["period"], b["period"]),
    }
    for k in a["v"]:
        drift[f"v_{k}"] = _rel(a["v"][k], b["v"][k])
    for name in a["prc_fits"]:
        drift[f"Z_amp_{name}"] = _rel(a["prc_fits"][name]["amplitude"], b["prc_fits"][name]["amplitude"])
    return {
        "pass": bool(max(drift.values()) < tol),
        "N": N,
        "N_extra": N + extra,
        "relative_drift": drift,
        "reports": {str(k): v for k, v in reports.items()},
    }


def _rel(x, y):
    return float(abs(x - y) / max(abs(x), 1e-300))
