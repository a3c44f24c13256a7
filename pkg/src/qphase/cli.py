"""Command-line front end.

    qphase <limit-cycle|prc|simulate|sync|validate> --config FILE [--seed N] [--out DIR]

Precedence for every setting: command-line flag, then config file, then the
built-in default.  The resolved configuration is written to
``<out>/resolved_config.json`` before any computation starts.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 validation failure.
"""

import argparse
import copy
import json
import os
import sys
from importlib import resources

import jsonschema
import numpy as np

from . import fp_analysis as fp
from .errors import ConfigError, NotConvergedError, QPhaseError, ValidationFailure
from .hilbert import OscillatorModel, adjoint, make_annihilation, make_qvdp, number_operator
from .limit_cycle import CycleOptions, LimitCycle, asymptotic_phase, cycle_expectations, find_limit_cycle, harmonicity
from .phase_response import (
    PRCTable,
    backaction_coeffs,
    harmonic_fit,
    homodyne_difference_prcs,
    phase_gradient,
    prc_along,
    prc_directional,
    prc_table,
)
from .phase_sde import PhaseModel, simulate_phase_pair_common
from .sse_sim import (
    NoiseSpec,
    ensemble_phases,
    ensemble_summary,
    run_ensemble,
    simulate_heterodyne,
    simulate_homodyne,
)
from .sun_basis import build_generators
from . import validation

DEFAULTS = {
    "detection": {"scheme": "heterodyne", "angles": 0.0},
    "noise": {"operator": "none", "strength": 1.0, "shared": True},
    "prc": {"operators": ["i(a-adag)", "i(a2-adag2)"], "method": "adjoint", "generators": False},
    "numerics": {
        "seed": 0,
        "dt": 1e-3,
        "t_end": 5.0,
        "n_traj": 100,
        "n_pairs": 100,
        "phase_pairs": 1000,
        "phase_dt": 0.01,
        "grid_size": 256,
        "substeps": 8,
        "sample_stride": 100,
        "burn_in": 0.0,
        "bins": 32,
        "threshold": 1.2,
        "chunk_size": 250,
        "records": 0,
    },
    "validate": {
        "checks": ["basis", "norm_calculus", "lindblad", "u1", "dt_halving", "truncation"],
        "n_traj": 500,
        "corrupt_basis_index": None,
        "extra_levels": 4,
    },
    "outputs": {"dir": "qphase_out", "cycle_cache": None, "formats": ["csv", "json"]},
}


def load_schema() -> dict:
    return json.loads(resources.files("qphase").joinpath("config.schema.json").read_text())


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(raw: dict, seed=None, out=None) -> dict:
    """Validate ``raw`` against the schema and fill in defaults and flag overrides."""
    try:
        jsonschema.validate(raw, load_schema())
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path)
        if exc.validator == "required":
            missing = exc.message.split("'")[1]
            field = f"{where}.{missing}" if where else missing
            raise ConfigError(f"missing required field '{field}'") from None
        raise ConfigError(f"invalid config at '{where or '<root>'}': {exc.message}") from None
    cfg = _merge(DEFAULTS, raw)
    if seed is not None:
        cfg["numerics"]["seed"] = int(seed)
    if out is not None:
        cfg["outputs"]["dir"] = out
    return cfg


def _matrix(spec):
    re = np.array(spec["re"], dtype=float)
    im = np.array(spec.get("im", np.zeros_like(re)), dtype=float)
    if re.shape != im.shape or re.ndim != 2 or re.shape[0] != re.shape[1]:
        raise ConfigError("matrix entries must be square with matching 're' and 'im' parts")
    return re + 1j * im


def build_model(cfg) -> OscillatorModel:
    m = cfg["model"]
    try:
        if m["kind"] == "qvdp":
            return make_qvdp(m["N"], m["delta"], m["gamma_g"], m["gamma_d"])
        jumps = tuple(_matrix(j) for j in m.get("jumps", []))
        return OscillatorModel(_matrix(m["hamiltonian"]), jumps, name="explicit")
    except ValueError as exc:
        raise ConfigError(f"invalid model: {exc}") from None


def named_operator(name, N):
    a = make_annihilation(N)
    ops = {
        "none": np.zeros((N, N), complex),
        "i(a-adag)": 1j * (a - adjoint(a)),
        "i(a2-adag2)": 1j * (a @ a - adjoint(a @ a)),
        "a+adag": a + adjoint(a),
        "n": number_operator(N).astype(complex),
    }
    if isinstance(name, dict):
        op = _matrix(name)
        if op.shape != (N, N):
            raise ConfigError(f"noise operator must be {N}x{N}")
        return op
    return ops[name]


def _angles(cfg, model):
    ang = cfg["detection"]["angles"]
    return np.broadcast_to(np.asarray(ang, dtype=float), (model.n_jumps,)).tolist()


def write_json(path, data):
    with open(path, "w") as fh:
        json.dump(_plain(data), fh, sort_keys=True, indent=1)
        fh.write("\n")


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_csv(path, columns: dict):
    names = list(columns)
    with open(path, "w") as fh:
        fh.write(",".join(names) + "\n")
        for row in zip(*columns.values()):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _out_dir(cfg):
    d = cfg["outputs"]["dir"]
    os.makedirs(d, exist_ok=True)
    write_json(os.path.join(d, "resolved_config.json"), cfg)
    return d


def get_cycle(cfg, model) -> LimitCycle:
    """Compute the cycle, or reuse ``outputs.cycle_cache`` when it holds the same model."""
    num = cfg["numerics"]
    opts = CycleOptions(grid_size=num["grid_size"], substeps=num["substeps"])
    cache = cfg["outputs"]["cycle_cache"]
    if cache and os.path.exists(cache):
        lc = LimitCycle.load(cache)
        same = (
            lc.dim == model.dim
            and lc.grid_size == opts.grid_size
            and np.array_equal(lc.model.hamiltonian, model.hamiltonian)
            and len(lc.model.jumps) == len(model.jumps)
            and all(np.array_equal(x, y) for x, y in zip(lc.model.jumps, model.jumps))
        )
        if same:
            return lc
    lc = find_limit_cycle(model, opts=opts)
    if cache:
        lc.save(cache)
    return lc


def cmd_limit_cycle(cfg) -> int:
    out = _out_dir(cfg)
    model = build_model(cfg)
    lc = get_cycle(cfg, model)
    lc.save(os.path.join(out, "cycle.json"))
    a_exp = cycle_expectations(lc, make_annihilation(lc.dim))
    write_csv(os.path.join(out, "profile.csv"), {"theta": lc.thetas, "abs_a": np.abs(a_exp), "arg_a": np.angle(a_exp)})
    h = harmonicity(lc)
    write_json(
        os.path.join(out, "summary.json"),
        {
            "period": lc.period,
            "frequency": lc.frequency,
            "grid_size": lc.grid_size,
            "harmonicity": h,
            "abs_a": {"min": float(np.min(np.abs(a_exp))), "max": float(np.max(np.abs(a_exp)))},
            "harmonic": bool(h["relative_spread"] < 1e-3 and h["arg_residual"] < 1e-3),
        },
    )
    return 0


def _curve_report(curve):
    mode = fp.dominant_mode(curve)
    amp = float(np.max(np.abs(curve)))
    rep = {"dominant_mode": mode, "max_abs": amp}
    if amp > 1e-12:
        rep["fit"] = harmonic_fit(curve, mode)
    return rep


def cmd_prc(cfg) -> int:
    out = _out_dir(cfg)
    model = build_model(cfg)
    lc = get_cycle(cfg, model)
    fits = {}
    try:
        phase_gradient(lc)
        attracting = True
    except NotConvergedError as exc:
        # e.g. a jump-free model: the orbit is neutral, there is no backaction
        # and the directional PRCs are undefined
        attracting = False
        fits["note"] = str(exc)
    basis = build_generators(model.dim) if cfg["prc"]["generators"] and attracting else None
    table = prc_table(lc, basis) if basis is not None else PRCTable(lc.thetas.copy(), lc.frequency)
    if attracting:
        for name in cfg["prc"]["operators"]:
            S = named_operator(name, model.dim)
            if cfg["prc"]["method"] == "isochrone":
                table.directional[name] = prc_directional(lc, S, lc.thetas)
            else:
                table.directional[name] = prc_along(lc, S)
        backaction_coeffs(lc, model, basis, table)
    table.to_csv(os.path.join(out, "prc.csv"))
    table.save(os.path.join(out, "prc.json"))
    fits["directional"] = {k: _curve_report(v) for k, v in sorted(table.directional.items())}
    fits["backaction"] = {k: _curve_report(v) for k, v in sorted(table.backaction.items())}
    if table.backaction:
        fits["strengths"] = table.backaction_strengths()
        power = table.noise_variance()
        fits["noise_power"] = {"mean": float(power.mean()), "relative_spread": float(np.ptp(power) / power.mean())}
    if cfg["detection"]["scheme"] == "homodyne":
        hd = homodyne_difference_prcs(lc, _angles(cfg, model), model) if model.n_jumps and attracting else {}
        write_csv(os.path.join(out, "homodyne_prc.csv"), {"theta": lc.thetas, **hd})
        fits["homodyne"] = {k: _curve_report(v) for k, v in sorted(hd.items())}
    write_json(os.path.join(out, "fits.json"), fits)
    return 0


def _noise(cfg, model):
    op = cfg["noise"]["operator"]
    if op == "none":
        return None
    return NoiseSpec(named_operator(op, model.dim), cfg["noise"]["strength"], cfg["noise"]["shared"])


def cmd_simulate(cfg) -> int:
    out = _out_dir(cfg)
    model = build_model(cfg)
    num = cfg["numerics"]
    det = cfg["detection"]["scheme"]
    angles = _angles(cfg, model) if det == "homodyne" else None
    lc = get_cycle(cfg, model)
    noise = _noise(cfg, model)
    psi0 = lc.states[0]
    ens = run_ensemble(
        model, psi0, num["t_end"], num["dt"], num["n_traj"], num["seed"], detection=det, angles=angles,
        noise=noise, sample_stride=num["sample_stride"], chunk_size=num["chunk_size"],
    )
    start = int(np.searchsorted(ens.sample_times, num["burn_in"] - 1e-12))
    phases = ensemble_phases(ens, lc, start_sample=start)
    write_csv(
        os.path.join(out, "phases.csv"),
        {"time": np.repeat(ens.sample_times[start:], ens.n_traj), "trajectory": np.tile(np.arange(ens.n_traj), phases.shape[0]),
         "phase": phases.ravel()},
    )
    P = fp.histogram_phases(phases, num["bins"])
    P.to_csv(os.path.join(out, "histogram.csv"))
    tv, err = fp.bootstrap_tv(phases, num["bins"])
    summary = ensemble_summary(ens)
    summary.update({
        "phase_samples": int(phases.size),
        "tv_from_uniform": tv,
        "tv_bootstrap_error": err,
        "clusters": fp.count_clusters(P, num["threshold"]),
        "threshold_sensitivity": fp.threshold_sensitivity(P),
    })
    write_json(os.path.join(out, "summary.json"), summary)
    sim = simulate_homodyne if det == "homodyne" else simulate_heterodyne
    for i in range(num["records"]):
        args = (model, angles) if det == "homodyne" else (model,)
        rec = sim(*args, psi0, num["t_end"], num["dt"], num["seed"], noise=noise,
                  sample_stride=num["sample_stride"], index=i)
        rec.phases = np.asarray(asymptotic_phase(rec.states.T, lc, relax_periods=4, steps_per_period=128, max_periods=200))
        if "csv" in cfg["outputs"]["formats"]:
            rec.to_csv(os.path.join(out, f"trajectory_{i:04d}.csv"))
        if "binary" in cfg["outputs"]["formats"]:
            rec.to_binary(os.path.join(out, f"trajectory_{i:04d}.bin"))
    return 0


def sync_experiment(cfg, lc=None) -> dict:
    """Stationary phase-difference densities from SSE pairs, phase-SDE pairs and the averaged theory."""
    model = build_model(cfg)
    num = cfg["numerics"]
    lc = lc or get_cycle(cfg, model)
    S = named_operator(cfg["noise"]["operator"], model.dim)
    s = cfg["noise"]["strength"]
    bins = num["bins"]
    Z = s * prc_along(lc, S)
    table = backaction_coeffs(lc, model)
    v = float(np.sqrt(np.mean(table.noise_variance())))
    analytic = fp.steady_state_Q(fp.correlation_h(Z), v, bins=bins)

    rng = np.random.default_rng(np.random.SeedSequence(entropy=num["seed"], spawn_key=(0, 3)))
    P = num["n_pairs"]
    offsets = rng.integers(0, lc.grid_size, P)
    psi = np.empty((lc.dim, 2 * P), complex)
    psi[:, 0::2] = lc.states[0][:, None]
    psi[:, 1::2] = lc.states[offsets].T
    ens = run_ensemble(
        model, psi, num["t_end"], num["dt"], 2 * P, num["seed"], noise=NoiseSpec(S, s, True), pairs=True,
        sample_stride=num["sample_stride"], chunk_size=2 * (num["chunk_size"] // 2),
    )
    start = int(np.searchsorted(ens.sample_times, num["burn_in"] - 1e-12))
    ph = ensemble_phases(ens, lc, start_sample=start)
    d_sse = ph[:, 0::2] - ph[:, 1::2]
    Q_sse = fp.histogram_phases(d_sse, bins)

    pm = PhaseModel.from_prc_table(table) if table.backaction else PhaseModel(lc.frequency, np.zeros((1, lc.grid_size)))
    PP = num["phase_pairs"]
    th0 = np.stack([np.zeros(PP), lc.thetas[rng.integers(0, lc.grid_size, PP)]], axis=1)
    stride = max(1, int(round(num["sample_stride"] * num["dt"] / num["phase_dt"])))
    _, _, d_ph = simulate_phase_pair_common(pm, Z, th0, num["t_end"], num["phase_dt"], num["seed"], record_stride=stride)
    times = num["phase_dt"] * stride * np.arange(d_ph.shape[0])
    d_ph = d_ph[times >= num["burn_in"] - 1e-12]
    Q_ph = fp.histogram_phases(d_ph, bins)

    dists = {"sse": Q_sse, "phase_sde": Q_ph, "analytic": analytic}
    thr = num["threshold"]
    return {
        "distributions": dists,
        "v": v,
        "h0": float(fp.correlation_h(Z)[0]),
        "Z_dominant_mode": fp.dominant_mode(Z) if np.any(Z) else 0,
        "l1": {
            "sse_vs_phase_sde": fp.l1_distance(Q_sse, Q_ph),
            "sse_vs_analytic": fp.l1_distance(Q_sse, analytic),
            "phase_sde_vs_analytic": fp.l1_distance(Q_ph, analytic),
        },
        "clusters": {k: fp.count_clusters(d, thr) for k, d in dists.items()},
        "cluster_positions": {k: fp.cluster_positions(d, thr) for k, d in dists.items()},
        "threshold_sensitivity": {k: fp.threshold_sensitivity(d) for k, d in dists.items()},
        "samples": {"sse": int(d_sse.size), "phase_sde": int(d_ph.size)},
    }


def cmd_sync(cfg) -> int:
    out = _out_dir(cfg)
    res = sync_experiment(cfg)
    d = res.pop("distributions")
    write_csv(
        os.path.join(out, "overlay.csv"),
        {"bin_center": d["sse"].centers, "Q_sse": d["sse"].density, "Q_phase_sde": d["phase_sde"].density,
         "Q_analytic": d["analytic"].density},
    )
    write_json(os.path.join(out, "sync.json"), res)
    return 0


def run_validation(cfg) -> dict:
    model = build_model(cfg)
    num, val = cfg["numerics"], cfg["validate"]
    report = {}
    lc = None
    for check in val["checks"]:
        if check == "basis":
            dims = sorted({2, 3, 6, model.dim})
            report[check] = validation.basis_check(dims, val["corrupt_basis_index"])
        elif check == "norm_calculus":
            report[check] = validation.norm_calculus_sweep(model)
        elif check == "lindblad":
            report[check] = validation.lindblad_consistency(model, val["n_traj"], 5.0, num["dt"], num["seed"])
        elif check == "u1":
            lc = lc or get_cycle(cfg, model)
            report[check] = validation.u1_equivariance(lc, model, seed=num["seed"], dt=num["dt"])
        elif check == "dt_halving":
            report[check] = validation.dt_halving(model, val["n_traj"], 5.0, num["dt"], num["seed"])
        elif check == "truncation":
            m = cfg["model"]
            if m["kind"] != "qvdp":
                report[check] = {"pass": True, "skipped": "only defined for the qvdp family"}
                continue
            report[check] = validation.truncation_check(m["delta"], m["gamma_g"], m["gamma_d"], m["N"], val["extra_levels"])
    return {"pass": all(r["pass"] for r in report.values()), "checks": report}


def cmd_validate(cfg) -> int:
    out = _out_dir(cfg)
    verdict = run_validation(cfg)
    write_json(os.path.join(out, "validation.json"), verdict)
    if not verdict["pass"]:
        failed = sorted(k for k, r in verdict["checks"].items() if not r["pass"])
        raise ValidationFailure("failed checks: " + ", ".join(failed))
    return 0


COMMANDS = {
    "limit-cycle": cmd_limit_cycle,
    "prc": cmd_prc,
    "simulate": cmd_simulate,
    "sync": cmd_sync,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qphase", description="Phase reduction of quantum limit-cycle oscillators.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON configuration file")
    p.add_argument("--seed", type=int, help="master seed (overrides numerics.seed)")
    p.add_argument("--out", help="output directory (overrides outputs.dir)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        cfg = resolve_config(raw, args.seed, args.out)
        return COMMANDS[args.command](cfg)
    except QPhaseError as exc:
        print(f"qphase: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
