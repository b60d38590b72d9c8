"""Command-line front end.

Every subcommand reads a configuration file, writes CSV/JSON artifacts and a
``manifest.json`` into ``--out`` and exits with 0 on success, 2 on
configuration errors and 3 on numerical failures (with ``diagnostics.json``).
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy
from scipy.constants import hbar

from . import __version__
from .config import SUBCOMMANDS, UNITS, build_run_config, load_config, parse_grid, validate_config
from .core import (HilbertSpace, ModelParams, QuantumState, default_cutoff, level_dynamics, map_model_to_trap,
                   solve_spectrum)
from .dynamics import (RampProtocol, down_project, propagate_schrodinger, ramp_outcome, ramp_scan,
                       witness_series)
from .errors import ConfigError, ErmError, NumericError, ParameterError
from .export import to_plain, write_csv, write_json
from .observables import (classify_emergent, default_wigner_grid, peres_lattice, reduced_motional,
                          strength_function, wigner)
from .open_system import (blue_sideband_drive, build_dissipators, default_components,
                          extract_vacuum_population, mcwf_evolve, mcwf_expectation, mcwf_ramp)
from .open_system.mcwf import DEFAULT_OBSERVABLES
from .semiclassics import classify_phase, critical_set, phase_map, predict_emergent_counts, smoothed_dos

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

SPECTRUM_COLUMNS = ["lambda", "index", "energy", "parity"]
PERES_COLUMNS = ["energy", "n_mean", "jz_mean", "parity", "entropy", "emergent_flag"]
PHASE_COLUMNS = ["lambda", "delta", "phase", "boundary", "e_min", "e_sad", "v_minus", "v_plus"]
WITNESS_COLUMNS = ["tau", "lambda", "h_mean", "n_mean", "jz_mean", "p0"]
SCAN_COLUMNS = ["axis_value", "p0_tilde", "pdown", "n_mean", "jz_mean", "p0"]
RABI_COLUMNS = ["t_seconds", "jz_mean", "jz_mre"]


class _Run:
    """Collects written artifacts for the manifest."""

    def __init__(self, out: Path):
        self.out = out
        self.outputs = []

    def csv(self, name, rows, columns=None):
        write_csv(self.out / name, rows, columns)
        self.outputs.append(name)

    def json(self, name, obj):
        write_json(self.out / name, obj)
        self.outputs.append(name)


def _opt(cfg, key, default=None, kind=None):
    v = cfg.options.get(key, default)
    if kind is not None and v is not None:
        if kind is float and (isinstance(v, bool) or not isinstance(v, (int, float))):
            raise ConfigError(f"[{cfg.subcommand}] {key} must be a number, got {v!r}")
        if kind is int and (isinstance(v, bool) or not isinstance(v, int)):
            raise ConfigError(f"[{cfg.subcommand}] {key} must be an integer, got {v!r}")
        if kind is bool and not isinstance(v, bool):
            raise ConfigError(f"[{cfg.subcommand}] {key} must be true or false, got {v!r}")
        v = kind(v)
    return v


def _grid(cfg, key, default=None):
    spec = cfg.options.get(key, default)
    if spec is None:
        raise ConfigError(f"[{cfg.subcommand}] {key} is required")
    return parse_grid(spec, f"{cfg.subcommand}.{key}")


def _space(cfg, coupling=None):
    m = cfg.model
    lam = m.coupling if coupling is None else coupling
    return HilbertSpace(cfg.fock_cutoff or default_cutoff(m.system_size, lam))


def _model_dict(m: ModelParams):
    return {"system_size": m.system_size, "coupling": m.coupling, "regime": m.regime,
            "energy_scale_J": m.energy_scale,
            "energy_scale_over_hbar_2pi_hz": None if m.energy_scale is None
            else m.energy_scale / hbar / (2 * math.pi)}


def _critical_dict(lam, reg):
    cs = critical_set(lam, reg)
    ph = classify_phase(lam, reg)
    return {"phase": ph.label.value, "boundary": ph.boundary, "e_vac": cs.e_vac, "e_min": cs.e_min,
            "e_sad": cs.e_sad, "x_c": cs.x_c, "p_c": cs.p_c}


def _protocol(cfg):
    m = cfg.model
    return RampProtocol(m.system_size, m.regime, cfg.lambda_f, cfg.tau_f)


def _tols(cfg):
    return 1e-10 * cfg.tolerance_scale, 1e-12 * cfg.tolerance_scale


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_spectrum(cfg, run):
    m = cfg.model
    space = _space(cfg)
    k = _opt(cfg, "k", None, int)
    spec = solve_spectrum(m, space, k)
    emergent = None
    summary = {"model": _model_dict(m), "fock_cutoff": space.fock_cutoff, "levels": len(spec),
               "critical": _critical_dict(m.coupling, m.regime)}
    if m.coupling * abs(m.regime) > 1:
        cls = classify_emergent(spec, m.coupling, m.regime, m.system_size)
        emergent = cls.indices
        pred = predict_emergent_counts(m.coupling, m.regime, m.system_size)
        summary["emergent"] = {"count": cls.count, "window": list(cls.window), "n_bound": cls.n_bound,
                               "predicted": pred.n_emergent}
    lat = peres_lattice(spec, entropy=_opt(cfg, "entropy", True, bool), emergent=emergent)
    summary["ground"] = {"energy": float(spec.eigenvalues[0]),
                         "n_over_delta": float(spec.n_mean[0] / m.system_size)}
    run.csv("spectrum.csv", spec.rows(), SPECTRUM_COLUMNS)
    run.json("spectrum.json", dict(spec.as_dict(), summary=summary))
    run.csv("peres.csv", lat.rows(), PERES_COLUMNS)
    return summary


def cmd_phase_map(cfg, run):
    lams = _grid(cfg, "couplings", {"start": 0.0, "stop": 6.0, "num": 61})
    regs = _grid(cfg, "regimes", {"start": -1.0, "stop": 1.0, "num": 41})
    rows = phase_map(lams, regs, volumes=_opt(cfg, "volumes", False, bool))
    run.csv("phase_map.csv", rows, PHASE_COLUMNS)
    counts = {}
    for r in rows:
        counts[r["phase"]] = counts.get(r["phase"], 0) + 1
    return {"points": len(rows), "phases": counts}


def cmd_dos(cfg, run):
    m = cfg.model
    space = _space(cfg)
    e_max = _opt(cfg, "energy_max", None, float)
    window = cfg.options.get("window")
    spec = solve_spectrum(m, space, eigenvectors=False,
                          energy_window=None if e_max is None else (-np.inf, e_max))
    dos = smoothed_dos(spec, _opt(cfg, "sigma", None, float),
                       window=None if window is None else tuple(window))
    run.csv("dos.csv", dos.rows(), ["energy", "density"])
    summary = {"model": _model_dict(m), "sigma": dos.sigma, "level_count": dos.level_count,
               "integral": dos.integral(), "critical": _critical_dict(m.coupling, m.regime)}
    run.json("dos.json", summary)
    return summary


def cmd_levels(cfg, run):
    m = cfg.model
    lams = _grid(cfg, "couplings", {"start": 0.0, "stop": 6.0, "num": 121})
    k = _opt(cfg, "k", 60, int)
    lev = level_dynamics(m.system_size, m.regime, lams, k, cfg.fock_cutoff, workers=cfg.workers)
    run.csv("levels.csv", lev.rows(), SPECTRUM_COLUMNS)
    return {"couplings": int(lams.size), "k": k, "system_size": m.system_size, "regime": m.regime}


def cmd_wigner(cfg, run):
    m = cfg.model
    space = _space(cfg)
    states = cfg.options.get("states", [0])
    if not isinstance(states, list) or not all(isinstance(i, int) and i >= 0 for i in states):
        raise ConfigError("[wigner] states must be a list of eigenstate indices")
    points = _opt(cfg, "points", 201, int)
    spec = solve_spectrum(m, space, max(states) + 1)
    grid = default_wigner_grid(m.system_size, m.coupling, m.regime, points)
    extent = _opt(cfg, "extent", None, float)
    if extent is not None:
        grid = np.linspace(-extent, extent, points)
    out = {"model": _model_dict(m), "fock_cutoff": space.fock_cutoff, "states": []}
    for i in states:
        w = wigner(reduced_motional(spec.state(i)), m.system_size, grid, grid)
        run.csv(f"wigner_state{i}.csv", w.rows(), ["x", "p", "w"])
        out["states"].append({"index": i, "energy": float(spec.eigenvalues[i]),
                              "n_mean": float(spec.n_mean[i]), "integral": w.integral(),
                              "min": float(w.values.min()), "max": float(w.values.max())})
    run.json("wigner.json", out)
    return out


def cmd_quench(cfg, run):
    m = cfg.model
    lam_f = cfg.lambda_f
    pr = RampProtocol(m.system_size, m.regime, lam_f, cfg.tau_f or 0.0)
    space = _space(cfg, lam_f)
    rtol, atol = _tols(cfg)
    traj = propagate_schrodinger(pr, space=space, rtol=rtol, atol=atol, samples=2)
    spec = solve_spectrum(m.with_coupling(lam_f), space)
    sf = strength_function(traj.states[-1], spec, broadening=_opt(cfg, "broadening", None, float))
    run.csv("strength.csv", sf.rows(), ["energy", "weight"])
    summary = {"model": _model_dict(m), "lambda_f": lam_f, "tau_f": pr.tau_f,
               "fock_cutoff": space.fock_cutoff, "total": sf.total(), "mean_energy": sf.mean_energy(),
               "critical": _critical_dict(lam_f, m.regime)}
    if sf.broadening:
        lo, hi = float(sf.energies.min()), float(sf.energies.max())
        e_max = _opt(cfg, "energy_max", 1.0, float)
        g = np.linspace(lo - 5 * sf.broadening, min(hi, e_max) + 5 * sf.broadening, 2001)
        run.csv("strength_broadened.csv",
                ({"energy": float(e), "density": float(d)} for e, d in zip(g, sf.broadened(g))),
                ["energy", "density"])
    run.json("strength.json", summary)
    return summary


def cmd_ramp(cfg, run):
    pr = _protocol(cfg)
    space = _space(cfg, cfg.lambda_f)
    rtol, atol = _tols(cfg)
    traj = propagate_schrodinger(pr, space=space, rtol=rtol, atol=atol,
                                 samples=_opt(cfg, "samples", 401, int))
    run.csv("witness.csv", witness_series(traj).rows(), WITNESS_COLUMNS)
    out = {"protocol": {"system_size": pr.system_size, "regime": pr.regime, "lambda_f": pr.lambda_f,
                        "tau_f": pr.tau_f}, "fock_cutoff": space.fock_cutoff, "rtol": rtol, "atol": atol,
           "outcome": ramp_outcome(traj).as_dict()}
    run.json("outcome.json", out)
    return out


def cmd_scan(cfg, run):
    m = cfg.model
    axis = _opt(cfg, "axis", "tau_f")
    grid = _grid(cfg, "grid")
    rtol, atol = _tols(cfg)
    curve = ramp_scan(axis, grid, system_size=m.system_size, lambda_f=cfg.lambda_f, regime=m.regime,
                      tau_f=cfg.tau_f if cfg.tau_f is not None else 10 * math.pi,
                      fock_cutoff=cfg.fock_cutoff, workers=cfg.workers, rtol=rtol, atol=atol)
    run.csv("scan.csv", curve.rows(), SCAN_COLUMNS)
    run.json("scan.json", {"metadata": curve.metadata, "points": int(curve.values.size)})
    return {"axis": axis, "points": int(curve.values.size), "metadata": curve.metadata}


def cmd_mcwf(cfg, run):
    m = cfg.model
    pr = _protocol(cfg)
    n_traj = _opt(cfg, "n_traj", 1000, int)
    obs = tuple(cfg.options.get("observables", DEFAULT_OBSERVABLES))
    kw = dict(dt=_opt(cfg, "dt", 0.1, float), samples=_opt(cfg, "samples", 2, int), observables=obs,
              chunk_size=_opt(cfg, "chunk_size", None, int),
              tail_threshold=_opt(cfg, "tail_threshold", 1e-6, float), workers=cfg.workers)
    if cfg.fock_cutoff:
        # an explicit cutoff is used as given
        space = HilbertSpace(cfg.fock_cutoff)
        noise = build_dissipators(cfg.noise, m.energy_scale, m.system_size, space)
        ens = mcwf_evolve(QuantumState.fock(space, 0, "down"), pr, noise, n_traj, cfg.seed, **kw)
    else:
        ens = mcwf_ramp(pr, cfg.noise, m.energy_scale, n_traj, cfg.seed, **kw)
        space = ens.space
    results = {name: mcwf_expectation(ens, name).as_dict() for name in obs}
    summary = {"model": _model_dict(m), "noise": cfg.noise.as_dict(),
               "protocol": {"lambda_f": pr.lambda_f, "tau_f": pr.tau_f}, "fock_cutoff": space.fock_cutoff,
               "settings": ens.settings, "results": results, "jumps": ens.jump_statistics(),
               "tail_mass": ens.tail_mass(), "incidents": len(ens.incidents)}
    run.json("mcwf_summary.json", summary)
    s = ens.series
    cols = ["tau"] + [f"{n}_{q}" for n in s.names for q in ("mean", "mre")]
    mre = s.mre()
    rows = []
    for j, t in enumerate(s.times):
        r = {"tau": float(t)}
        for i, n in enumerate(s.names):
            r[f"{n}_mean"] = float(s.mean[i, j])
            r[f"{n}_mre"] = float(mre[i, j])
        rows.append(r)
    run.csv("mcwf_series.csv", rows, cols)
    return summary


def _eta_omega2(cfg):
    v = cfg.options.get("eta_omega2")
    if v is None:
        if cfg.trap is not None:
            return cfg.trap.lamb_dicke * cfg.trap.rabi_blue
        raise ConfigError("[diagnose] eta_omega2 is required without a trap block")
    units = cfg.options.get("units", cfg.raw.get("units"))
    if units not in UNITS:
        raise ConfigError("[diagnose] eta_omega2 needs units = '2pi_hz' or 'rad_s'")
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
        raise ConfigError("[diagnose] eta_omega2 must be positive")
    return UNITS[units] * float(v)


def cmd_diagnose(cfg, run):
    pr = _protocol(cfg)
    space = _space(cfg, cfg.lambda_f)
    rtol, atol = _tols(cfg)
    traj = propagate_schrodinger(pr, space=space, rtol=rtol, atol=atol, samples=2)
    outcome = ramp_outcome(traj)
    proj = down_project(traj.states[-1])
    eo = _eta_omega2(cfg)
    periods = _opt(cfg, "periods", 10.0, float)
    points = _opt(cfg, "points", 801, int)
    t = np.linspace(0.0, periods * 2 * math.pi / eo, points)
    # keep the motional state only as far as it carries population
    pops = np.abs(proj.motional) ** 2
    keep = int(np.flatnonzero(np.cumsum(pops[::-1])[::-1] > 1e-12)[-1]) + 1
    chi = proj.motional[:keep] / np.linalg.norm(proj.motional[:keep])
    nc = _opt(cfg, "components", None, int) or default_components(np.abs(chi) ** 2)
    out = {"protocol": {"system_size": pr.system_size, "regime": pr.regime, "lambda_f": pr.lambda_f,
                        "tau_f": pr.tau_f}, "eta_omega2_rad_s": eo, "components": nc,
           "direct": {"p0_tilde": proj.p0_tilde, "p_down": proj.p_down, "p0": outcome.p0}}
    sig = blue_sideband_drive(chi, eo, t)
    run.csv("rabi_unitary.csv", sig.rows(), RABI_COLUMNS)
    fit = extract_vacuum_population(t, sig.jz_mean, eo, nc)
    out["unitary_fit"] = fit.as_dict()
    if _opt(cfg, "noisy", False, bool):
        if cfg.noise is None or cfg.seed is None:
            raise ConfigError("the noisy diagnostic needs a noise block and a seed")
        nsig = blue_sideband_drive(chi, eo, t, noise=cfg.noise, n_traj=_opt(cfg, "n_traj", 1000, int),
                                   seed=cfg.seed, dt=_opt(cfg, "dt", 0.05, float))
        run.csv("rabi_noisy.csv", nsig.rows(), RABI_COLUMNS)
        nfit = extract_vacuum_population(t, nsig.jz_mean, eo, nc, damping=_opt(cfg, "damping", True, bool),
                                         sigma=nsig.standard_error)
        out["noisy_fit"] = nfit.as_dict()
        out["noise"] = cfg.noise.as_dict()
    run.json("diagnose.json", out)
    return {k: v for k, v in out.items() if k not in ("unitary_fit", "noisy_fit")} | {
        "p0_unitary_fit": fit.p0, "p0_noisy_fit": out.get("noisy_fit", {}).get("p0")}


def cmd_map_params(cfg, run):
    if cfg.trap is not None:
        out = {"model": _model_dict(cfg.model), "feasibility": cfg.feasibility}
        if cfg.feasibility and cfg.feasibility.get("tau_f") is not None:
            out["tau_f_over_2pi"] = cfg.feasibility["tau_f"] / (2 * math.pi)
    else:
        m = cfg.model
        eta = _opt(cfg, "lamb_dicke", None, float)
        nu = _opt(cfg, "secular_freq", None, float)
        if m.energy_scale is None or eta is None or nu is None:
            raise ConfigError("[map_params] the inverse mapping needs model.energy_scale, "
                              "lamb_dicke and secular_freq")
        units = cfg.options.get("units", cfg.raw.get("units"))
        if units not in UNITS:
            raise ConfigError("[map_params] secular_freq needs units = '2pi_hz' or 'rad_s'")
        trap = map_model_to_trap(m, eta, UNITS[units] * nu)
        f = 2 * math.pi
        out = {"model": _model_dict(m),
               "trap_2pi_hz": {"secular_freq": trap.secular_freq / f, "red_detuning": trap.red_detuning / f,
                               "blue_detuning": trap.blue_detuning / f, "lamb_dicke": trap.lamb_dicke,
                               "eta_rabi_red": trap.lamb_dicke * trap.rabi_red / f,
                               "eta_rabi_blue": trap.lamb_dicke * trap.rabi_blue / f}}
    run.json("params.json", out)
    return out


COMMANDS = {
    "spectrum": cmd_spectrum, "phase-map": cmd_phase_map, "dos": cmd_dos, "levels": cmd_levels,
    "wigner": cmd_wigner, "quench": cmd_quench, "ramp": cmd_ramp, "scan": cmd_scan, "mcwf": cmd_mcwf,
    "diagnose": cmd_diagnose, "map-params": cmd_map_params,
}


# --------------------------------------------------------------------------
# driver
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ermsim", description="Extended Rabi model simulations.")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, metavar="PATH", help="TOML or JSON run configuration")
    ap.add_argument("--out", default="ermsim-out", metavar="DIR", help="output directory")
    ap.add_argument("--seed", type=int, default=None, metavar="U64", help="master seed (trajectory runs)")
    ap.add_argument("--workers", type=int, default=None, metavar="N", help="parallel workers")
    ap.add_argument("--tolerance-scale", type=float, default=None, metavar="F",
                    help="multiply integrator tolerances by F")
    return ap


def _versions():
    return {"ermsim": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    started = time.perf_counter()
    manifest = {"subcommand": args.subcommand, "config_path": str(args.config),
                "started_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
                "versions": _versions(), "seed": args.seed, "workers": args.workers,
                "tolerance_scale": args.tolerance_scale, "config": None}
    run = _Run(out)
    status = EXIT_OK
    summary = None
    try:
        out.mkdir(parents=True, exist_ok=True)
        raw = load_config(args.config)
        manifest["config"] = raw
        overrides = dict(seed=args.seed, workers=args.workers, tolerance_scale=args.tolerance_scale)
        if args.subcommand == "validate":
            summary = validate_config(raw, raw.get("subcommand"), **overrides)
            run.json("validation.json", summary)
            status = EXIT_OK if summary["valid"] else EXIT_CONFIG
        else:
            cfg, issues = build_run_config(raw, args.subcommand, **overrides)
            if issues:
                raise ConfigError("invalid configuration: " + "; ".join(issues), {"issues": issues})
            manifest.update(seed=cfg.seed, workers=cfg.workers, tolerance_scale=cfg.tolerance_scale,
                            warnings=cfg.warnings)
            summary = COMMANDS[args.subcommand](cfg, run)
    except (ConfigError, ParameterError) as exc:
        status = EXIT_CONFIG
        manifest["error"] = {"type": type(exc).__name__, "message": str(exc)}
    except (NumericError, ErmError, np.linalg.LinAlgError, FloatingPointError) as exc:
        status = EXIT_NUMERIC
        diag = getattr(exc, "diagnostics", None) or {}
        manifest["error"] = {"type": type(exc).__name__, "message": str(exc)}
        if out.is_dir():
            run.json("diagnostics.json", {"error": type(exc).__name__, "message": str(exc),
                                          "diagnostics": diag})
    manifest["status"] = status
    manifest["wall_time_s"] = time.perf_counter() - started
    manifest["outputs"] = list(run.outputs)
    if out.is_dir():
        write_json(out / "manifest.json", manifest)
    if "error" in manifest:
        print(f"ermsim {args.subcommand}: {manifest['error']['type']}: {manifest['error']['message']}",
              file=sys.stderr)
    elif summary is not None:
        print(json.dumps(to_plain(summary), sort_keys=True, indent=2))
    return status


if __name__ == "__main__":
    sys.exit(main())
