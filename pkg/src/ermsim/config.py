"""Run configuration: parsing, unit handling and validation.

A configuration is a TOML or JSON document with optional blocks ``model``
or ``trap`` (exactly one), ``space``, ``protocol``, ``noise`` and one block
per subcommand holding its options.  Angular frequencies are entered as
plain numbers together with a ``units`` key, either ``"2pi_hz"`` (value is
f with omega = 2 pi f) or ``"rad_s"``; rates in the ``noise`` block are in
1/s.  Durations are in seconds.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import tomli
from scipy.constants import hbar

from .core import ModelParams, TrapParams, check_feasibility, map_trap_to_model
from .errors import ConfigError, ErmError
from .open_system.noise import DissipatorSpec

UNITS = {"2pi_hz": 2.0 * math.pi, "rad_s": 1.0}

SUBCOMMANDS = ("spectrum", "phase-map", "dos", "levels", "wigner", "quench", "ramp", "scan",
               "mcwf", "diagnose", "map-params", "validate")

_BLOCKS = {"model", "trap", "space", "protocol", "noise", "units", "subcommand", "seed", "workers",
           "tolerance_scale"} | {s.replace("-", "_") for s in SUBCOMMANDS}

# which top-level blocks each subcommand needs
_NEEDS = {
    "spectrum": {"model"}, "dos": {"model"}, "levels": {"model"}, "wigner": {"model"},
    "quench": {"model"}, "ramp": {"model", "protocol"}, "scan": {"model"},
    "mcwf": {"model", "protocol", "noise", "seed", "energy_scale"},
    "diagnose": {"model", "protocol"}, "map-params": {"trap_or_model"}, "phase-map": set(),
}


def load_config(path) -> dict:
    """Read a TOML or JSON configuration file into a dict."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if path.suffix.lower() == ".json":
        loaders = [json.loads]
    elif path.suffix.lower() == ".toml":
        loaders = [tomli.loads]
    else:
        loaders = [json.loads, tomli.loads]
    errors = []
    for load in loaders:
        try:
            data = load(text)
        except (json.JSONDecodeError, tomli.TOMLDecodeError) as exc:
            errors.append(str(exc))
            continue
        if not isinstance(data, dict):
            raise ConfigError("config root must be a table/object")
        return data
    raise ConfigError(f"cannot parse config {path}: {'; '.join(errors)}")


def _number(block, key, issues, where, *, default=None, required=False):
    if key not in block:
        if required:
            issues.append(f"{where}.{key} is required")
        return default
    v = block[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        issues.append(f"{where}.{key} must be a finite number, got {v!r}")
        return default
    return float(v)


def _unit_factor(block, top_units, issues, where):
    units = block.get("units", top_units)
    if units is None:
        issues.append(f"{where}: angular frequencies need an explicit units key ('2pi_hz' or 'rad_s')")
        return None
    if units not in UNITS:
        issues.append(f"{where}.units must be one of {sorted(UNITS)}, got {units!r}")
        return None
    return UNITS[units]


def parse_grid(spec, where="grid", *, issues=None) -> Optional[np.ndarray]:
    """A list of numbers or a table ``{start, stop, num, scale}``; ``scale`` may be ``"pi"``."""
    own = issues is None
    issues = [] if own else issues
    out = None
    if isinstance(spec, dict):
        start = _number(spec, "start", issues, where, required=True)
        stop = _number(spec, "stop", issues, where, required=True)
        num = spec.get("num")
        scale = spec.get("scale", 1.0)
        if scale == "pi":
            scale = math.pi
        if not isinstance(num, int) or isinstance(num, bool) or num < 1:
            issues.append(f"{where}.num must be a positive integer")
        elif not isinstance(scale, (int, float)) or isinstance(scale, bool):
            issues.append(f"{where}.scale must be a number or 'pi'")
        elif start is not None and stop is not None:
            out = float(scale) * np.linspace(start, stop, num)
    elif isinstance(spec, (list, tuple)) and spec:
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in spec):
            out = np.asarray(spec, float)
        else:
            issues.append(f"{where} must contain numbers only")
    else:
        issues.append(f"{where} must be a non-empty list or a {{start, stop, num}} table")
    if own and issues:
        raise ConfigError("; ".join(issues), {"issues": issues})
    return out


@dataclass
class RunConfig:
    subcommand: str
    model: Optional[ModelParams]
    trap: Optional[TrapParams]
    ramp_duration: Optional[float]
    fock_cutoff: Optional[int]
    tau_f: Optional[float]
    lambda_f: Optional[float]
    noise: Optional[DissipatorSpec]
    seed: Optional[int]
    workers: int
    tolerance_scale: float
    options: dict
    raw: dict
    feasibility: Optional[dict] = None
    warnings: list = field(default_factory=list)

    @property
    def energy_scale(self) -> Optional[float]:
        return None if self.model is None else self.model.energy_scale


def _parse_model(block, top_units, issues):
    where = "model"
    d = _number(block, "system_size", issues, where, required=True)
    lam = _number(block, "coupling", issues, where, default=0.0)
    reg = _number(block, "regime", issues, where, required=True)
    eps = None
    if "energy_scale" in block:
        f = _unit_factor(block, top_units, issues, where)
        v = _number(block, "energy_scale", issues, where)
        if f is not None and v is not None:
            eps = hbar * f * v          # block value is eps/hbar
    if None in (d, lam, reg) or len(issues):
        return None
    try:
        return ModelParams(d, lam, reg, eps)
    except ErmError as exc:
        issues.append(f"model: {exc}")
        return None


def _parse_trap(block, top_units, issues):
    where = "trap"
    f = _unit_factor(block, top_units, issues, where)
    vals = {k: _number(block, k, issues, where, required=True)
            for k in ("secular_freq", "red_detuning", "blue_detuning")}
    eta = _number(block, "lamb_dicke", issues, where, required=True)
    bare = "rabi_red" in block or "rabi_blue" in block
    side = "eta_rabi_red" in block or "eta_rabi_blue" in block
    if bare == side:
        issues.append("trap: give either rabi_red/rabi_blue or eta_rabi_red/eta_rabi_blue")
        return None
    pre = "" if bare else "eta_"
    r1 = _number(block, pre + "rabi_red", issues, where, required=True)
    r2 = _number(block, pre + "rabi_blue", issues, where, required=True)
    q = _number(block, "qubit_freq", issues, where)
    if f is None or None in vals.values() or None in (eta, r1, r2):
        return None
    try:
        if not eta > 0:
            raise ConfigError(f"Lamb-Dicke parameter must be positive, got {eta}")
        ctor = TrapParams if bare else TrapParams.from_sideband_rabi
        return ctor(f * vals["secular_freq"], f * vals["red_detuning"], f * vals["blue_detuning"], eta,
                    f * r1, f * r2, None if q is None else f * q)
    except ErmError as exc:
        issues.append(f"trap: {exc}")
        return None


def _parse_noise(block, issues):
    where = "noise"
    if block.get("preset") == "reference":
        return DissipatorSpec.reference()
    if "preset" in block:
        issues.append(f"noise.preset must be 'reference', got {block['preset']!r}")
        return None
    gm = _number(block, "motional_dephasing", issues, where, default=0.0)
    gq = _number(block, "qubit_dephasing", issues, where, default=0.0)
    try:
        if "gamma" in block or "n_th" in block:
            g = _number(block, "gamma", issues, where, required=True)
            nth = _number(block, "n_th", issues, where, required=True)
            if None in (g, nth):
                return None
            return DissipatorSpec.from_bath(gm, gq, g, nth)
        heat = _number(block, "heating_rate", issues, where, default=0.0)
        damp = _number(block, "damping_rate", issues, where)
        return DissipatorSpec(gm, gq, heat, damp)
    except ErmError as exc:
        issues.append(f"noise: {exc}")
        return None


def _int(v, name, issues, *, minimum=0):
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        issues.append(f"{name} must be an integer >= {minimum}, got {v!r}")
        return None
    return v


def build_run_config(raw: dict, subcommand: str, *, seed=None, workers=None,
                     tolerance_scale=None) -> tuple:
    """Parse ``raw`` for ``subcommand``; returns (RunConfig or None, issues)."""
    issues = []
    if subcommand not in SUBCOMMANDS:
        issues.append(f"unknown subcommand {subcommand!r}")
        return None, issues
    for key in raw:
        if key not in _BLOCKS:
            issues.append(f"unknown top-level key {key!r}")
    top_units = raw.get("units")
    if top_units is not None and top_units not in UNITS:
        issues.append(f"units must be one of {sorted(UNITS)}, got {top_units!r}")
        top_units = None
    target = raw.get("subcommand", subcommand) if subcommand == "validate" else subcommand

    model = trap = None
    ramp_duration = None
    feas = None
    if "model" in raw and "trap" in raw:
        issues.append("give exactly one of the model and trap blocks")
    elif "trap" in raw:
        trap = _parse_trap(raw["trap"], top_units, issues)
        ramp_duration = _number(raw["trap"], "ramp_duration", issues, "trap")
        if trap is not None:
            feas = check_feasibility(trap, ramp_duration).as_dict()
            try:
                model = map_trap_to_model(trap)
            except ErmError as exc:
                issues.append(f"trap: {exc}")
    elif "model" in raw:
        sub = []
        model = _parse_model(raw["model"], top_units, sub)
        issues += sub

    space = raw.get("space", {})
    cutoff = _int(space.get("fock_cutoff"), "space.fock_cutoff", issues, minimum=1)

    tau_f = lambda_f = None
    if "protocol" in raw:
        pr = raw["protocol"]
        if "tau_f" in pr and "tau_f_over_pi" in pr:
            issues.append("protocol: give tau_f or tau_f_over_pi, not both")
        tau_f = _number(pr, "tau_f", issues, "protocol")
        if "tau_f_over_pi" in pr:
            v = _number(pr, "tau_f_over_pi", issues, "protocol")
            tau_f = None if v is None else math.pi * v
        if "duration" in pr:
            t = _number(pr, "duration", issues, "protocol")
            if model is None or model.energy_scale is None:
                issues.append("protocol.duration (seconds) needs an energy scale")
            elif t is not None:
                tau_f = model.energy_scale * t * math.sqrt(model.system_size) / hbar
        lambda_f = _number(pr, "lambda_f", issues, "protocol")
        if tau_f is not None and tau_f < 0:
            issues.append("protocol.tau_f must be non-negative")
    if tau_f is None and ramp_duration is not None and model is not None:
        tau_f = model.energy_scale * ramp_duration * math.sqrt(model.system_size) / hbar
    if lambda_f is None and model is not None:
        lambda_f = model.coupling

    noise = _parse_noise(raw["noise"], issues) if "noise" in raw else None

    if seed is None:
        seed = raw.get("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int)
                             or not 0 <= seed < 2 ** 64):
        issues.append(f"seed must be an unsigned 64-bit integer, got {seed!r}")
        seed = None
    if workers is None:
        workers = raw.get("workers", 1)
    workers = _int(workers, "workers", issues, minimum=1) or 1
    if tolerance_scale is None:
        tolerance_scale = raw.get("tolerance_scale", 1.0)
    if isinstance(tolerance_scale, bool) or not isinstance(tolerance_scale, (int, float)) \
            or not tolerance_scale > 0:
        issues.append(f"tolerance_scale must be positive, got {tolerance_scale!r}")
        tolerance_scale = 1.0

    needs = _NEEDS.get(target, set())
    if "model" in needs and model is None and not any("model" in i or "trap" in i for i in issues):
        issues.append(f"{target} needs a model or trap block")
    if "trap_or_model" in needs and trap is None and model is None:
        issues.append(f"{target} needs a trap block (or a model block with energy_scale)")
    if "protocol" in needs and tau_f is None:
        issues.append(f"{target} needs protocol.tau_f (or tau_f_over_pi, or a duration)")
    if "noise" in needs and noise is None:
        issues.append(f"{target} needs a noise block")
    if "seed" in needs and seed is None:
        issues.append("seed mandatory for trajectory runs (give --seed or a top-level seed)")
    if "energy_scale" in needs and model is not None and model.energy_scale is None:
        issues.append(f"{target} needs model.energy_scale (eps/hbar) or a trap block")
    if lambda_f is not None and model is not None and not lambda_f >= 0:
        issues.append("protocol.lambda_f must be non-negative")

    options = raw.get(target.replace("-", "_"), {})
    if not isinstance(options, dict):
        issues.append(f"[{target}] must be a table")
        options = {}
    if issues:
        return None, issues
    cfg = RunConfig(target, model, trap, ramp_duration, cutoff, tau_f, lambda_f, noise, seed,
                    workers, float(tolerance_scale), options, raw, feas)
    if feas is not None and feas["status"] != "pass":
        cfg.warnings.append(f"feasibility status {feas['status']}: {feas['messages']}")
    return cfg, issues


def validate_config(raw: dict, subcommand: Optional[str] = None, **overrides) -> dict:
    """Report-only validation; no computation is performed."""
    target = subcommand or raw.get("subcommand")
    if target is None:
        return {"valid": False, "issues": ["no subcommand given (set subcommand = ... in the config)"],
                "subcommand": None, "feasibility": None}
    cfg, issues = build_run_config(raw, target, **overrides)
    report = {"valid": not issues, "issues": issues, "subcommand": target,
              "feasibility": None if cfg is None else cfg.feasibility,
              "warnings": [] if cfg is None else cfg.warnings}
    if cfg is not None and cfg.model is not None:
        m = cfg.model
        report["model"] = {"system_size": m.system_size, "coupling": m.coupling, "regime": m.regime,
                           "energy_scale_over_hbar_2pi_hz": None if m.energy_scale is None
                           else m.energy_scale / hbar / (2 * math.pi)}
    if cfg is None and "trap" in raw:
        # still report feasibility for a malformed but parseable trap block
        sub = []
        trap = _parse_trap(raw["trap"], raw.get("units"), sub)
        if trap is not None:
            report["feasibility"] = check_feasibility(trap).as_dict()
    return report
