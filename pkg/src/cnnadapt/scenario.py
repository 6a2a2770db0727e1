"""Scenario files: strict TOML loading, validation, and re-emission.

A scenario file either spells out every section or names a preset and
overrides individual fields.  Unknown keys are rejected with the file
and the offending key path; cross-field constraints (grid multiples,
Hurwitz designer matrix, dimension chain) are checked on load.
Re-emitting a loaded scenario preserves every effective value, so a
file can be round-tripped for archival with the run outputs.
"""

from __future__ import annotations

import math
from dataclasses import replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

import numpy as np

from .controller import ControllerParams
from .errors import ConfigError
from .network import ConvLayerSpec, NetworkSpec
from .presets import PRESET_NAMES, preset
from .sim import (
    Scenario,
    SimConfig,
    default_trajectory,
    make_builtin_plant,
    validate_scenario,
)

_TOP_KEYS = {"name", "preset", "network", "controller", "plant", "sim", "output"}
_SECTION_KEYS = {
    "network": {
        "input_rows", "input_cols", "conv_layers", "fc_widths",
        "alpha1", "alpha2", "activation", "stack_dt",
    },
    "controller": {
        "k_s", "a_c", "rho", "gamma", "gamma_fc", "gamma_conv",
        "theta_bar", "sgn_mode", "sgn_eps", "delta_bar",
    },
    "plant": {"disturbance_time"},
    "sim": {
        "dt", "t_end", "seed", "x0", "init_weight_range",
        "record_dt", "divergence_limit", "oracle_mode", "engine",
    },
    "output": {"stem"},
}


def _check_keys(doc: dict, path: str) -> None:
    for section, keys in _SECTION_KEYS.items():
        body = doc.get(section, {})
        if not isinstance(body, dict):
            raise ConfigError(f"{path}: [{section}] must be a table")
        unknown = set(body) - keys
        if unknown:
            raise ConfigError(
                f"{path}: unknown key(s) in [{section}]: "
                + ", ".join(f"{section}.{k}" for k in sorted(unknown))
            )
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown top-level key(s): "
                          + ", ".join(sorted(unknown)))


def _build_network(body: dict, base: NetworkSpec | None, path: str) -> NetworkSpec:
    if base is None:
        required = {"input_rows", "input_cols", "conv_layers", "fc_widths",
                    "alpha1", "alpha2"}
        missing = required - set(body)
        if missing:
            raise ConfigError(
                f"{path}: [network] missing key(s): " + ", ".join(sorted(missing))
            )
    fields = {}
    if base is not None:
        fields = {
            "input_rows": base.input_rows,
            "input_cols": base.input_cols,
            "conv_layers": base.conv_layers,
            "fc_widths": base.fc_widths,
            "alpha1": base.alpha1,
            "alpha2": base.alpha2,
            "activation": base.activation,
        }
    for key in ("input_rows", "input_cols"):
        if key in body:
            fields[key] = int(body[key])
    if "conv_layers" in body:
        layers = []
        for i, triple in enumerate(body["conv_layers"]):
            if len(triple) != 3:
                raise ConfigError(
                    f"{path}: network.conv_layers[{i}] must be "
                    f"[filter_rows, filter_cols, filter_count]"
                )
            layers.append(ConvLayerSpec(int(triple[0]), int(triple[1]),
                                        int(triple[2])))
        fields["conv_layers"] = tuple(layers)
    if "fc_widths" in body:
        fields["fc_widths"] = tuple(int(w) for w in body["fc_widths"])
    for key in ("alpha1", "alpha2"):
        if key in body:
            fields[key] = float(body[key])
    if "activation" in body:
        fields["activation"] = str(body["activation"])
    return NetworkSpec(**fields)


def _build_controller(
    body: dict, base: ControllerParams | None, dim: int, path: str
) -> ControllerParams:
    if "gamma" in body and ("gamma_fc" in body or "gamma_conv" in body):
        raise ConfigError(
            f"{path}: give controller.gamma or gamma_fc/gamma_conv, not both"
        )
    if base is None:
        required = {"k_s", "a_c", "rho"}
        missing = required - set(body)
        if missing:
            raise ConfigError(
                f"{path}: [controller] missing key(s): "
                + ", ".join(sorted(missing))
            )
        if "gamma" not in body and not {"gamma_fc", "gamma_conv"} <= set(body):
            raise ConfigError(f"{path}: [controller] needs gamma (or both "
                              f"gamma_fc and gamma_conv)")
    fields = {}
    if base is not None:
        fields = {
            "k_s": base.k_s,
            "A_c": base.A_c,
            "gamma_fc": base.gamma_fc,
            "gamma_conv": base.gamma_conv,
            "rho": base.rho,
            "theta_bar": base.theta_bar,
            "sgn_mode": base.sgn_mode,
            "sgn_eps": base.sgn_eps,
        }
    if "a_c" in body:
        a_c = body["a_c"]
        if isinstance(a_c, (int, float)):
            fields["A_c"] = float(a_c) * np.eye(dim)
        else:
            fields["A_c"] = np.asarray(a_c, dtype=float)
    if "gamma" in body:
        fields["gamma_fc"] = fields["gamma_conv"] = float(body["gamma"])
    if "gamma_fc" in body:
        fields["gamma_fc"] = float(body["gamma_fc"])
    if "gamma_conv" in body:
        fields["gamma_conv"] = float(body["gamma_conv"])
    for key, attr in (("k_s", "k_s"), ("rho", "rho"), ("theta_bar", "theta_bar"),
                      ("sgn_eps", "sgn_eps")):
        if key in body:
            fields[attr] = float(body[key])
    if "sgn_mode" in body:
        fields["sgn_mode"] = str(body["sgn_mode"])
    return ControllerParams(**fields)


def _build_sim(body: dict, base: SimConfig, path: str) -> SimConfig:
    cfg = base
    simple = {
        "dt": float, "t_end": float, "seed": int,
        "record_dt": float, "divergence_limit": float,
    }
    updates = {}
    for key, conv in simple.items():
        if key in body:
            updates[key] = conv(body[key])
    if "x0" in body:
        updates["x0"] = np.asarray(body["x0"], dtype=float)
    if "init_weight_range" in body:
        lo, hi = body["init_weight_range"]
        updates["init_weight_low"] = float(lo)
        updates["init_weight_high"] = float(hi)
    return replace(cfg, **updates)


def load_scenario(path) -> Scenario:
    """Load, resolve against any named preset, and validate a scenario."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"scenario file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: TOML parse error: {exc}")
    _check_keys(doc, str(path))

    base: Scenario | None = None
    if "preset" in doc:
        name = str(doc["preset"])
        if name not in PRESET_NAMES:
            raise ConfigError(
                f"{path}: unknown preset {name!r}; available: "
                + ", ".join(PRESET_NAMES)
            )
        base = preset(name)

    net_body = doc.get("network", {})
    network = _build_network(net_body, base.network if base else None, str(path))
    dim = network.output_dim

    controller = _build_controller(
        doc.get("controller", {}), base.controller if base else None, dim, str(path)
    )

    if "stack_dt" in net_body:
        stack_dt = float(net_body["stack_dt"])
    elif base is not None:
        stack_dt = base.stack_dt
    else:
        raise ConfigError(f"{path}: [network] missing key(s): stack_dt")

    sim_body = doc.get("sim", {})
    sim_cfg = _build_sim(sim_body, base.sim if base else SimConfig(), str(path))

    t_g = math.inf
    if base is not None:
        t_g = base.plant.t_g
    if "disturbance_time" in doc.get("plant", {}):
        t_g = float(doc["plant"]["disturbance_time"])

    oracle_mode = bool(sim_body.get("oracle_mode",
                                    base.oracle_mode if base else False))
    engine = str(sim_body.get("engine", base.engine if base else "auto"))
    delta_bar = float(doc.get("controller", {}).get(
        "delta_bar", base.delta_bar if base else 0.0))

    name = str(doc.get("name", base.name if base else path.stem))
    sc = Scenario(
        name=name,
        network=network,
        controller=controller,
        stack_dt=stack_dt,
        sim=sim_cfg,
        plant=make_builtin_plant(t_g),
        trajectory=default_trajectory(),
        oracle_mode=oracle_mode,
        delta_bar=delta_bar,
        engine=engine,
    )
    try:
        validate_scenario(sc)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}")
    return sc


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    raise TypeError(f"cannot format {type(value)} for TOML")


def emit_scenario(sc: Scenario, stem: str | None = None) -> str:
    """Full-form TOML text with every effective value spelled out."""
    net, ctl, cfg = sc.network, sc.controller, sc.sim
    lines = [f"name = {_fmt(sc.name)}", ""]
    lines += [
        "[network]",
        f"input_rows = {_fmt(net.input_rows)}",
        f"input_cols = {_fmt(net.input_cols)}",
        "conv_layers = ["
        + ", ".join(_fmt([l.rows, l.cols, l.count]) for l in net.conv_layers)
        + "]",
        f"fc_widths = {_fmt(list(net.fc_widths))}",
        f"alpha1 = {_fmt(net.alpha1)}",
        f"alpha2 = {_fmt(net.alpha2)}",
        f"activation = {_fmt(net.activation)}",
        f"stack_dt = {_fmt(sc.stack_dt)}",
        "",
        "[controller]",
        f"k_s = {_fmt(ctl.k_s)}",
        f"a_c = {_fmt([list(row) for row in ctl.A_c])}",
        f"rho = {_fmt(ctl.rho)}",
        f"gamma_fc = {_fmt(ctl.gamma_fc)}",
        f"gamma_conv = {_fmt(ctl.gamma_conv)}",
        f"theta_bar = {_fmt(ctl.theta_bar)}",
        f"sgn_mode = {_fmt(ctl.sgn_mode)}",
        f"sgn_eps = {_fmt(ctl.sgn_eps)}",
        f"delta_bar = {_fmt(sc.delta_bar)}",
        "",
        "[plant]",
        f"disturbance_time = {_fmt(sc.plant.t_g)}",
        "",
        "[sim]",
        f"dt = {_fmt(cfg.dt)}",
        f"t_end = {_fmt(cfg.t_end)}",
        f"seed = {_fmt(cfg.seed)}",
        f"x0 = {_fmt(cfg.x0)}",
        f"init_weight_range = {_fmt([cfg.init_weight_low, cfg.init_weight_high])}",
        f"record_dt = {_fmt(cfg.record_dt)}",
        f"divergence_limit = {_fmt(cfg.divergence_limit)}",
        f"oracle_mode = {_fmt(sc.oracle_mode)}",
        f"engine = {_fmt(sc.engine)}",
    ]
    if stem is not None:
        lines += ["", "[output]", f"stem = {_fmt(stem)}"]
    return "\n".join(lines) + "\n"


def output_stem(path, sc: Scenario) -> str:
    """File-name stem for run outputs: [output].stem, else the file stem."""
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    return str(doc.get("output", {}).get("stem", Path(path).stem))
