"""Flat key = value configuration with section-prefixed keys.

The format is one `section.key = value` pair per line, `#` comments, blank
lines ignored.  Types are fixed by the defaults table; unknown keys are
rejected so typos fail loudly.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


class ConfigError(ValueError):
    """Malformed config text, unknown key, or missing required key."""


DEFAULTS: dict[str, float | int | str] = {
    # static field and register couplings (kHz, G)
    "system.b_field_gauss": 480.0,
    "system.gamma_c13_khz_per_gauss": 1.0705,
    "system.a_par_1_khz": -77.02,
    "system.a_perp_1_khz": 114.5,
    "system.a_par_2_khz": 71.03,
    "system.a_perp_2_khz": 58.7,
    "system.t1_electron_ms": 2.5,
    # gate synthesis
    "gates.resonance_order": 3,
    "gates.angle_tolerance": 0.05,
    "gates.spectator_guard": 0.05,
    "gates.uncond_x_pulses": 8,
    "gates.uncond_z_pulses": 4,
    # stochastic environment
    "noise.sigma_b_gauss": 0.15,
    "noise.rf_rate_per_ms": 10.0,
    "noise.rf_spacing_khz": 0.25,
    "noise.rf_bandwidth_khz": 20.0,
    "noise.rf_amplitude_scale": 0.52,
    "noise.gate_on_delay_us": 5.0,
    "noise.gate_off_early_us": 5.0,
    # storage trajectory ensemble
    "storage.dt_us": 0.5,
    "storage.trajectories": 200,
    "storage.t_max_ms": 4.0,
    "storage.n_times": 8,
    # initialization populations (desired, mixed, other-spin, charge);
    # p1 + p2 = 0.74 puts the single-spin init/readout fidelity at 0.87
    "readout.p1": 0.66,
    "readout.p2": 0.08,
    "readout.p3": 0.13,
    "readout.p4": 0.13,
    "readout.scenario": "no-memory",
    "readout.init_error_on": 1,
    # tomography
    "tomo.shots": 1000000,
    "tomo.exact_expectations": 1,
    # experiment defaults
    "experiment.seed": 7,
    "experiment.phi": 3.141592653589793,
}


def parse_config(text: str) -> dict:
    """Parse flat key = value text against the defaults table."""
    out: dict[str, float | int | str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        ref = DEFAULTS[key]
        try:
            if isinstance(ref, int):
                out[key] = int(val)
            elif isinstance(ref, float):
                out[key] = float(val)
            else:
                out[key] = val
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {val!r}") from exc
    return out


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> dict:
    """Defaults, optionally updated from a file and an override dict."""
    cfg = dict(DEFAULTS)
    if path is not None:
        cfg.update(parse_config(Path(path).read_text()))
    if overrides:
        for key in overrides:
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
        cfg.update(overrides)
    return cfg


def dump_config(cfg: dict) -> str:
    """Canonical text form (sorted keys), suitable for hashing and diffing."""
    lines = []
    for key in sorted(cfg):
        val = cfg[key]
        if isinstance(val, float):
            lines.append(f"{key} = {val!r}")
        else:
            lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: dict) -> str:
    """Stable short hash of the canonical config text."""
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()[:16]


def config_json(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, indent=2)
