"""Run configuration: flat ``key = value`` text with bracketed sections.

The format is deliberately minimal so configs diff cleanly and parse
without dependencies: blank lines and ``#`` comments are skipped, a
``[section]`` line switches section, and every other line must be
``key = value``.  Unknown sections or keys are rejected, as are
duplicates; every value is validated against the owning module's
preconditions before any compute starts.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from .errors import ConfigError, InvalidParameterError
from .model import DeviceGeometry, PhysicalModel, build_physical_model
from .scattering import StepperConfig, WavepacketSpec

_FLOAT = "float"
_INT = "int"
_BOOL = "bool"
_FLOATS = "floats"


@dataclass(frozen=True)
class RunConfig:
    """Everything one pipeline run depends on, in config-file order."""

    # [model]
    m_star_rel: float = 0.0667
    epsilon_r: float = 12.9
    energy_offset: float = 15.019
    # [geometry]
    y_c: float = 143.0
    v0: float = 5.99
    hbar_omega: float = 0.818
    v_x: float = 1.09
    r: float = 143.0
    s: float = 81.9
    d: float = 287.0
    wire_half_width: float = 2.0
    # [dot]
    dot_points: int = 256
    dot_half_extent: float = 384.0
    n_channels: int = 4
    # [grid]
    dx: float = 20.0
    # [scan]
    scan_start: float = 15.8
    scan_stop: float = 18.3
    scan_step: float = 0.05
    scan_delta_e: float = 0.02
    # [protocol]
    protocol_energy: float = 16.4
    protocol_spreads: tuple = (0.02, 0.028, 0.042)
    comparison_energy: float = 17.6
    comparison_spread: float = 0.02
    n_cycles: int = 10
    rederive_each_cycle: bool = False
    strict_window: bool = False
    # [stepper]
    alpha_target: float = 60.0
    dt_max: float = 4.0
    cheb_tol: float = 1e-12
    window_threshold: float = 1e-6
    coupling_floor: float = 0.05
    edge_threshold: float = 1e-8
    edge_cells: int = 8
    max_steps: int = 40000
    interaction_norm: float = 0.01
    stall_lookback: int = 32
    stall_rate: float = 1e-3
    stall_ceiling: float = 1e-3
    stall_fraction: float = 0.25

    def physical_model(self) -> PhysicalModel:
        return build_physical_model(self.m_star_rel, self.epsilon_r)

    def geometry(self) -> DeviceGeometry:
        return DeviceGeometry(y_c=self.y_c, v0=self.v0,
                              hbar_omega=self.hbar_omega, v_x=self.v_x,
                              r=self.r, s=self.s, d=self.d,
                              wire_half_width=self.wire_half_width)

    def stepper(self) -> StepperConfig:
        kwargs = {f.name: getattr(self, f.name)
                  for f in fields(StepperConfig) if hasattr(self, f.name)}
        return StepperConfig(**kwargs)

    def longitudinal(self, quoted: float) -> float:
        """Map a quoted pump energy to longitudinal kinetic energy."""
        e = quoted - self.energy_offset
        if e <= 0.0:
            raise ConfigError(
                f"quoted energy {quoted} meV is at or below the confinement "
                f"offset {self.energy_offset} meV")
        return e

    def scan_energies(self) -> np.ndarray:
        """Quoted energies, ascending, endpoints inclusive."""
        n_rows = int(round((self.scan_stop - self.scan_start)
                           / self.scan_step)) + 1
        return self.scan_start + self.scan_step * np.arange(n_rows)

    def protocol_blocks(self) -> tuple:
        """(quoted energy, spread) pairs: spread ladder plus comparison."""
        blocks = [(self.protocol_energy, de) for de in self.protocol_spreads]
        blocks.append((self.comparison_energy, self.comparison_spread))
        return tuple(blocks)

    def wavepacket(self, quoted: float, spread: float) -> WavepacketSpec:
        return WavepacketSpec(mean_energy=self.longitudinal(quoted),
                              energy_spread=spread)


_SCHEMA = {
    "model": {"m_star_rel": _FLOAT, "epsilon_r": _FLOAT,
              "energy_offset": _FLOAT},
    "geometry": {"y_c": _FLOAT, "v0": _FLOAT, "hbar_omega": _FLOAT,
                 "v_x": _FLOAT, "r": _FLOAT, "s": _FLOAT, "d": _FLOAT,
                 "wire_half_width": _FLOAT},
    "dot": {"dot_points": _INT, "dot_half_extent": _FLOAT,
            "n_channels": _INT},
    "grid": {"dx": _FLOAT},
    "scan": {"scan_start": _FLOAT, "scan_stop": _FLOAT, "scan_step": _FLOAT,
             "scan_delta_e": _FLOAT},
    "protocol": {"protocol_energy": _FLOAT, "protocol_spreads": _FLOATS,
                 "comparison_energy": _FLOAT, "comparison_spread": _FLOAT,
                 "n_cycles": _INT, "rederive_each_cycle": _BOOL,
                 "strict_window": _BOOL},
    "stepper": {"alpha_target": _FLOAT, "dt_max": _FLOAT, "cheb_tol": _FLOAT,
                "window_threshold": _FLOAT, "coupling_floor": _FLOAT,
                "edge_threshold": _FLOAT, "edge_cells": _INT,
                "max_steps": _INT, "interaction_norm": _FLOAT,
                "stall_lookback": _INT, "stall_rate": _FLOAT,
                "stall_ceiling": _FLOAT, "stall_fraction": _FLOAT},
}


def _parse_value(kind: str, raw: str, where: str):
    try:
        if kind == _FLOAT:
            return float(raw)
        if kind == _INT:
            return int(raw)
        if kind == _BOOL:
            low = raw.lower()
            if low in ("true", "false"):
                return low == "true"
            raise ValueError(raw)
        if kind == _FLOATS:
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            if not parts:
                raise ValueError(raw)
            return tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {kind}") from None
    raise ConfigError(f"{where}: unknown value kind {kind}")


def parse_config(text: str) -> RunConfig:
    """Parse config text into a validated RunConfig."""
    section = None
    seen = set()
    values = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"line {lineno}"
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SCHEMA:
                raise ConfigError(f"{where}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value', got "
                              f"{raw_line.strip()!r}")
        if section is None:
            raise ConfigError(f"{where}: key before any [section]")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in _SCHEMA[section]:
            raise ConfigError(f"{where}: unknown key {key!r} in [{section}]")
        if (section, key) in seen:
            raise ConfigError(f"{where}: duplicate key {key!r}")
        seen.add((section, key))
        values[key] = _parse_value(_SCHEMA[section][key], raw, where)
    config = replace(RunConfig(), **values)
    validate_config(config)
    return config


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def validate_config(config: RunConfig) -> None:
    """Cross-field checks mirroring the module preconditions."""
    config.physical_model()
    config.geometry()
    config.stepper()
    if config.dot_points < 16 or config.dot_points & (config.dot_points - 1):
        raise ConfigError("dot_points must be a power of two >= 16")
    osc_len = np.sqrt(2.0 * config.physical_model().kinetic_coeff
                      / config.hbar_omega)
    if config.dot_half_extent < config.y_c + 4.0 * osc_len:
        raise ConfigError(
            f"dot_half_extent {config.dot_half_extent} leaves less than 4 "
            f"oscillator lengths ({osc_len:.1f} nm) beyond the well centers")
    if config.n_channels < 2:
        raise ConfigError("n_channels must be at least 2")
    if config.dx <= 0.0:
        raise ConfigError("dx must be positive")
    if config.scan_step <= 0.0 or config.scan_stop < config.scan_start:
        raise ConfigError("scan range must be ascending with positive step")
    if not 0.0 < config.stall_fraction < 1.0:
        raise ConfigError("stall_fraction must lie in (0, 1)")
    if config.stall_ceiling >= config.interaction_norm:
        raise ConfigError("stall_ceiling must stay below interaction_norm")
    if not 1 <= config.n_cycles <= 12:
        raise ConfigError("n_cycles must lie in 1..12")
    for quoted, spread in (*config.protocol_blocks(),
                           *((e, config.scan_delta_e)
                             for e in (config.scan_start, config.scan_stop))):
        try:
            config.wavepacket(quoted, spread)
        except InvalidParameterError as err:
            raise ConfigError(
                f"wavepacket at {quoted} meV, spread {spread}: {err}") from None


def config_text(config: RunConfig) -> str:
    """Canonical serialization; parse_config round-trips it."""
    out = []
    for section, keys in _SCHEMA.items():
        out.append(f"[{section}]")
        for key in keys:
            val = getattr(config, key)
            if isinstance(val, bool):
                rendered = "true" if val else "false"
            elif isinstance(val, tuple):
                rendered = ", ".join(f"{v:.17g}" for v in val)
            elif isinstance(val, float):
                rendered = f"{val:.17g}"
            else:
                rendered = str(val)
            out.append(f"{key} = {rendered}")
        out.append("")
    return "\n".join(out)
