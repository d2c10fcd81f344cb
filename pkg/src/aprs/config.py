"""Flat ``key = value`` experiment files with ``[section]`` headers.

Recognized sections and keys are listed in ``SCHEMA``; anything else is an
error reported with its line number. Comments start with ``#``.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from pathlib import Path

from .convergence import SweepPlan
from .dynamics import ConfigError, InitialDataDescriptor, RunConfig
from .spectral import Lattice


class ConfigFileError(ConfigError):
    def __init__(self, message: str, line: int | None = None, source: str = "<config>"):
        self.line = line
        self.source = source
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _optional_float(text: str):
    return None if text.lower() in ("", "none", "auto") else float(text)


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


SCHEMA = {
    "run": {
        "system": str,
        "n_h": int,
        "n_v": int,
        "l_h": float,
        "nu_h": float,
        "gamma": float,
        "eps": _optional_float,
        "k_trunc": _optional_float,
        "dt": _optional_float,
        "t_end": float,
        "output_every": int,
        "convection": _bool,
        "seed": int,
        "snapshot_every": int,
    },
    "init": {
        "mean_part": str,
        "fluct_part": str,
        "amplitude": float,
        "mean_amplitude": float,
        "seed": int,
        "slope": float,
    },
    "sweep": {
        "eps_values": _floats,
        "gamma": float,
        "weak_norm_order": float,
        "eta": float,
    },
}

DEFAULTS = {
    "run": {"system": "primitive", "n_h": 16, "n_v": 16, "l_h": 2.0, "nu_h": 1.0, "gamma": 3.0, "eps": None,
            "k_trunc": None, "dt": None, "t_end": 1.0, "output_every": 1, "convection": True, "seed": 0,
            "snapshot_every": 0},
    "init": {"mean_part": "zero", "fluct_part": "random", "amplitude": 0.0, "mean_amplitude": 0.0, "seed": None,
             "slope": 1.0},
    "sweep": {"eps_values": (0.5, 0.25, 0.125, 0.0625), "gamma": None, "weak_norm_order": 3.0, "eta": 0.25},
}

_SECTION = re.compile(r"^\[\s*([A-Za-z_]+)\s*\]$")
_PAIR = re.compile(r"^([A-Za-z_][A-Za-z0-9_.]*)\s*=\s*(.*)$")


@dataclass
class ParsedConfig:
    run: RunConfig
    sweep: SweepPlan | None
    values: dict
    snapshot_every: int = 0
    source: str = "<config>"

    def canonical_text(self) -> str:
        return dump_values(self.values)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()


def read_values(text: str, source: str = "<config>") -> tuple[dict, dict]:
    """Raw ``{section: {key: text}}`` plus ``{(section, key): line}``."""
    values: dict = {}
    lines: dict = {}
    section = None
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION.match(line)
        if m:
            section = m.group(1).lower()
            if section not in SCHEMA:
                raise ConfigFileError(f"unknown section [{section}]", number, source)
            values.setdefault(section, {})
            continue
        m = _PAIR.match(line)
        if not m:
            raise ConfigFileError(f"cannot parse {raw.strip()!r}; expected key = value", number, source)
        if section is None:
            raise ConfigFileError("key outside of any [section]", number, source)
        key = m.group(1).lower()
        if key not in SCHEMA[section]:
            raise ConfigFileError(f"unknown key {key!r} in [{section}]", number, source)
        if key in values[section]:
            raise ConfigFileError(f"duplicate key {key!r} in [{section}]", number, source)
        values[section][key] = m.group(2).strip()
        lines[(section, key)] = number
    return values, lines


def apply_overrides(values: dict, overrides, source: str = "<overrides>") -> dict:
    """``section.key=value`` or a bare ``key=value`` that names exactly one key."""
    values = {s: dict(v) for s, v in values.items()}
    for item in overrides or ():
        if "=" not in item:
            raise ConfigFileError(f"override {item!r} is not key=value", None, source)
        key, value = (p.strip() for p in item.split("=", 1))
        key = key.lower()
        if "." in key:
            section, name = key.split(".", 1)
            if section not in SCHEMA or name not in SCHEMA[section]:
                raise ConfigFileError(f"unknown override key {key!r}", None, source)
        else:
            owners = [s for s in SCHEMA if key in SCHEMA[s]]
            if not owners:
                raise ConfigFileError(f"unknown override key {key!r}", None, source)
            if len(owners) > 1:
                raise ConfigFileError(f"override key {key!r} is ambiguous; use one of "
                                      + ", ".join(f"{s}.{key}" for s in owners), None, source)
            section, name = owners[0], key
        values.setdefault(section, {})[name] = value
    return values


def _convert(values: dict, lines: dict, source: str) -> dict:
    out = {}
    for section, schema in SCHEMA.items():
        typed = dict(DEFAULTS[section])
        for key, text in values.get(section, {}).items():
            try:
                typed[key] = schema[key](text)
            except ValueError as exc:
                raise ConfigFileError(f"invalid value for {section}.{key}: {exc}", lines.get((section, key)),
                                      source) from None
        out[section] = typed
    return out


def build_config(values: dict, lines: dict | None = None, source: str = "<config>") -> ParsedConfig:
    lines = lines or {}
    typed = _convert(values, lines, source)
    run, init, sweep = typed["run"], typed["init"], typed["sweep"]

    def fail(section, key, message):
        raise ConfigFileError(message, lines.get((section, key)), source)

    if not run["gamma"] > 2:
        fail("run", "gamma", f"gamma = {run['gamma']} rejected: the vertical viscosity is nu_z = eps^gamma "
                             "and requires gamma > 2")
    if sweep["gamma"] is not None and not sweep["gamma"] > 2:
        fail("sweep", "gamma", f"gamma = {sweep['gamma']} rejected: the vertical viscosity is nu_z = eps^gamma "
                               "and requires gamma > 2")
    if run["snapshot_every"] < 0:
        fail("run", "snapshot_every", "snapshot_every must be >= 0")
    if init["seed"] is None:
        init["seed"] = run["seed"]
    try:
        lattice = Lattice(run["n_h"], run["n_v"], run["l_h"])
    except (ValueError, TypeError) as exc:
        fail("run", "n_h", str(exc))
    try:
        data = InitialDataDescriptor(**init)
    except ConfigError as exc:
        fail("init", "mean_part", str(exc))
    try:
        cfg = RunConfig(lattice=lattice, nu_h=run["nu_h"], gamma=run["gamma"], eps=run["eps"],
                        k_trunc=run["k_trunc"], dt=run["dt"], t_end=run["t_end"], init=data,
                        output_every=run["output_every"], system=run["system"], seed=run["seed"],
                        convection=run["convection"])
    except ConfigError as exc:
        key = next((k for k in ("eps", "nu_h", "dt", "t_end", "k_trunc", "system", "output_every")
                    if k in str(exc)), None)
        fail("run", key, str(exc))
    plan = None
    if "sweep" in values:
        try:
            plan = SweepPlan(eps_values=sweep["eps_values"], gamma=sweep["gamma"] or run["gamma"], data=data,
                             weak_norm_order=sweep["weak_norm_order"], eta=sweep["eta"])
        except ValueError as exc:
            fail("sweep", "eps_values", str(exc))
    return ParsedConfig(cfg, plan, values, run["snapshot_every"], source)


def parse_config_text(text: str, overrides=(), source: str = "<config>") -> ParsedConfig:
    values, lines = read_values(text, source)
    values = apply_overrides(values, overrides)
    return build_config(values, lines, source)


def parse_config(path, overrides=()) -> ParsedConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigFileError("file not found", None, str(path))
    return parse_config_text(path.read_text(encoding="utf-8"), overrides, str(path))


def dump_values(values: dict) -> str:
    """Canonical text: sections and keys sorted, one pair per line."""
    out = []
    for section in sorted(values):
        out.append(f"[{section}]")
        for key in sorted(values[section]):
            out.append(f"{key} = {values[section][key]}")
    return "\n".join(out) + "\n"
