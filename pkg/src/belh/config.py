"""Strict INI configuration for every subcommand.

Unknown sections or keys are rejected, as are missing required keys; every
error names the offending key and, when it exists in the file, its line.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path

from . import tensor as ta
from .dynamics import InitialData, SolverConfig
from .uniaxial import ScalarRun


class ConfigError(ValueError):
    pass


def _floats(text):
    return tuple(float(x) for x in re.split(r"[,\s]+", text.strip()) if x)


def _ints(text):
    return tuple(int(x) for x in re.split(r"[,\s]+", text.strip()) if x)


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# section -> key -> (parser, required)
_PHYSICS = {k: (float, k in ("L", "mu", "Gamma", "a", "b", "c"))
            for k in ("L", "mu", "Gamma", "a", "b", "c", "xi", "eps")}
_GRID = {"n": (_ints, True), "box": (_floats, False), "dealias": (_bool, False)}
_TIME = {"dt": (float, True), "T": (float, True), "order": (int, False),
         "cfl_max": (float, False)}
_INITIAL = {"kind": (str, False), "seed": (int, False), "u_rms": (float, False),
            "q_rms": (float, False), "u_k0": (float, False), "q_k0": (float, False),
            "width": (float, False), "u_amp": (float, False), "q_amp": (float, False),
            "path": (str, False)}
_DIAG = {"cadence": (int, False), "tail_radii": (_floats, False), "div_tol": (float, False),
         "q_tol": (float, False), "freeze_velocity": (_bool, False)}
_SCALAR = {"length": (float, True), "nodes": (int, True), "dt": (float, True),
           "T": (float, True), "Gamma": (float, False), "L": (float, False),
           "a": (float, False), "b": (float, False), "c": (float, True),
           "profile": (str, False), "amp": (float, False), "width": (float, False),
           "ceiling": (float, False), "rel_bound": (float, False), "q_floor": (float, False),
           "dt_min": (float, False), "min_halvings": (int, False), "adaptive": (_bool, False),
           "record_every": (int, False)}
_SWEEP = {"a": (_floats, False), "b": (_floats, False), "c": (_floats, False),
          "eps": (_floats, False)}
_TENSOR = {"n": (_ints, False), "every": (int, False), "tol": (float, False),
           "uniaxial_tol": (float, False)}

SCHEMAS = {
    "run": {"physics": _PHYSICS, "grid": _GRID, "time": _TIME, "initial": _INITIAL,
            "diagnostics": _DIAG},
    "uniaxial": {"scalar": _SCALAR, "sweep": _SWEEP},
    "compare-uniaxial": {"scalar": _SCALAR, "tensor": _TENSOR},
}
SCHEMAS["tail"] = SCHEMAS["run"]
SCHEMAS["eps-sweep"] = dict(SCHEMAS["run"], sweep=_SWEEP)
REQUIRED_SECTIONS = {"run": ("physics", "grid", "time"), "uniaxial": ("scalar",),
                     "compare-uniaxial": ("scalar",)}
REQUIRED_SECTIONS["tail"] = REQUIRED_SECTIONS["run"]
REQUIRED_SECTIONS["eps-sweep"] = REQUIRED_SECTIONS["run"] + ("sweep",)


@dataclass
class ParsedConfig:
    """Typed values per section plus the raw text (for the manifest)."""

    kind: str
    values: dict
    text: str
    source: str = "<string>"
    lines: dict = field(default_factory=dict)

    def section(self, name):
        return self.values.get(name, {})


def _line_numbers(text):
    """(section, key) -> 1-based line number."""
    out, sec = {}, None
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            sec = m.group(1).strip()
            out[(sec, None)] = i
            continue
        m = re.match(r"([^=:]+)[=:]", line)
        if m and sec is not None:
            out[(sec, m.group(1).strip())] = i
    return out


def parse_text(text, kind, source="<string>") -> ParsedConfig:
    if kind not in SCHEMAS:
        raise ConfigError(f"no configuration schema for {kind!r}")
    schema = SCHEMAS[kind]
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    lines = _line_numbers(text)

    def where(sec, key=None):
        n = lines.get((sec, key))
        return f"{source}:{n}" if n else source

    values = {}
    for sec in cp.sections():
        if sec not in schema:
            raise ConfigError(f"{where(sec)}: unknown section [{sec}] "
                              f"(allowed: {', '.join(sorted(schema))})")
        values[sec] = {}
        for key, raw in cp.items(sec):
            if key not in schema[sec]:
                raise ConfigError(f"{where(sec, key)}: unknown key '{key}' in [{sec}]")
            conv = schema[sec][key][0]
            try:
                values[sec][key] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{where(sec, key)}: bad value for [{sec}] {key}: {exc}") from None
    for sec in REQUIRED_SECTIONS[kind]:
        if sec not in values:
            raise ConfigError(f"{source}: missing required section [{sec}]")
    for sec, keys in schema.items():
        if sec not in values:
            continue
        for key, (_, required) in keys.items():
            if required and key not in values[sec]:
                raise ConfigError(f"{where(sec)}: missing required key '{key}' in [{sec}]")
    return ParsedConfig(kind=kind, values=values, text=text, source=source, lines=lines)


def load(path, kind) -> ParsedConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_text(text, kind, str(path))


def _triple(v, name):
    if len(v) == 1:
        return v * 3
    if len(v) != 3:
        raise ConfigError(f"[grid] {name} needs 1 or 3 values, got {len(v)}")
    return v


def _wrap(fn, what):
    try:
        return fn()
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid {what}: {exc}") from None


def bulk_params(cfg: ParsedConfig) -> ta.BulkParams:
    return _wrap(lambda: ta.BulkParams(**cfg.section("physics")), "[physics]")


def solver_config(cfg: ParsedConfig, *, seed=None, workers=1) -> SolverConfig:
    g, t, i, d = (cfg.section(s) for s in ("grid", "time", "initial", "diagnostics"))
    init = dict(i)
    if seed is not None:
        init["seed"] = seed

    def build():
        sc = SolverConfig(
            params=bulk_params(cfg),
            n=_triple(g["n"], "n"),
            box=_triple(g.get("box", (1.0,)), "box"),
            dealias=g.get("dealias", True),
            dt=t["dt"], T=t["T"], order=t.get("order", 2), cfl_max=t.get("cfl_max", 0.4),
            initial=InitialData(**init),
            cadence=d.get("cadence", 1),
            tail_radii=tuple(d.get("tail_radii", ())),
            div_tol=d.get("div_tol", 1e-10), q_tol=d.get("q_tol", 1e-12),
            freeze_velocity=d.get("freeze_velocity", False),
            workers=workers,
        )
        sc.grid()   # validates the resolution
        return sc
    return _wrap(build, "run configuration")


def scalar_run(cfg: ParsedConfig, **overrides) -> ScalarRun:
    vals = dict(cfg.section("scalar"), **overrides)
    return _wrap(lambda: ScalarRun(**vals), "[scalar]")
