"""Flat sectioned run configuration.

Grammar::

    file     := { line }
    line     := blank | comment | section | entry
    comment  := ("#" | ";") any-text
    section  := "[" name "]"
    entry    := key "=" value [ comment ]

Sections are ``grid``, ``params``, ``initial`` and ``run``; keys, their types
and defaults are listed in :data:`SCHEMA`.  ``T`` may appear in ``[grid]`` and
``[params]`` but both occurrences must agree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

MODES = ("simulate", "picard", "contract", "gate", "norms", "euler-check", "plot")
AUTO = "auto"


def _int(s: str) -> int:
    return int(s)


def _float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("not finite")
    return v


def _float_or_auto(s: str):
    return AUTO if s.strip().lower() == AUTO else _float(s)


def _str(s: str) -> str:
    return s


SCHEMA: dict[str, dict[str, tuple]] = {
    "grid": {
        "nx": (_int, 64),
        "nv": (_int, 64),
        "L": (_float, 2.0 * math.pi),
        "V": (_float, 16.0),
        "dt": (_float, 1e-3),
        "T": (_float, 1e-2),
    },
    "params": {
        "lambda0": (_float, 0.5),
        "K": (_float, 40.0),
        "T": (_float, 1e-2),
        "M": (_float_or_auto, AUTO),
        "q": (_int, 0),
        "picard_tol": (_float, 1e-9),
        "max_iter": (_int, 40),
        "pairs": (_int, 20),
    },
    "initial": {
        "profile": (_str, "gauss_v_trig_x"),
        "amplitude": (_float, 4e-4),
        "epsilon": (_float, 0.1),
        "mode": (_int, 1),
        "path": (_str, ""),
    },
    "run": {
        "mode": (_str, "simulate"),
        "out": (_str, "out"),
        "seed": (_int, 0),
        "input": (_str, ""),
        "euler_nx": (_int, 64),
        "euler_dt": (_float, 0.08),
        "euler_T": (_float, 1.6),
        "euler_amplitude": (_float, 0.1),
    },
}

INITIAL_PROFILES = ("gauss_v_trig_x", "file")


@dataclass(frozen=True)
class RunConfig:
    grid: dict
    params: dict
    initial: dict
    run: dict
    explicit: frozenset = field(default_factory=frozenset)

    def as_dict(self) -> dict:
        return {"grid": dict(self.grid), "params": dict(self.params),
                "initial": dict(self.initial), "run": dict(self.run)}

    @property
    def T(self) -> float:
        return self.grid["T"]


def defaults() -> dict:
    return {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}


def parse_config(text: str) -> RunConfig:
    values = defaults()
    seen: dict[tuple[str, str], int] = {}
    t_lines: dict[str, tuple[float, int]] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", lineno)
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section {section!r}", lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno, section)
        if section is None:
            raise ConfigError("entry before any section header", lineno)
        key, _, val = (s.strip() for s in line.partition("="))
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r}", lineno, section)
        if (section, key) in seen:
            raise ConfigError(f"duplicate key {key!r} (first on line {seen[section, key]})", lineno, section)
        seen[section, key] = lineno
        conv = SCHEMA[section][key][0]
        try:
            parsed = conv(val)
        except ValueError:
            raise ConfigError(f"{key} = {val!r} is not a valid {conv.__name__.strip('_')}",
                              lineno, section) from None
        values[section][key] = parsed
        if key == "T":
            t_lines[section] = (parsed, lineno)

    if len(t_lines) == 2:
        (tg, _), (tp, lp) = t_lines["grid"], t_lines["params"]
        if not math.isclose(tg, tp, rel_tol=1e-12):
            raise ConfigError(f"T = {tp} conflicts with [grid] T = {tg}", lp, "params")
    shared_T = next((v for v, _ in t_lines.values()), values["grid"]["T"])
    values["grid"]["T"] = values["params"]["T"] = shared_T

    _validate(values, seen)
    return RunConfig(values["grid"], values["params"], values["initial"], values["run"],
                     frozenset(f"{s}.{k}" for s, k in seen))


def _validate(v: dict, seen: dict) -> None:
    def fail(msg, sec, key):
        raise ConfigError(msg, seen.get((sec, key)), sec)

    g = v["grid"]
    for key in ("nx", "nv"):
        n = g[key]
        if n < 16 or n & (n - 1):
            fail(f"{key} = {n} must be a power of two >= 16", "grid", key)
    for key in ("L", "V", "dt", "T"):
        if not g[key] > 0:
            fail(f"{key} must be positive", "grid", key)
    ratio = g["T"] / g["dt"]
    if g["dt"] > g["T"] or abs(ratio - round(ratio)) > 1e-12 * max(1.0, ratio):
        fail(f"T/dt = {ratio!r} is not a positive integer", "grid", "dt")
    p = v["params"]
    if p["q"] < 0:
        fail("q must be >= 0", "params", "q")
    for key in ("lambda0", "K", "picard_tol"):
        if not p[key] > 0:
            fail(f"{key} must be positive", "params", key)
    if p["M"] != AUTO and not p["M"] > 0:
        fail("M must be positive or 'auto'", "params", "M")
    if p["max_iter"] < 1 or p["pairs"] < 1:
        fail("max_iter and pairs must be >= 1", "params", "max_iter")
    i = v["initial"]
    if i["profile"] not in INITIAL_PROFILES:
        fail(f"profile {i['profile']!r} not one of {INITIAL_PROFILES}", "initial", "profile")
    if i["profile"] == "file" and not i["path"]:
        fail("profile = file needs a path", "initial", "path")
    r = v["run"]
    if r["mode"] not in MODES:
        fail(f"mode {r['mode']!r} not one of {MODES}", "run", "mode")
    if r["euler_nx"] < 16 or r["euler_nx"] & (r["euler_nx"] - 1):
        fail("euler_nx must be a power of two >= 16", "run", "euler_nx")


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config(text)

