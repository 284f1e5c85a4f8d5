"""Plain-text ``key=value`` serialisation for flat dataclass configs."""
from __future__ import annotations

import dataclasses
import os
import typing
import zlib

import numpy as np


class ConfigError(ValueError):
    pass


def _format(value) -> str:
    if isinstance(value, bool):
        return "on" if value else "off"
    if isinstance(value, (tuple, list)):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "on", "yes"):
        return True
    if t in ("0", "false", "off", "no"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _coerce(text: str, tp):
    origin = typing.get_origin(tp)
    if tp is bool:
        return parse_bool(text)
    if tp is int:
        return int(text)
    if tp is float:
        return float(text)
    if tp is str:
        return text
    if origin is tuple:
        args = typing.get_args(tp)
        parts = [p for p in text.split(",") if p.strip()]
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(p.strip(), args[0]) for p in parts)
        if len(parts) != len(args):
            raise ConfigError(f"expected {len(args)} comma-separated values, got {text!r}")
        return tuple(_coerce(p.strip(), a) for p, a in zip(parts, args))
    raise ConfigError(f"unsupported field type {tp!r}")


def dumps(cfg) -> str:
    lines = [f"{f.name}={_format(getattr(cfg, f.name))}" for f in dataclasses.fields(cfg)]
    return "\n".join(lines) + "\n"


def parse_lines(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def apply(cfg, values: dict[str, str], strict: bool = True):
    """Return a copy of ``cfg`` with string ``values`` coerced onto its fields."""
    hints = typing.get_type_hints(type(cfg))
    names = {f.name for f in dataclasses.fields(cfg)}
    updates = {}
    for key, text in values.items():
        if key not in names:
            if strict:
                raise ConfigError(f"unknown config key {key!r}")
            continue
        try:
            updates[key] = _coerce(text, hints[key])
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from exc
    return dataclasses.replace(cfg, **updates)


def loads(text: str, cls):
    return apply(cls(), parse_lines(text))


def save(path: str | os.PathLike, cfg) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(cfg))


def load(path: str | os.PathLike, cls):
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read(), cls)


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """Independent generator for a named subsystem of a root seed."""
    words = [seed & 0xFFFFFFFF]
    for key in keys:
        if isinstance(key, str):
            words.append(zlib.crc32(key.encode("utf-8")))
        else:
            words.append(int(key) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(words))
