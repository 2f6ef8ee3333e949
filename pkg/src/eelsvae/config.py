"""``key = value`` configuration files and named random substreams."""
from __future__ import annotations

import zlib
from pathlib import Path

import numpy as np

from .errors import ConfigError


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse UTF-8 ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_kv(path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_kv(text, str(path))


def format_kv(values: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in values.items())


def check_keys(values: dict, allowed, where: str = "config") -> None:
    unknown = sorted(set(values) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown {where} key(s): {', '.join(unknown)}")


def get(values: dict, key: str, cast=str, default=...):
    if key not in values:
        if default is ...:
            raise ConfigError(f"missing required key {key!r}")
        return default
    raw = values[key]
    if not isinstance(raw, str):
        return raw
    try:
        if cast is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc


def floats(raw: str) -> list[float]:
    """'1, 2.5, 3' -> [1.0, 2.5, 3.0]; 'a:b:step' expands an inclusive range."""
    raw = raw.strip()
    if not raw:
        return []
    if raw.count(":") == 2 and "," not in raw:
        lo, hi, step = (float(p) for p in raw.split(":"))
        n = int(round((hi - lo) / step)) + 1
        return [round(lo + i * step, 10) for i in range(n)]
    return [float(p) for p in raw.split(",")]


def tuples(raw: str, width: int) -> list[tuple[float, ...]]:
    """'708:1.5:3000, 721:1.8:1500' -> [(708, 1.5, 3000), (721, 1.8, 1500)]."""
    out = []
    for item in raw.split(","):
        item = item.strip()
        if not item:
            continue
        parts = item.split(":")
        if len(parts) != width:
            raise ValueError(f"expected {width} ':'-separated numbers in {item!r}")
        out.append(tuple(float(p) for p in parts))
    return out


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named pipeline stage (gen, inject, train, ...)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(zlib.crc32(name.encode()),))
    return np.random.default_rng(ss)
