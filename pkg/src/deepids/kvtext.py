"""Flat ``key = value`` text files.

Used for configs, schemas, scenario files, scaler files, and run manifests.
Lines starting with ``#`` and blank lines are ignored; keys keep insertion
order so writes are deterministic.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError


def parse_kv(text: str, source: str = "<string>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value.strip()
    return out


def read_kv(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"key-value file not found: {path}")
    return parse_kv(path.read_text(encoding="utf-8"), source=str(path))


def format_kv(mapping: dict[str, str]) -> str:
    return "".join(f"{key} = {value}\n" for key, value in mapping.items())


def write_kv(path: str | Path, mapping: dict[str, str]) -> None:
    Path(path).write_text(format_kv(mapping), encoding="utf-8")


def kv_int(mapping: dict[str, str], key: str, default: int | None = None) -> int:
    if key not in mapping:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default
    try:
        return int(mapping[key])
    except ValueError:
        raise ConfigError(f"key {key!r}: expected integer, got {mapping[key]!r}") from None


def kv_float(mapping: dict[str, str], key: str, default: float | None = None) -> float:
    if key not in mapping:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default
    try:
        return float(mapping[key])
    except ValueError:
        raise ConfigError(f"key {key!r}: expected float, got {mapping[key]!r}") from None
