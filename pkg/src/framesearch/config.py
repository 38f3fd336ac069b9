"""Flat ``key = value`` configuration files with namespaced keys (e.g. ``ae.latent_dim = 32``)."""

from __future__ import annotations

import dataclasses
from pathlib import Path


class ConfigError(ValueError):
    pass


def parse_config(text, source="<config>"):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        values[key] = value
    return values


def read_config(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))


def _convert(value, default, annotation, key):
    text = value.strip()
    try:
        if text.lower() in ("none", "null", "") and (default is None or "None" in str(annotation)):
            return None
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, tuple) or "tuple" in str(annotation):
            items = [t for t in text.replace("x", ",").split(",") if t.strip()]
            sample = default[0] if default else 0.0
            cast = int if isinstance(sample, int) and all("." not in t for t in items) else float
            return tuple(cast(t) for t in items)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float) or default is None:
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: cannot parse {value!r}") from exc


def apply(obj, values, prefix):
    """Return a copy of dataclass ``obj`` with fields overridden from ``prefix.<field>`` keys."""
    hints = {f.name: f.type for f in dataclasses.fields(obj)}
    changes = {}
    for f in dataclasses.fields(obj):
        key = f"{prefix}.{f.name}"
        if key in values:
            changes[f.name] = _convert(values[key], getattr(obj, f.name), hints[f.name], key)
    return dataclasses.replace(obj, **changes) if changes else obj


def check_known(values, sections):
    """Reject keys that no section dataclass understands.

    ``sections`` maps a prefix to the dataclass instances configured from it.
    """
    for key in values:
        prefix, _, name = key.partition(".")
        if prefix not in sections:
            raise ConfigError(f"unknown config section in key {key!r}")
        if not any(name in {f.name for f in dataclasses.fields(o)} for o in sections[prefix]):
            raise ConfigError(f"unknown config key {key!r}")
