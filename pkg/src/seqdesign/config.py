"""Versioned key-value config format used for presets and run settings.

The format is a plain text file: a `format_version` header, `[section]`
markers, and `key = <json value>` lines.  Values are JSON-encoded scalars or
lists so that parse(emit(doc)) == doc holds exactly, which the preset
round-trip and checkpoint-hash machinery rely on.
"""

from __future__ import annotations

import hashlib
import json

from .errors import ConfigError

FORMAT_VERSION = 1

ConfigDoc = dict  # section name -> {key -> value}


def parse_config(text: str) -> ConfigDoc:
    """Parse config text into {section: {key: value}}."""
    doc: ConfigDoc = {}
    section = None
    version_seen = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if not section:
                raise ConfigError(f"line {lineno}: empty section name")
            if section in doc:
                raise ConfigError(f"line {lineno}: duplicate section [{section}]")
            doc[section] = {}
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        try:
            value = json.loads(value)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {lineno}: bad JSON value for {key!r}: {exc}") from exc
        if section is None:
            if key != "format_version":
                raise ConfigError(f"line {lineno}: key {key!r} before any [section]")
            if value != FORMAT_VERSION:
                raise ConfigError(f"unsupported format_version {value!r}")
            version_seen = True
            continue
        if key in doc[section]:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} in [{section}]")
        doc[section][key] = value
    if not version_seen:
        raise ConfigError("missing format_version header")
    return doc


def emit_config(doc: ConfigDoc) -> str:
    """Emit canonical config text (sorted sections and keys)."""
    lines = [f"format_version = {FORMAT_VERSION}", ""]
    for section in sorted(doc):
        lines.append(f"[{section}]")
        for key in sorted(doc[section]):
            lines.append(f"{key} = {json.dumps(doc[section][key])}")
        lines.append("")
    return "\n".join(lines)


def config_hash(doc: ConfigDoc) -> str:
    """Stable hash of a config document (canonical text, sha256)."""
    return hashlib.sha256(emit_config(doc).encode()).hexdigest()


def load_config(path) -> ConfigDoc:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def save_config(doc: ConfigDoc, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(emit_config(doc))


def apply_overrides(doc: ConfigDoc, section: str, overrides: dict) -> ConfigDoc:
    """Return a copy of `doc` with `key=value` overrides applied to one section."""
    if section not in doc:
        raise ConfigError(f"unknown section {section!r}")
    out = {name: dict(body) for name, body in doc.items()}
    for key, value in overrides.items():
        if key not in out[section]:
            raise ConfigError(f"unknown override key {key!r} for [{section}]")
        out[section][key] = value
    return out


def parse_override_arg(arg: str):
    """Parse a CLI `K=V` override; V is JSON, falling back to a bare string."""
    if "=" not in arg:
        raise ConfigError(f"override must look like key=value, got {arg!r}")
    key, _, value = arg.partition("=")
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value
    return key.strip(), parsed
