"""Runtime configuration: key=value files with environment overrides."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from typing import Optional

ENV_PREFIX = "HEALTHGATE_"


class ConfigError(Exception):
    pass


@dataclass
class Config:
    data_dir: str = "data"
    listen_addr: str = "127.0.0.1:8080"
    session_ttl_seconds: float = 3600.0
    auth_fail_delay_ms: int = 200
    sweep_interval_seconds: float = 60.0
    inbox_capacity: int = 1024
    console_dir: Optional[str] = None
    unsafe_allow_all: bool = False

    def host_port(self) -> tuple[str, int]:
        host, sep, port = self.listen_addr.rpartition(":")
        if not sep or not port.isdigit():
            raise ConfigError(f"listen_addr must be host:port, got {self.listen_addr!r}")
        return host or "127.0.0.1", int(port)


_BOOL_WORDS = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _coerce(name: str, kind: type, raw: str):
    raw = raw.strip()
    try:
        if kind is bool:
            word = raw.lower()
            if word not in _BOOL_WORDS:
                raise ValueError(raw)
            return _BOOL_WORDS[word]
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def _field_types() -> dict[str, type]:
    types: dict[str, type] = {}
    for f in fields(Config):
        if f.name == "console_dir":
            types[f.name] = str
        else:
            types[f.name] = type(getattr(Config(), f.name))
    return types


def parse_config_text(text: str, source: str = "<config>") -> dict[str, object]:
    """Parse key=value lines; '#' starts a comment, blanks are skipped."""
    types = _field_types()
    values: dict[str, object] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, raw = stripped.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{line_no}: expected key=value, got {stripped!r}")
        if key not in types:
            raise ConfigError(f"{source}:{line_no}: unknown key {key!r}")
        values[key] = _coerce(key, types[key], raw)
    return values


def load_config(path: Optional[str] = None, environ: Optional[dict[str, str]] = None) -> Config:
    """File values override defaults; HEALTHGATE_* environment values override the file."""
    values: dict[str, object] = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as f:
                text = f.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        values.update(parse_config_text(text, source=path))
    env = os.environ if environ is None else environ
    types = _field_types()
    for name, kind in types.items():
        env_key = ENV_PREFIX + name.upper()
        if env_key in env:
            values[name] = _coerce(name, kind, env[env_key])
    config = Config(**values)
    config.host_port()  # validate eagerly so a bad address fails at load time
    if config.session_ttl_seconds <= 0:
        raise ConfigError("session_ttl_seconds must be positive")
    if config.inbox_capacity < 1:
        raise ConfigError("inbox_capacity must be at least 1")
    if config.auth_fail_delay_ms < 0:
        raise ConfigError("auth_fail_delay_ms must not be negative")
    return config
