"""Flat key = value configuration with AI4C_* environment overrides."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path

ENV_PREFIX = "AI4C_"


def parse_config_file(path) -> dict:
    """Parse `key = value` lines; '#' starts a comment, quotes are optional."""
    out: dict = {}
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{line_no}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "'\"":
            value = value[1:-1]
        out[key] = value
    return out


def _coerce(value: str, target_type):
    if target_type is bool:
        return value.lower() in ("1", "true", "yes", "on")
    if target_type is int:
        return int(value)
    if target_type is float:
        return float(value)
    return value


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8000
    model_dir: str = "models"
    store_path: str = "records/screenings.jsonl"
    payload_limit_bytes: int = 4 * 1024 * 1024
    cors_origin: str = "*"
    research_audio_dir: str = ""  # empty = discard audio after features (default)

    @classmethod
    def load(cls, config_path=None, env=None) -> "ServiceConfig":
        """File values first, then AI4C_<KEY> environment overrides."""
        values: dict = {}
        if config_path:
            values.update(parse_config_file(config_path))
        env = os.environ if env is None else env
        for f in fields(cls):
            env_key = ENV_PREFIX + f.name.upper()
            if env_key in env:
                values[f.name] = env[env_key]
        kwargs = {}
        for f in fields(cls):
            if f.name in values:
                kwargs[f.name] = _coerce(str(values[f.name]), f.type if isinstance(f.type, type) else type(getattr(cls(), f.name)))
        return cls(**kwargs)
