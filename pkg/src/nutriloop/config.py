"""Deployment configuration: one TOML file plus environment overrides.

Backend credentials are only ever named here (environment variable names),
never stored in config files.
"""

from __future__ import annotations

import os

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigurationError


@dataclass
class AppConfig:
    store_root: str = "./nutriloop-data"
    api_token: str = "local-dev-token"
    backend_mode: str = "mock"  # mock | remote
    remote_endpoint: str | None = None
    remote_credential_env: str | None = None
    meal_fixture_path: str | None = None
    catalog_path: str | None = None
    policy_table_path: str | None = None
    confidence_threshold: float = 0.5
    backend_delay_s: float = 0.0
    # Day-level adjustment policy (all four parameters deployment-tunable).
    adjust_direction: int = 1
    adjust_window_days: int = 1
    adjust_gain: float = 0.3
    adjust_clamp_frac: float = 0.15
    adjust_epsilon: float = 1e-6
    host: str = "127.0.0.1"
    port: int = 8060

    @classmethod
    def load(cls, path: str | Path | None = None) -> "AppConfig":
        values: dict = {}
        if path is not None:
            path = Path(path)
            if not path.exists():
                raise ConfigurationError(f"config file {path} does not exist")
            with open(path, "rb") as f:
                doc = tomllib.load(f)
            known = {f.name for f in fields(cls)}
            unknown = set(doc) - known
            if unknown:
                raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
            values.update(doc)
        token = os.environ.get("NUTRILOOP_API_TOKEN")
        if token:
            values["api_token"] = token
        root = os.environ.get("NUTRILOOP_STORE_ROOT")
        if root:
            values["store_root"] = root
        return cls(**values)
