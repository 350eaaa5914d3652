"""Run configuration: one JSON document with optional sections."""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field

SECTIONS = {
    "panel": {"path", "treated", "treatment_period"},
    "dgp": None,  # FactorDGP fields
    "mc": None,  # McConfig fields
    "limit": None,  # LimitSpec fields
    "placebo": None,  # PlaceboConfig fields
    "output": {"directory", "formats"},
}
FORMATS = ("csv", "json", "svg")


class ConfigError(ValueError):
    pass


def _known(section):
    from .asymptotics import LimitSpec
    from .dgp import FactorDGP
    from .mc import McConfig
    from .placebo import PlaceboConfig

    fixed = SECTIONS[section]
    if fixed is not None:
        return fixed
    cls = {"dgp": FactorDGP, "mc": McConfig, "limit": LimitSpec, "placebo": PlaceboConfig}[section]
    return set(cls.__dataclass_fields__)


def _check_keys(data: dict):
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    for key, body in data.items():
        if key not in SECTIONS:
            raise ConfigError(f"unknown config key: {key}")
        if not isinstance(body, dict):
            raise ConfigError(f"{key}: section must be an object")
        known = _known(key)
        for sub in body:
            if sub not in known:
                raise ConfigError(f"unknown config key: {key}.{sub}")
        if key == "mc" and isinstance(body.get("dgp"), dict):
            dgp_known = _known("dgp")
            for sub in body["dgp"]:
                if sub not in dgp_known:
                    raise ConfigError(f"unknown config key: mc.dgp.{sub}")
    out = data.get("output", {})
    for fmt in out.get("formats", []):
        if fmt not in FORMATS:
            raise ConfigError(f"output.formats: unknown format {fmt!r}")
    panel = data.get("panel")
    if panel is not None and "path" not in panel:
        raise ConfigError("panel.path is required when the panel section is present")


@dataclass
class RunConfig:
    data: dict = field(default_factory=dict)
    base_dir: str = "."

    def __post_init__(self):
        _check_keys(self.data)
        self.data = copy.deepcopy(self.data)

    @classmethod
    def load(cls, path) -> RunConfig:
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        return cls(data, os.path.dirname(os.path.abspath(path)))

    def section(self, name: str) -> dict | None:
        body = self.data.get(name)
        return None if body is None else copy.deepcopy(body)

    def set(self, section: str, key: str, value):
        self.data.setdefault(section, {})[key] = value
        _check_keys(self.data)

    def resolve(self, path: str) -> str:
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)

    @property
    def formats(self) -> tuple:
        return tuple(self.data.get("output", {}).get("formats", FORMATS))

    @property
    def output_dir(self) -> str | None:
        d = self.data.get("output", {}).get("directory")
        return None if d is None else self.resolve(d)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def config_hash(effective: dict) -> str:
    """SHA-256 of the canonical JSON of the effective configuration."""
    return hashlib.sha256(canonical_json(effective).encode("utf-8")).hexdigest()


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()
