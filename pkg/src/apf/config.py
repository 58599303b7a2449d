"""Run configuration: defaults < config file < environment < flags."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from apf.errors import DataError
from apf.synthbench import DEFAULT_INTENTS, FULL_INTENTS, LISTING_TASK_INTENTS, BandSpec, IntentSpec

PROVIDERS = ("mock-faithful", "mock-corrupt", "mock-noisy", "http")
INTENT_PRESETS = {"default": DEFAULT_INTENTS, "full": FULL_INTENTS, "listing": LISTING_TASK_INTENTS}
ENV_PREFIX = "APF_"


@dataclass
class PipelineConfig:
    seed: int = 0
    # synthetic pool
    n_designs: int = 200
    family_size: int = 10
    n_points: int = 201
    jitter: float = 0.25
    noise_db: float = 0.0
    band_spec: str | None = None
    # requirement sets and test instances
    n_sets: int | None = None
    intents: str = "default"
    offset: tuple[float, float] | None = None
    instances_per_set: int = 10
    n_feasible: int = 8
    candidates: int = 500
    # provider
    provider: str = "mock-faithful"
    mock_p: float = 0.3
    mock_kinds: tuple[str, ...] = ("flip_comparator", "shift_band")
    mock_k: int = 1
    endpoint: str = ""
    model: str = ""
    max_concurrency: int = 4
    max_attempts: int = 4
    timeout: float = 120.0
    # curation
    variants: int = 3
    samples: int = 5
    threshold: float = 0.7
    alpha: float = 0.5
    augment_first: bool = False
    empty_band: str = "error"
    tol: float = 0.0

    def __post_init__(self):
        if self.provider not in PROVIDERS:
            raise DataError(f"unknown provider {self.provider!r}; expected one of {', '.join(PROVIDERS)}")
        if self.intents not in INTENT_PRESETS:
            raise DataError(f"unknown intent preset {self.intents!r}; expected one of {', '.join(INTENT_PRESETS)}")
        if self.empty_band not in ("error", "zero"):
            raise DataError("empty_band must be 'error' or 'zero'")
        if not 0.0 <= self.alpha <= 1.0:
            raise DataError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.offset is not None:
            self.offset = tuple(float(x) for x in self.offset)
        self.mock_kinds = tuple(self.mock_kinds)

    def intent_spec(self) -> IntentSpec:
        spec = INTENT_PRESETS[self.intents]
        return spec if self.offset is None else spec.with_offsets(self.offset)

    def bands(self) -> BandSpec:
        if not self.band_spec:
            return BandSpec()
        path = Path(self.band_spec)
        try:
            return BandSpec.from_dict(yaml.safe_load(path.read_text(encoding="utf-8")))
        except (OSError, yaml.YAMLError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"cannot load band spec {path}: {exc}") from None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["offset"] = list(self.offset) if self.offset is not None else None
        d["mock_kinds"] = list(self.mock_kinds)
        return d


_FIELDS = {f.name: f for f in fields(PipelineConfig)}


def _coerce(name: str, value: Any) -> Any:
    """Convert a string from the environment to the field's type."""
    if not isinstance(value, str):
        return value
    default = _FIELDS[name].default
    if name in ("n_sets",):
        return None if value.lower() in ("", "none") else int(value)
    if name in ("band_spec",):
        return value or None
    if name in ("offset", "mock_kinds"):
        parts = [p.strip() for p in value.split(",") if p.strip()]
        return tuple(float(p) for p in parts) if name == "offset" else tuple(parts)
    if isinstance(default, bool):
        return value.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def load_config_file(path: str | os.PathLike) -> dict:
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise DataError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise DataError(f"config {path} must be a mapping")
    # A nested ``provider:`` block is accepted for readability.
    provider = data.get("provider")
    if isinstance(provider, dict):
        data = {**data, **{k: v for k, v in provider.items() if k != "name"}}
        data["provider"] = provider.get("name", PipelineConfig.provider)
    unknown = sorted(set(data) - set(_FIELDS))
    if unknown:
        raise DataError(f"config {path}: unknown keys {unknown}")
    return data


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for name in _FIELDS:
        key = ENV_PREFIX + name.upper()
        if key in environ:
            try:
                out[name] = _coerce(name, environ[key])
            except ValueError as exc:
                raise DataError(f"{key}: {exc}") from None
    return out


def resolve_config(path: str | None = None, flags: dict | None = None, environ=None) -> PipelineConfig:
    merged: dict = {}
    if path:
        merged.update(load_config_file(path))
    merged.update(env_overrides(environ))
    merged.update({k: v for k, v in (flags or {}).items() if v is not None})
    try:
        return PipelineConfig(**merged)
    except TypeError as exc:
        raise DataError(f"invalid configuration: {exc}") from None


def dumps_config(cfg: PipelineConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True)
