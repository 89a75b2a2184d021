"""
Configuration loading
Run configs come from `key = value` files; process defaults come from the environment
"""
import hashlib
import json
import os
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, ValidationError

from protoconv.core.errors import ConfigError
from protoconv.core.models import RunConfig

# Load environment
load_dotenv()


class Settings(BaseModel):
    """Process-wide defaults read from the environment"""
    log_level: str = "INFO"
    workers: int = 1
    checked: bool = False


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    return Settings(
        log_level=os.getenv("PROTOCONV_LOG_LEVEL", "INFO").upper(),
        workers=int(os.getenv("PROTOCONV_WORKERS", "1")),
        checked=os.getenv("PROTOCONV_CHECKED", "0").lower() in ("1", "true", "yes", "on"),
    )


def _nest(flat: Mapping[str, Any]) -> Dict[str, Dict[str, Any]]:
    """Fold `section.key` entries into {section: {key: value}}"""
    tree: Dict[str, Dict[str, Any]] = {}
    for key, value in flat.items():
        if "." not in key:
            raise ConfigError(f"config key '{key}' must be namespaced as section.key")
        section, name = key.split(".", 1)
        if value is None:
            raise ConfigError(f"config key '{key}' has no value")
        tree.setdefault(section, {})[name] = value
    return tree


def _merge(base: Dict[str, Any], updates: Mapping[str, Any]) -> Dict[str, Any]:
    merged = {k: dict(v) if isinstance(v, dict) else v for k, v in base.items()}
    for section, values in updates.items():
        if isinstance(values, Mapping) and isinstance(merged.get(section), dict):
            merged[section].update(values)
        else:
            merged[section] = values
    return merged


def build_config(
    base: Optional[RunConfig] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """
    Apply flat `section.key` overrides on top of a base config

    Example:
        build_config(overrides={"dcm.kernel_size": 7, "loss.lambda": 0.5})
    """
    data = (base or RunConfig()).model_dump(by_alias=True)
    if overrides:
        data = _merge(data, _nest(overrides))
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def load_config(
    path: Optional[Path] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """
    Load a run config from a `key = value` file (one key per line, `#` comments)

    Unknown sections or keys are rejected.
    """
    flat: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        flat.update(dotenv_values(path, interpolate=False))
    if overrides:
        flat.update(overrides)
    return build_config(overrides=flat)


def config_lines(cfg: RunConfig) -> list[str]:
    """Render a config back into `key = value` lines"""
    lines = []
    for section, values in cfg.model_dump(by_alias=True).items():
        for key, value in values.items():
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{section}.{key} = {value}")
    return lines


def write_config(cfg: RunConfig, path: Path) -> None:
    Path(path).write_text("\n".join(config_lines(cfg)) + "\n", encoding="utf-8")


def compute_fingerprint(cfg: RunConfig, seed: Optional[int] = None) -> str:
    """
    SHA-256 of the canonical config JSON plus the seed
    Equivalent configs (after validation) share a fingerprint
    """
    hashable = {"config": cfg.model_dump(mode="json", by_alias=True), "seed": seed}
    stable_str = json.dumps(hashable, sort_keys=True)
    return hashlib.sha256(stable_str.encode()).hexdigest()
