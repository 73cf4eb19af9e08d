"""Process settings (pydantic-settings) and run-config loading."""

from __future__ import annotations

import hashlib
import json
from collections.abc import Mapping
from pathlib import Path
from typing import Any

from loguru import logger
from pydantic import ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.core.domain.config import RunConfig
from src.core.domain.exceptions import ConfigValidationError
from src.core.usecases.prompts import available_rubrics, prompt_hashes


class Settings(BaseSettings):
    """Environment configuration loaded from environment variables and ``.env``.

    Endpoint and key variables override the matching run-config fields.

    Attributes:
        log_level: Loguru console log level (DEBUG, INFO, WARNING, ERROR)
        log_file: Path to the rotating JSON log file
        log_rotation: Max size before rotating (e.g. "100 MB", "1 GB")
        log_retention: How many old log files to keep (e.g. "5", "30 days")
        policy_endpoint: Overrides ``policy.endpoint``
        policy_api_key: Overrides ``policy.api_key``
        expert_endpoint: Overrides ``expert.endpoint``
        judge_endpoint: Overrides ``judge.endpoint``
        scorer_endpoint: Overrides ``tools.scorer_endpoint``
        image_api_key: Overrides ``tools.image_api_key``
        text_api_key: Overrides ``tools.text_api_key``
    """

    log_level: str = "INFO"
    log_file: str = "logs/mm-search-agent.jsonl"
    log_rotation: str = "100 MB"
    log_retention: str = "5"
    policy_endpoint: str = ""
    policy_api_key: str = ""
    expert_endpoint: str = ""
    judge_endpoint: str = ""
    scorer_endpoint: str = ""
    image_api_key: str = ""
    text_api_key: str = ""

    model_config = SettingsConfigDict(
        env_file=".env", env_file_encoding="utf-8", extra="ignore"
    )

    @classmethod
    def from_env(cls, env: Mapping[str, str] | None = None) -> Settings:
        """Read the process environment, or only ``env`` when given."""
        if env is None:
            return cls()
        known = {k.lower(): v for k, v in env.items() if k.lower() in cls.model_fields}
        return cls.model_validate(known)


# Environment variable → dotted run-config field
ENV_OVERRIDES: dict[str, str] = {
    "policy_endpoint": "policy.endpoint",
    "policy_api_key": "policy.api_key",
    "expert_endpoint": "expert.endpoint",
    "judge_endpoint": "judge.endpoint",
    "scorer_endpoint": "tools.scorer_endpoint",
    "image_api_key": "tools.image_api_key",
    "text_api_key": "tools.text_api_key",
}

_SECRET_SUFFIX = "api_key"


def apply_overrides(data: dict[str, Any], settings: Settings) -> dict[str, Any]:
    """Copy of ``data`` with every non-empty override from ``settings`` set."""
    merged = json.loads(json.dumps(data))
    for attr, dotted in ENV_OVERRIDES.items():
        value = getattr(settings, attr)
        if not value:
            continue
        section, field = dotted.split(".")
        target = merged.setdefault(section, {})
        if not isinstance(target, dict):
            continue
        target[field] = value
    return merged


def _deep_update(target: dict[str, Any], values: Mapping[str, Any]) -> None:
    for key, value in values.items():
        if value is None:
            continue
        current = target.get(key)
        if isinstance(value, Mapping) and isinstance(current, dict):
            _deep_update(current, value)
        elif isinstance(value, Mapping):
            target[key] = {}
            _deep_update(target[key], value)
        else:
            target[key] = value


def _strip_secrets(data: Any) -> Any:
    if isinstance(data, dict):
        return {
            k: _strip_secrets(v)
            for k, v in data.items()
            if not k.endswith(_SECRET_SUFFIX)
        }
    if isinstance(data, list):
        return [_strip_secrets(v) for v in data]
    return data


def config_fingerprint(config: RunConfig) -> str:
    """SHA-256 of the canonical config (secrets removed) and the prompt hashes."""
    payload = {
        "config": _strip_secrets(config.model_dump(mode="json")),
        "prompts": prompt_hashes(config.judge.rubric_version),
    }
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def validate_config(data: Mapping[str, Any]) -> RunConfig:
    """Validate a config mapping, reporting every failing field at once.

    Raises:
        ConfigValidationError: With the dotted path of each bad field
    """
    try:
        config = RunConfig.model_validate(data)
    except ValidationError as e:
        errors = e.errors()
        raise ConfigValidationError(
            [".".join(str(p) for p in err["loc"]) or "<root>" for err in errors],
            [err["msg"] for err in errors],
        ) from e
    if config.judge.rubric_version not in available_rubrics():
        raise ConfigValidationError(
            ["judge.rubric_version"],
            [f"unknown rubric; known: {', '.join(available_rubrics())}"],
        )
    return config


def load_config(
    path: Path | None,
    env: Mapping[str, str] | None = None,
    *,
    overrides: Mapping[str, Mapping[str, Any]] | None = None,
) -> tuple[RunConfig, str]:
    """Load a JSON run config, apply environment overrides and validate.

    Args:
        path: JSON config file; None uses the defaults
        env: Environment to read overrides from (the process environment
            and ``.env`` when None)
        overrides: Per-section values applied last, e.g. from CLI flags

    Returns:
        The validated config and its fingerprint

    Raises:
        ConfigValidationError: If the file is not a JSON object or any field
            is invalid
        OSError: If the file cannot be read
    """
    data: Any = {}
    if path is not None:
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigValidationError(["<file>"], [f"{path}: {e}"]) from e
        if not isinstance(data, dict):
            raise ConfigValidationError(["<root>"], ["config must be a JSON object"])
    merged = apply_overrides(data, Settings.from_env(env))
    _deep_update(merged, overrides or {})
    config = validate_config(merged)
    fingerprint = config_fingerprint(config)
    logger.info(
        "Config: loaded {} (fingerprint {})", path or "<defaults>", fingerprint[:12]
    )
    return config, fingerprint
