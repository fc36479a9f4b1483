from pathlib import Path
from typing import Any, Dict, FrozenSet, Literal, Optional, Tuple

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigError
from .models import RuleId, Severity

DEFAULT_MAX_BODY = 4 * 1024 * 1024
DEFAULT_CALLBACK_PROPERTIES = ("nfStatusNotificationUri", "callbackReference", "notificationUri")

# Config-file keys and the settings field each one feeds
CONFIG_KEYS = {
    "SBILINT_FORMAT": "output_format",
    "SBILINT_FAIL_ON": "fail_on",
    "SBILINT_RULE_DISABLE": "disabled_rules",
    "SBILINT_MAX_BODY": "max_body",
    "SBILINT_WORKERS": "workers",
    "SBILINT_H2_MIN_FRAMES": "h2_min_frames",
    "SBILINT_CALLBACK_PROPERTIES": "callback_properties",
}
_LIST_FIELDS = {"disabled_rules", "callback_properties"}


class LintSettings(BaseModel):
    model_config = ConfigDict(frozen=True)

    specs: Path
    pcaps: Tuple[Path, ...]
    output_format: Literal["text", "json"] = "text"
    fail_on: Severity = Severity.ERROR
    disabled_rules: FrozenSet[RuleId] = frozenset()
    max_body: int = Field(DEFAULT_MAX_BODY, gt=0)
    workers: int = Field(1, ge=1)
    h2_min_frames: int = Field(3, ge=1)
    callback_properties: Tuple[str, ...] = DEFAULT_CALLBACK_PROPERTIES

    @field_validator("callback_properties")
    @classmethod
    def _non_empty_names(cls, names):
        if any(not name for name in names):
            raise ValueError("callback property names must be non-empty")
        return names


def read_config_file(path: Path) -> Dict[str, Any]:
    """
    Read a dotenv-format config file into settings fields.
    Values come from the file only; the process environment is not consulted.
    """
    if not path.is_file():
        raise ConfigError(f"Config file {path} not found")
    values = dotenv_values(path)
    fields: Dict[str, Any] = {}
    for key, raw in values.items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"Unknown config key {key} in {path}")
        if raw is None:
            continue
        field = CONFIG_KEYS[key]
        if field in _LIST_FIELDS:
            fields[field] = [item.strip() for item in raw.split(",") if item.strip()]
        else:
            fields[field] = raw.strip()
    return fields


def load_settings(cli_values: Dict[str, Any], config_file: Optional[Path] = None) -> LintSettings:
    """Merge config-file values with command-line values; the command line wins."""
    merged: Dict[str, Any] = read_config_file(config_file) if config_file else {}
    for field, value in cli_values.items():
        if value is None:
            continue
        if isinstance(value, list) and not value and field in _LIST_FIELDS:
            continue
        merged[field] = value
    try:
        return LintSettings(**merged)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"Invalid settings: {problems}") from e
