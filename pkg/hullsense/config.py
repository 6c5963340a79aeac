"""
Scenario loading: JSON schema pass, pydantic pass, command-line overrides.
Errors carry the file name and the line of the offending value.
"""
from __future__ import annotations
import copy
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

from pydantic import ValidationError

from .errors import ConfigError
from .models import ScenarioConfig
from .observability import StructuredLogger
from .utils import canonical_json_string, load_text, locate_json_path, parse_override, reject_constant, sha256_text, validate_against_schema

logger = StructuredLogger(__name__)

SCENARIO_SCHEMA = "scenario.schema.json"

# short override keys accepted next to dotted paths
OVERRIDE_ALIASES: Dict[str, List[str]] = {
    "policy": ["policy", "kind"],
    "M": ["horizon", "M"],
    "kappa": ["kappa"],
    "J_max": ["run", "J_max"],
    "delta_lex": ["policy", "delta_lex"],
}


def apply_overrides(raw: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    out = copy.deepcopy(raw)
    for item in overrides:
        try:
            path, value = parse_override(item)
        except ValueError as e:
            raise ConfigError(str(e), source="--override") from e
        if len(path) == 1 and path[0] in OVERRIDE_ALIASES:
            path = OVERRIDE_ALIASES[path[0]]
        if path == ["horizon", "M"]:
            out.setdefault("horizon", {})["mode"] = "explicit"
        node = out
        for key in path[:-1]:
            child = node.get(key)
            if not isinstance(child, dict):
                child = {}
                node[key] = child
            node = child
        node[path[-1]] = value
        logger.info("Override applied", key=".".join(path), value=value)
    return out


def _first_error_line(text: str, path: Sequence[Union[str, int]]) -> Optional[int]:
    return locate_json_path(text, path) if text else None


def parse_config(
    raw: Dict[str, Any],
    *,
    source: str = "<config>",
    text: str = "",
) -> ScenarioConfig:
    """Validate a decoded scenario against the JSON schema, then the pydantic models."""
    report = validate_against_schema(raw, SCENARIO_SCHEMA)
    if not report["valid"]:
        err = report["errors"][0]
        raise ConfigError(
            err["message"],
            source=source,
            line=_first_error_line(text, err["path"]),
            path=err["pointer"],
        )
    try:
        return ScenarioConfig.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        loc = [p for p in first["loc"] if isinstance(p, (str, int))]
        raise ConfigError(
            first["msg"],
            source=source,
            line=_first_error_line(text, loc),
            path="/" + "/".join(map(str, loc)),
        ) from e


def load_config(path: Union[str, Path], overrides: Sequence[str] = ()) -> ScenarioConfig:
    source = str(path)
    try:
        text = load_text(path)
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror or e}", source=source) from e
    try:
        raw = json.loads(text, parse_constant=reject_constant)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e.msg}", source=source, line=e.lineno) from e
    except ValueError as e:
        raise ConfigError(str(e), source=source) from e
    if not isinstance(raw, dict):
        raise ConfigError("scenario must be a JSON object", source=source, line=1)

    raw = apply_overrides(raw, overrides)
    config = parse_config(raw, source=source, text=text)
    logger.info(
        "Scenario loaded",
        name=config.name,
        agents=len(config.agents),
        horizon=config.horizon.mode,
        policy=config.policy.kind,
    )
    return config


def canonical_config(config: ScenarioConfig) -> str:
    return canonical_json_string(config.model_dump(mode="json"))


def config_sha256(config: ScenarioConfig) -> str:
    return sha256_text(canonical_config(config))
