"""
Scenario documents: JSON text <-> validated ScenarioConfig
"""
import hashlib
import json
import logging
from pathlib import Path
from typing import Union

from pydantic import ValidationError

from app.models import ScenarioConfig
from app.utils.exceptions import ConfigurationError

logger = logging.getLogger(__name__)


def _field_path(loc) -> str:
    return ".".join(str(part) for part in loc) or "config"


def parse_config(text: str) -> ScenarioConfig:
    """Parse and validate a scenario document"""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigurationError(
            f"syntax error at line {e.lineno} column {e.colno}: {e.msg}", field_path="document"
        ) from e
    if not isinstance(data, dict):
        raise ConfigurationError("top level must be an object", field_path="document")

    try:
        config = ScenarioConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        message = first["msg"]
        if len(e.errors()) > 1:
            message += f" (and {len(e.errors()) - 1} more)"
        raise ConfigurationError(message, field_path=_field_path(first["loc"])) from e

    logger.info(f"Loaded scenario '{config.name}' (n={config.plant.n}, k={config.plant.k}, j={config.plant.j})")
    return config


def load_config(path: Union[str, Path]) -> ScenarioConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(f"cannot read scenario file: {e}", field_path="document") from e
    return parse_config(text)


def serialize_config(config: ScenarioConfig) -> str:
    """Canonical JSON text of a scenario (sorted keys, defaults filled in)"""
    return json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True)


def config_hash(config: ScenarioConfig) -> str:
    return hashlib.sha256(serialize_config(config).encode("utf-8")).hexdigest()
