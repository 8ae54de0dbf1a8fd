"""
Schema validation for JSON inputs (SfM reconstruction exports, synthetic scene configs).
Schemas live next to the file-format contracts in ``contracts/*.schema.json``.
"""

import json
import logging
import os
from typing import Any, Dict, Optional, Tuple

from jsonschema import Draft7Validator

import config
from errors import SchemaError

logger = logging.getLogger(__name__)

SCHEMA_SUFFIX = ".schema.json"


def load_schemas(contracts_dir: str = config.CONTRACTS_DIR) -> Dict[str, dict]:
    """Load every ``<name>.schema.json`` found in the contracts directory."""
    schemas = {}
    if not os.path.isdir(contracts_dir):
        logger.warning(f"Contracts directory not found: {contracts_dir}")
        return schemas
    for fname in sorted(os.listdir(contracts_dir)):
        if not fname.endswith(SCHEMA_SUFFIX):
            continue
        with open(os.path.join(contracts_dir, fname), "r", encoding="utf-8") as f:
            schemas[fname[:-len(SCHEMA_SUFFIX)]] = json.load(f)
    return schemas


class SchemaValidator:
    """Validates JSON documents against the named contract schemas"""

    def __init__(self, contracts_dir: str = config.CONTRACTS_DIR):
        self.validators = {
            name: Draft7Validator(schema) for name, schema in load_schemas(contracts_dir).items()
        }

    def validate(self, name: str, document: Any) -> Tuple[bool, Optional[str]]:
        """Return (True, None) for a valid document, else (False, first error)."""
        validator = self.validators.get(name)
        if validator is None:
            raise KeyError(f"no schema named {name!r}")
        errors = sorted(validator.iter_errors(document), key=lambda e: list(e.absolute_path))
        if not errors:
            return True, None
        first = errors[0]
        location = "/".join(str(p) for p in first.absolute_path) or "<root>"
        return False, f"{location}: {first.message}"

    def require(self, name: str, document: Any) -> None:
        ok, message = self.validate(name, document)
        if not ok:
            raise SchemaError(f"{name} document is invalid at {message}")


_default_validator = None


def get_validator() -> SchemaValidator:
    """Shared validator built from the repository's contracts directory"""
    global _default_validator
    if _default_validator is None:
        _default_validator = SchemaValidator()
    return _default_validator
