"""
Loading and validating the JSON documents under ``configs/``.
"""
import json
import logging
import os
from functools import lru_cache
from typing import Any, Dict

from jsonschema import Draft7Validator
from jsonschema.exceptions import best_match

from ..errors import ConfigError

logger = logging.getLogger(__name__)

SCHEMA_PATH = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'schema.json')
DOCUMENT_KINDS = ('model', 'experiment', 'ablation', 'dataset', 'train', 'spm')


@lru_cache(maxsize=None)
def load_schema() -> Dict[str, Any]:
    with open(SCHEMA_PATH, 'r') as f:
        return json.load(f)


@lru_cache(maxsize=None)
def _validator(kind: str) -> Draft7Validator:
    if kind not in DOCUMENT_KINDS:
        raise ValueError(f"unknown document kind '{kind}'")
    schema = load_schema()
    return Draft7Validator({'$ref': f'#/definitions/{kind}', 'definitions': schema['definitions']})


def validate_document(doc: Any, kind: str, source: str = '<document>') -> None:
    """Raise ConfigError naming the failing path when ``doc`` breaks the published schema."""
    error = best_match(_validator(kind).iter_errors(doc))
    if error is not None:
        where = '/'.join(str(p) for p in error.absolute_path) or '<root>'
        raise ConfigError(f"{source}: {where}: {error.message}")


def read_json(path: str) -> Any:
    try:
        with open(path, 'r') as f:
            return json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config document not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}")


def load_document(path: str, kind: str) -> Dict[str, Any]:
    doc = read_json(path)
    validate_document(doc, kind, source=path)
    logger.debug(f"Validated {kind} document {path}")
    return doc
