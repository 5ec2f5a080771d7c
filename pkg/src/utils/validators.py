"""
Configuration Validation Utilities

This module validates user-supplied configuration: single values through
(ok, value, error) checks, and whole JSON documents through a strict
dataclass builder that rejects unknown keys and wrong types.
"""

import dataclasses
import json
import logging
import os
import typing
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Type, TypeVar, Union

from src.core.errors import ConfigError

T = TypeVar("T")

logger = logging.getLogger(__name__)


def validate_positive_int(value: Any, name: str = "value") -> Tuple[bool, int, str]:
    """
    Check that value is a positive integer (bools rejected).

    Returns:
        Tuple of (is_valid, value, error_message)
    """
    if isinstance(value, bool) or not isinstance(value, int):
        return False, 0, f"{name} must be an integer, got {type(value).__name__}"
    if value < 1:
        return False, 0, f"{name} must be >= 1, got {value}"
    return True, value, ""


def validate_seed(value: Any) -> Tuple[bool, int, str]:
    """Seeds are non-negative integers below 2**64."""
    if isinstance(value, bool) or not isinstance(value, int):
        return False, 0, f"seed must be an integer, got {type(value).__name__}"
    if not 0 <= value < 2 ** 64:
        return False, 0, f"seed must be in [0, 2**64), got {value}"
    return True, value, ""


def validate_threads(value: Any) -> Tuple[bool, int, str]:
    """0 means one thread per logical core."""
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        return False, 0, f"threads must be a non-negative integer, got {value!r}"
    return True, (value or os.cpu_count() or 1), ""


def validate_input_path(path: Any, name: str = "path") -> Tuple[bool, str, str]:
    """An input path must name an existing file."""
    if not isinstance(path, (str, os.PathLike)) or not str(path):
        return False, "", f"{name} must be a non-empty path"
    if not Path(path).is_file():
        return False, "", f"{name}: file not found: {path}"
    return True, str(path), ""


def _describe(tp: Any) -> str:
    return getattr(tp, "__name__", None) or str(tp).replace("typing.", "")


def _coerce(value: Any, tp: Any, key: str) -> Any:
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)

    if tp is Any:
        return value
    if origin is Union:
        if value is None and type(None) in args:
            return None
        errors = []
        for arg in args:
            if arg is type(None):
                continue
            try:
                return _coerce(value, arg, key)
            except ConfigError as e:
                errors.append(str(e))
        raise ConfigError(errors[0] if errors else f"{key}: invalid value {value!r}")
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{key}: expected an object, got {type(value).__name__}")
        return build_dataclass(tp, value, key)
    if origin in (tuple, list, frozenset, set):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list, got {type(value).__name__}")
        if origin is tuple and args and args[-1] is not Ellipsis:
            if len(args) != len(value):
                raise ConfigError(f"{key}: expected {len(args)} items, got {len(value)}")
            return tuple(_coerce(v, a, f"{key}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
        item = args[0] if args else Any
        items = [_coerce(v, item, f"{key}[{i}]") for i, v in enumerate(value)]
        return origin(items)
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{key}: expected an object, got {type(value).__name__}")
        kt, vt = args if args else (Any, Any)
        return {_coerce(k, kt, key): _coerce(v, vt, f"{key}.{k}") for k, v in value.items()}
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{key}: unsupported config type {_describe(tp)}")


def build_dataclass(cls: Type[T], data: Dict[str, Any], prefix: str = "") -> T:
    """
    Build a (possibly nested) dataclass from a JSON object.

    Unknown keys and wrong types raise ConfigError naming the dotted key;
    missing keys take the dataclass default.
    """
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or cls.__name__}: expected an object")
    hints = typing.get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        where = f" in '{prefix}'" if prefix else ""
        raise ConfigError(f"unknown config key(s){where}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        key = f"{prefix}.{name}" if prefix else name
        kwargs[name] = _coerce(value, hints[name], key)
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"{prefix or cls.__name__}: {e}") from e
    except ConfigError as e:
        raise ConfigError(f"{prefix}: {e}" if prefix else str(e)) from e


def to_jsonable(obj: Any) -> Any:
    """Dataclass (nested) -> plain JSON types, tuples/sets as lists."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (frozenset, set)):
        return sorted(to_jsonable(v) for v in obj)
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    return obj


def load_json(path: Union[str, Path]) -> Any:
    ok, p, err = validate_input_path(path, "config")
    if not ok:
        raise ConfigError(err)
    try:
        with open(p, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from e
