"""Small shared helpers: config errors, seeded generators, dataclass JSON IO."""
from __future__ import annotations

import dataclasses
import json
from pathlib import Path
from typing import Any, Type, TypeVar

import torch


class ConfigError(ValueError):
    """Invalid configuration; maps to CLI exit code 2."""


def make_rng(seed: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(seed))
    return g


T = TypeVar("T")


def deep_tuple(value):
    """Recursively turn lists into tuples (JSON round-trip for tuple fields)."""
    if isinstance(value, (list, tuple)):
        return tuple(deep_tuple(v) for v in value)
    return value


def dataclass_from_dict(cls: Type[T], data: dict[str, Any]) -> T:
    """Recursively build a (possibly nested) dataclass from plain dicts."""
    import typing

    hints = typing.get_type_hints(cls)
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - fields
    if unknown:
        raise ConfigError(f"unknown config fields for {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        ftype = hints.get(name)
        if dataclasses.is_dataclass(ftype) and isinstance(value, dict):
            value = dataclass_from_dict(ftype, value)
        elif isinstance(value, list):
            value = deep_tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad config for {cls.__name__}: {e}") from e


def save_json(obj, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        obj = dataclasses.asdict(obj)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
