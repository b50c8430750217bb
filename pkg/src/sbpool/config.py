"""Run configuration: one JSON document with CLI ``--set`` overrides.

The document has three sections: ``trunk`` (architecture), ``train``
(optimizer, schedule, penalty), and optionally ``data`` (synthetic
generator spec, used by ``gen-data``).  Overrides use dotted keys, e.g.
``--set train.penalty.b=2.5``; values parse as JSON where possible and
``"7:3"`` is accepted for ratios.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .backbone import TrunkConfig
from .data import SyntheticSpec
from .errors import InvalidSpec, MalformedDocument, ShapeMismatch
from .trainer import TrainConfig


@dataclass
class RunConfig:
    trunk: TrunkConfig
    train: TrainConfig
    data: SyntheticSpec | None = None

    def to_json_obj(self) -> dict:
        obj = {"trunk": self.trunk.to_json_obj(), "train": self.train.to_json_obj()}
        if self.data is not None:
            obj["data"] = self.data.to_json_obj()
        return obj

    def validate_against(self, sample_shape) -> None:
        if tuple(sample_shape) != tuple(self.trunk.input):
            raise ShapeMismatch(
                f"dataset sample shape {tuple(sample_shape)} != trunk input {self.trunk.input}"
            )


def default_run_config() -> RunConfig:
    return RunConfig(trunk=TrunkConfig(), train=TrainConfig(), data=SyntheticSpec())


def parse_ratio(value) -> tuple[float, float]:
    """Accept [7,3], (7,3), or the string form "7:3"."""
    if isinstance(value, str):
        parts = value.split(":")
        if len(parts) != 2:
            raise InvalidSpec(f"ratio string must look like '7:3', got {value!r}")
        try:
            return float(parts[0]), float(parts[1])
        except ValueError as exc:
            raise InvalidSpec(f"bad ratio {value!r}") from exc
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return float(value[0]), float(value[1])
    raise InvalidSpec(f"bad ratio {value!r}")


def run_config_from_json_obj(obj) -> RunConfig:
    if not isinstance(obj, dict):
        raise MalformedDocument("run config must be a JSON object")
    trunk_obj = obj.get("trunk", {})
    train_obj = dict(obj.get("train", {}))
    if "penalty" in train_obj and "r" in train_obj["penalty"]:
        penalty = dict(train_obj["penalty"])
        penalty["r"] = list(parse_ratio(penalty["r"]))
        train_obj["penalty"] = penalty
    try:
        trunk = (
            TrunkConfig.from_json_obj(trunk_obj) if trunk_obj else TrunkConfig()
        )
    except (KeyError, TypeError) as exc:
        raise MalformedDocument(f"bad trunk config: {exc}") from exc
    train = TrainConfig.from_json_obj(train_obj)
    data = SyntheticSpec.from_json_obj(obj["data"]) if obj.get("data") else None
    return RunConfig(trunk=trunk, train=train, data=data)


def apply_overrides(obj: dict, overrides) -> dict:
    """Apply ``a.b.c=value`` assignments onto a nested JSON object."""
    for item in overrides or []:
        if "=" not in item:
            raise InvalidSpec(f"override must look like key=value, got {item!r}")
        key, _, raw = item.partition("=")
        keys = key.strip().split(".")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = obj
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise InvalidSpec(f"override path {key!r} crosses a non-object value")
        node[keys[-1]] = value
    return obj


def load_run_config(path=None, overrides=None) -> RunConfig:
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise MalformedDocument(f"missing config file: {p}")
        try:
            obj = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise MalformedDocument(f"config is not valid JSON: {exc}") from exc
    else:
        obj = default_run_config().to_json_obj()
    apply_overrides(obj, overrides)
    return run_config_from_json_obj(obj)
