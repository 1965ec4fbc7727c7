"""JSON run configuration: model structure, training and CRF sections.

Unknown keys are errors at every level. ``--set section.key=value``
overrides are applied on top of the file before validation.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

from rdsnet.crf import CrfParams
from rdsnet.topology import BackboneSpec, build_dss, build_rds, compact_branches, reference_branches
from rdsnet.train import TrainConfig


class ConfigError(ValueError):
    """Invalid configuration content or override."""


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "rds"
    backbone: str = "toy"
    levels: int = 5
    k: int = 32
    branches: str = "reference"
    branch_width: int = 8
    max_kernel: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("rds", "dss"):
            raise ConfigError(f"model.kind must be 'rds' or 'dss', got {self.kind!r}")
        if self.backbone not in ("toy", "resnet"):
            raise ConfigError(f"model.backbone must be 'toy' or 'resnet', got {self.backbone!r}")
        if self.branches not in ("reference", "compact"):
            raise ConfigError(f"model.branches must be 'reference' or 'compact', got {self.branches!r}")
        if not 2 <= self.levels <= 6:
            raise ConfigError(f"model.levels must lie in 2..6, got {self.levels}")
        if self.k < 1 or self.branch_width < 1 or self.max_kernel < 1 or self.max_kernel % 2 == 0:
            raise ConfigError("model.k and model.branch_width must be positive; model.max_kernel positive and odd")

    def build(self, materialize=True):
        spec = BackboneSpec.toy(self.levels) if self.backbone == "toy" else BackboneSpec.resnet(self.levels)
        if self.branches == "reference":
            branches = reference_branches(self.levels, self.k)
        else:
            branches = compact_branches(self.levels, self.k, self.branch_width, self.max_kernel)
        builder = build_rds if self.kind == "rds" else build_dss
        return builder(spec, k=self.k, branches=branches, seed=self.seed, materialize=materialize)


SECTIONS = {"model": ModelConfig, "train": TrainConfig, "crf": CrfParams}


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    crf: CrfParams

    def as_dict(self):
        return {name: asdict(getattr(self, name)) for name in SECTIONS}

    def to_json(self):
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"


def _parse_value(text):
    try:
        return json.loads(text)
    except ValueError:
        return text


def apply_overrides(raw, overrides):
    """Apply ``section.key=value`` strings to a nested dict (copied)."""
    out = {k: dict(v) for k, v in raw.items()}
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        key, value = item.split("=", 1)
        if "." not in key:
            raise ConfigError(f"override key {key!r} must be section.key")
        section, name = key.split(".", 1)
        out.setdefault(section, {})[name] = _parse_value(value)
    return out


def from_dict(raw):
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config sections: {', '.join(unknown)}")
    built = {}
    for name, cls in SECTIONS.items():
        section = raw.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"config section {name!r} must be an object")
        known = {f.name for f in fields(cls)}
        bad = sorted(set(section) - known)
        if bad:
            raise ConfigError(f"unknown keys in {name}: {', '.join(bad)}")
        try:
            built[name] = cls(**section)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid {name} config: {exc}") from None
    return RunConfig(**built)


def load(path=None, overrides=()):
    raw = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
        except ValueError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return from_dict(apply_overrides(raw, overrides))
