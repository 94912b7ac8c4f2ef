"""Run configuration: one JSON file plus flat dotted-key overrides.

A run config merges three dataclass sections (encoder, train, detect) and a
global model-init seed. Overrides arrive as ``section.field value`` pairs from
the command line and are JSON-parsed where possible. The fully resolved config
is serialized verbatim into every command's run manifest.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .detector import DetectionConfig
from .encoder import EncoderConfig
from .errors import ConfigError
from .training import TrainConfig


@dataclass
class RunConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    detect: DetectionConfig = field(default_factory=DetectionConfig)
    seed: int = 0

    def validate(self) -> None:
        self.encoder.validate()
        self.train.validate()
        self.detect.validate()

    def to_dict(self) -> dict:
        return {
            "encoder": dataclasses.asdict(self.encoder),
            "train": dataclasses.asdict(self.train),
            "detect": dataclasses.asdict(self.detect),
            "seed": self.seed,
        }


def _apply_section(obj, section: str, data: dict) -> None:
    valid = {f.name for f in dataclasses.fields(obj)}
    for key, value in data.items():
        if key not in valid:
            raise ConfigError(f"unknown config key {section}.{key}")
        setattr(obj, key, value)


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def load_run_config(path: str | None = None, overrides: list[tuple[str, str]] = ()) -> RunConfig:
    """Defaults, then the JSON file, then dotted-key overrides; validated."""
    cfg = RunConfig()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as f:
                data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config root must be an object")
        for section, payload in data.items():
            if section == "seed":
                cfg.seed = payload
            elif section in ("encoder", "train", "detect"):
                if not isinstance(payload, dict):
                    raise ConfigError(f"{path}: section {section} must be an object")
                _apply_section(getattr(cfg, section), section, payload)
            else:
                raise ConfigError(f"{path}: unknown config section {section!r}")
    for key, raw in overrides:
        value = _parse_value(raw)
        if key == "seed":
            cfg.seed = value
            continue
        if "." not in key:
            raise ConfigError(f"override key {key!r} must look like section.field")
        section, _, name = key.partition(".")
        if section not in ("encoder", "train", "detect"):
            raise ConfigError(f"unknown config section in override {key!r}")
        _apply_section(getattr(cfg, section), section, {name: value})
    cfg.validate()
    return cfg
