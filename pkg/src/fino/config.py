"""Training configuration and the `key = value` config-file dialect.

Lines hold one `key = value` assignment each; `#` starts a comment; blank
lines are skipped. Unknown keys are hard errors so typos cannot silently
fall back to defaults.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

from .data import AugmentPolicy
from .model import ModelConfig


def _parse_bool(s):
    v = s.strip().lower()
    if v in ("true", "1", "yes"):
        return True
    if v in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _parse_int_tuple(s):
    return tuple(int(part) for part in s.split(","))


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 2
    base_lr: float = 0.001
    poly_power: float = 0.9
    weight_decay: float = 0.0001
    seed: int = 0
    aux_weight: float = 0.1       # config key: lambda
    threshold: float = 0.5
    augment: str = "none"
    max_steps: int = 0            # 0 means run the full epoch budget
    widths: tuple = (16, 32, 64, 128)
    blocks_per_stage: int = 1
    region_size: int = 4
    norm: str = "none"
    stages: tuple = (4, 3, 2, 1)
    disable_cdl: bool = False
    disable_bsa: bool = False
    disable_rega: bool = False
    gate_clamp: bool = False
    rcl_literal: bool = False

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.base_lr <= 0 or self.poly_power <= 0:
            raise ValueError("base_lr and poly_power must be positive")
        if self.weight_decay < 0 or self.aux_weight < 0:
            raise ValueError("weight_decay and lambda must be non-negative")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0,1)")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        AugmentPolicy.named(self.augment)
        self.to_model_config().validate()

    def to_model_config(self):
        return ModelConfig(
            widths=self.widths, blocks_per_stage=self.blocks_per_stage,
            region_size=self.region_size, norm=self.norm, stages=self.stages,
            disable_cdl=self.disable_cdl, disable_bsa=self.disable_bsa,
            disable_rega=self.disable_rega, gate_clamp=self.gate_clamp,
            rcl_literal=self.rcl_literal)


_KEY_TO_FIELD = {("lambda" if f.name == "aux_weight" else f.name): f.name
                 for f in fields(TrainConfig)}

_PARSERS = {
    int: int,
    float: float,
    bool: _parse_bool,
    str: lambda s: s.strip(),
    tuple: _parse_int_tuple,
}


def parse_config_text(text: str) -> TrainConfig:
    cfg = TrainConfig()
    types = {f.name: type(getattr(cfg, f.name)) for f in fields(TrainConfig)}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KEY_TO_FIELD:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        name = _KEY_TO_FIELD[key]
        try:
            setattr(cfg, name, _PARSERS[types[name]](value))
        except ValueError as exc:
            raise ValueError(f"config line {lineno}: bad value for {key}: {exc}") from exc
    cfg.validate()
    return cfg


def load_config(path: str) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def config_to_text(cfg: TrainConfig) -> str:
    """Canonical serialization: sorted keys, one per line."""
    pairs = {key: _fmt(getattr(cfg, name)) for key, name in _KEY_TO_FIELD.items()}
    return "".join(f"{key} = {pairs[key]}\n" for key in sorted(pairs))


def config_hash(cfg: TrainConfig) -> str:
    return hashlib.sha256(config_to_text(cfg).encode("utf-8")).hexdigest()
