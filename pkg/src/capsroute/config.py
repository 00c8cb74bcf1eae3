"""Flat ``key = value`` run configuration.

One file drives architecture, loss selection, data handling and the training
loop; the parsed object is snapshotted into run records and checkpoints so a
result can always be traced back to its exact settings.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

LOSS_CONFIGS = ("mm", "mrm", "mrc", "mc")
DECODERS = ("fc", "deconv")


@dataclass
class Config:
    # architecture
    num_classes: int = 2
    capsule_dim: int = 30
    primary_capsule_dim: int = 8
    routing_iterations: int = 3
    conv_channels: tuple = (64, 128, 32)
    frame_size: int = 48
    decoder: str = "fc"
    decoder_hidden_sizes: tuple = (512, 1024)
    lstm_hidden: int = 128
    sequence_length: int = 16
    untied_routing: bool = False
    # loss selection (rows of the four-way ablation)
    loss_config: str = "mrc"
    # training
    learning_rate: float = 0.0001
    batch_size: int = 8
    epochs: int = 100
    early_stop_patience: int = 15
    seed: int = 0
    augment: bool = True
    max_steps: int = 0  # 0 = no cap
    # data
    data_root: str = "."
    split_seed: int = 0
    test_fraction: float = 0.2
    split_by_subject: bool = False

    def validate(self) -> "Config":
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.routing_iterations < 1:
            raise ConfigError(f"routing_iterations must be >= 1, got {self.routing_iterations}")
        if self.loss_config not in LOSS_CONFIGS:
            raise ConfigError(f"loss_config must be one of {LOSS_CONFIGS}, got {self.loss_config!r}")
        if self.decoder not in DECODERS:
            raise ConfigError(f"decoder must be one of {DECODERS}, got {self.decoder!r}")
        if len(self.conv_channels) != 3 or any(c < 1 for c in self.conv_channels):
            raise ConfigError(f"conv_channels needs three positive values, got {self.conv_channels}")
        if self.decoder == "deconv" and self.frame_size % 8 != 0:
            raise ConfigError("deconv decoder needs frame_size divisible by 8")
        if self.sequence_length < 1:
            raise ConfigError(f"sequence_length must be >= 1, got {self.sequence_length}")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ConfigError(f"test_fraction must be in [0, 1), got {self.test_fraction}")
        return self

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")


def _coerce(name: str, raw: str, kind):
    raw = raw.strip()
    try:
        if kind is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind is tuple:
            return tuple(int(v) for v in raw.split(",") if v.strip())
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"config key {name!r}: cannot parse {raw!r}") from exc


def parse_config(text: str) -> Config:
    kinds = {f.name: type(getattr(Config(), f.name)) for f in fields(Config)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in kinds:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw, kinds[key])
    return Config(**values).validate()


def load_config(path) -> Config:
    return parse_config(Path(path).read_text(encoding="utf-8"))
