"""Training configuration and its ``key = value`` file format."""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from ..backbone import EncoderConfig
from ..decoder import DecoderConfig
from ..errors import ConfigurationError, ParseError
from ..hypernet import LayerShape

ATTENTION_MODES = ("none", "ssa", "msa")


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    # encoder
    downsample_sizes: tuple = (256, 128, 64, 32)
    radii: tuple = (0.1, 0.2, 0.4, 0.6)
    max_samples: tuple = (16, 16, 16, 16)
    sa_widths: tuple = (32, 48, 64, 64)
    fp_width: int = 64
    num_candidates: int = 32
    n_d: int = 16
    # decoder
    decoder_layers: int = 3
    width: int = 32
    attention_heads: int = 4
    ffn_width: int = 64
    # scene-conditioned fusion
    attention: str = "msa"
    embed_count: int = 8
    unit_fan_in: int = 8
    c_a: int = 16
    c_s: int = 13
    c_n: int = 1
    c_h: int = 0
    agnostic: bool = True
    specific: bool = True
    # head
    ddh: bool = True
    num_classes: int = 6
    size_prior: float = 0.25
    # optimization
    warmup_epochs: int = 20
    finetune_epochs: int = 60
    batch_size: int = 8
    lr: float = 2e-3
    lr_min: float = 2e-5
    grad_clip: float = 10.0
    nms_iou: float = 0.25
    w_objectness: float = 1.0
    w_center: float = 10.0
    w_size: float = 5.0
    w_class: float = 1.0
    w_sampling: float = 1.0

    def __post_init__(self):
        if self.attention not in ATTENTION_MODES:
            raise ConfigurationError(f"attention must be one of {ATTENTION_MODES}, got {self.attention!r}")
        if self.warmup_epochs < 0 or self.finetune_epochs < 0:
            raise ConfigurationError("epoch counts must be non-negative")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        # constructing the sub-configs runs their own validation
        self.encoder_config()
        self.decoder_config()
        self.layer_shape()

    @property
    def fusion_enabled(self) -> bool:
        # with both branches off nothing is generated: the plain detector
        return self.attention != "none" and (self.agnostic or self.specific)

    @property
    def total_epochs(self) -> int:
        return self.warmup_epochs + self.finetune_epochs

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            downsample_sizes=tuple(self.downsample_sizes),
            radii=tuple(self.radii),
            max_samples=tuple(self.max_samples),
            sa_widths=tuple(self.sa_widths),
            fp_width=self.fp_width,
            num_candidates=self.num_candidates,
            n_d=self.n_d,
        )

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(self.decoder_layers, self.width, self.attention_heads, self.ffn_width)

    def layer_shape(self) -> LayerShape | None:
        if not self.fusion_enabled:
            return None
        return LayerShape.for_mode(self.width, self.width, self.embed_count, self.unit_fan_in,
                                   self.attention)

    def loss_weights(self) -> dict:
        return {
            "objectness": self.w_objectness,
            "center": self.w_center,
            "size": self.w_size,
            "class": self.w_class,
            "sampling": self.w_sampling,
        }

    def with_updates(self, **kw) -> "TrainConfig":
        return replace(self, **kw)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {_format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def to_dict(self) -> dict:
        return asdict(self)


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


_DEFAULTS = TrainConfig.__dataclass_fields__


def _parse_value(name: str, raw: str):
    default = _DEFAULTS[name].default
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        kind = type(default[0])
        return tuple(kind(x) for x in raw.split(",") if x.strip())
    return raw


def parse_config_text(text: str, path=None) -> TrainConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ParseError("expected 'key = value'", path, lineno)
        key, raw = (s.strip() for s in stripped.split("=", 1))
        if key not in _DEFAULTS:
            raise ParseError(f"unknown config key {key!r}", path, lineno)
        if key in values:
            raise ParseError(f"duplicate config key {key!r}", path, lineno)
        try:
            values[key] = _parse_value(key, raw)
        except ValueError as exc:
            raise ParseError(f"bad value for {key}: {exc}", path, lineno) from exc
    return TrainConfig(**values)


def load_config(path) -> TrainConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file {path} does not exist")
    return parse_config_text(path.read_text(), path)


def save_config(config: TrainConfig, path) -> None:
    Path(path).write_text(config.to_text())
