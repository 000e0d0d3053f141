"""Run configuration: typed per-component configs, the desk/paper presets,
and the flat ``key = value`` text format used by the CLI and echoed into
checkpoints.

File format: one ``key = value`` pair per line, ``#`` starts a comment,
blank lines ignored. Keys are dotted paths into the sections below, e.g.
``vit.layers = 6`` or ``train.steps = 500``. Unknown keys are an error.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields

from .errors import ConfigError

FRONT_ENDS = ("vgg21d", "vit", "audio-only")

# footnote channel reading shipped alongside the default VGG-style doubling
VGG_DEFAULT_CHANNELS = (64, 64, 128, 128, 256, 256, 512, 512, 512, 512)
VGG_ALTERNATE_CHANNELS = (23, 64, 230, 128, 460, 256, 921, 512, 460, 512)


@dataclass
class Vgg21dConfig:
    """10-layer (2+1)D conv front-end: alternating [1,3,3] / [3,1,1] layers,
    2x2 spatial max-pool after pairs 1, 2, 3 and 5."""
    layer_channels: tuple = VGG_DEFAULT_CHANNELS
    pool_after_pairs: tuple = (1, 2, 3, 5)
    output_dim: int = 512
    input_hw: int = 128

    def validate(self):
        missing = _missing_fields(self)
        if missing:
            raise ConfigError(f"vgg21d config missing fields: {', '.join(missing)}")
        if len(self.layer_channels) != 10:
            raise ConfigError(
                f"vgg21d requires exactly 10 conv layers, got {len(self.layer_channels)}")
        bad = [p for p in self.pool_after_pairs if not 1 <= p <= 5]
        if bad:
            raise ConfigError(f"pool pair indices out of range 1..5: {bad}")
        return self


@dataclass
class VitConfig:
    """Tubelet-transformer front-end."""
    layers: int = 6
    heads: int = 8
    d_model: int = 512
    d_ff: int = 2048
    pool: str = "prepended-token"  # or "first-tubelet"
    tubelet_hw: int = 32
    tubelet_t: int = 8
    input_hw: int = 128
    activation: str = "gelu"

    @property
    def tokens_per_step(self) -> int:
        return (self.input_hw // self.tubelet_hw) ** 2

    @property
    def token_dim(self) -> int:
        return self.tubelet_hw * self.tubelet_hw * self.tubelet_t * 3

    @property
    def seq_len(self) -> int:
        return self.tokens_per_step + (1 if self.pool == "prepended-token" else 0)

    def validate(self):
        missing = _missing_fields(self)
        if missing:
            raise ConfigError(f"vit config missing fields: {', '.join(missing)}")
        if self.d_model % self.heads:
            raise ConfigError(f"vit d_model {self.d_model} not divisible by heads {self.heads}")
        if self.pool not in ("prepended-token", "first-tubelet"):
            raise ConfigError(f"unknown vit pool mode {self.pool!r}")
        if self.input_hw % self.tubelet_hw:
            raise ConfigError("tubelets must tile the frame exactly")
        return self


@dataclass
class EncoderConfig:
    """Audio-visual transformer encoder over the time axis."""
    layers: int = 14
    d_model: int = 512
    heads: int = 8
    d_ff: int = 2048

    def validate(self):
        missing = _missing_fields(self)
        if missing:
            raise ConfigError(f"encoder config missing fields: {', '.join(missing)}")
        if self.d_model % self.heads:
            raise ConfigError(
                f"encoder d_model {self.d_model} not divisible by heads {self.heads}")
        return self


@dataclass
class DecoderConfig:
    """RNN-T prediction network + additive joint."""
    pred_units: int = 2048
    pred_layers: int = 2
    joint_dim: int = 640
    vocab: int = 0  # 0 -> resolved from the task charset at model build

    def validate(self):
        missing = _missing_fields(self)
        if missing:
            raise ConfigError(f"decoder config missing fields: {', '.join(missing)}")
        return self


@dataclass
class ScheduleConfig:
    """Piecewise learning rate: linear 0->base over warmup, constant, then
    closed-form exponential decay reaching final_lr at anneal_until."""
    base_lr: float = 1e-4
    warmup_steps: int = 30000
    constant_until: int = 200000
    anneal_until: int = 300000
    final_lr: float = 1e-6


@dataclass
class TaskConfig:
    """Synthetic paired audio/video word task."""
    seed: int = 11
    n_classes: int = 8
    n_samples: int = 32
    word_len: int = 2
    charset: str = "abcdefgh"
    char_ms: int = 90
    fps: float = 25.0
    tone_base_hz: float = 440.0
    tone_step_hz: float = 170.0
    max_frames: int = 512


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    clip_norm: float = 1.0  # 0 disables clipping
    noise_augment: bool = True
    video_only: bool = False
    eval_every: int = 25
    stop_wer: float = 0.0  # early-stop threshold; 0 disables
    checkpoint_every: int = 0  # 0 -> only final
    log_wall_ms: bool = True


@dataclass
class ProfileConfig:
    batch: int = 1
    t_steps: int = 32


@dataclass
class RunConfig:
    preset: str = "desk"
    front_end: str = "vit"
    seed: int = 1234
    dtype: str = "float32"
    checkpoint: str = ""
    vgg: Vgg21dConfig = field(default_factory=Vgg21dConfig)
    vit: VitConfig = field(default_factory=VitConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    task: TaskConfig = field(default_factory=TaskConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    profile: ProfileConfig = field(default_factory=ProfileConfig)

    def validate(self) -> "RunConfig":
        if self.front_end not in FRONT_ENDS:
            raise ConfigError(f"front_end must be one of {FRONT_ENDS}, got {self.front_end!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        self.vgg.validate()
        self.vit.validate()
        self.encoder.validate()
        self.decoder.validate()
        return self

    @property
    def visual_dim(self) -> int:
        if self.front_end == "vgg21d":
            return self.vgg.output_dim
        if self.front_end == "vit":
            return self.vit.d_model
        return 0

    @property
    def fused_dim(self) -> int:
        return 240 + self.visual_dim  # video-only zeroes the waveform, not the channels

    def vocab_size(self) -> int:
        if self.decoder.vocab:
            return self.decoder.vocab
        return 1 + len(self.task.charset)  # blank + characters


def _missing_fields(cfg) -> list[str]:
    return [f.name for f in fields(cfg) if getattr(cfg, f.name) is None]


def desk_preset(front_end: str = "vit") -> RunConfig:
    """Laptop-scale configuration used for training and most tests."""
    cfg = RunConfig(
        preset="desk",
        front_end=front_end,
        dtype="float32",
        vgg=Vgg21dConfig(layer_channels=(4, 4, 8, 8, 16, 16, 32, 32, 32, 32), output_dim=64),
        vit=VitConfig(layers=2, heads=4, d_model=64, d_ff=128),
        encoder=EncoderConfig(layers=3, d_model=64, heads=4, d_ff=128),
        decoder=DecoderConfig(pred_units=48, pred_layers=2, joint_dim=48),
        schedule=ScheduleConfig(base_lr=2e-3, warmup_steps=30, constant_until=800,
                                anneal_until=1600, final_lr=2e-4),
        train=TrainConfig(steps=2000, batch_size=8, clip_norm=1.0, noise_augment=True,
                          eval_every=25, stop_wer=0.04),
        profile=ProfileConfig(batch=1, t_steps=32),
    )
    return cfg.validate()


def paper_preset(front_end: str = "vit") -> RunConfig:
    """Full-size configuration matching the published architecture; used for
    cost profiling, not for desk-scale training."""
    cfg = RunConfig(
        preset="paper",
        front_end=front_end,
        dtype="float32",
        vgg=Vgg21dConfig(),
        vit=VitConfig(),
        encoder=EncoderConfig(),
        decoder=DecoderConfig(),
        schedule=ScheduleConfig(),
        train=TrainConfig(steps=300000, batch_size=1024, clip_norm=0.0, noise_augment=True,
                          eval_every=1000, stop_wer=0.0),
        profile=ProfileConfig(batch=1, t_steps=4),
    )
    return cfg.validate()


def make_preset(name: str, front_end: str = "vit") -> RunConfig:
    if name == "desk":
        return desk_preset(front_end)
    if name == "paper":
        return paper_preset(front_end)
    raise ConfigError(f"unknown preset {name!r} (expected 'desk' or 'paper')")


_SECTIONS = ("vgg", "vit", "encoder", "decoder", "schedule", "task", "train", "profile")


def _coerce(raw: str, sample):
    if isinstance(sample, bool):
        low = raw.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"expected boolean, got {raw!r}")
    if isinstance(sample, int):
        return int(raw)
    if isinstance(sample, float):
        return float(raw)
    if isinstance(sample, tuple):
        return tuple(int(v) for v in raw.split(",") if v.strip())
    return raw.strip()


def parse_config_text(text: str) -> dict[str, str]:
    items: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = stripped.split("=", 1)
        items[key.strip()] = value.strip()
    return items


def apply_overrides(cfg: RunConfig, items: dict[str, str]) -> RunConfig:
    for key, raw in items.items():
        if key == "preset":
            continue  # consumed by the loader before overrides apply
        if "." in key:
            section, name = key.split(".", 1)
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section {section!r} in key {key!r}")
            target = getattr(cfg, section)
        else:
            target, name = cfg, key
        if not hasattr(target, name) or name.startswith("_"):
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(target, name)
        if isinstance(current, (Vgg21dConfig, VitConfig, EncoderConfig, DecoderConfig,
                                ScheduleConfig, TaskConfig, TrainConfig, ProfileConfig)):
            raise ConfigError(f"{key!r} is a section, not a value")
        setattr(target, name, _coerce(raw, current))
    return cfg


def load_config_text(text: str, front_end: str | None = None) -> RunConfig:
    """Build a RunConfig from flat text: `preset` selects the base, every
    other key overrides a field."""
    items = parse_config_text(text)
    preset = items.get("preset", "desk")
    cfg = make_preset(preset, items.get("front_end", front_end or "vit"))
    apply_overrides(cfg, items)
    if front_end is not None:
        cfg.front_end = front_end
    return cfg.validate()


def config_to_text(cfg: RunConfig) -> str:
    """Serialize the full configuration in the same flat format (round-trips
    through load_config_text)."""
    lines = [f"preset = {cfg.preset}"]
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if f.name == "preset":
            continue
        if dataclasses.is_dataclass(value):
            for sub in fields(value):
                v = getattr(value, sub.name)
                if isinstance(v, tuple):
                    v = ",".join(str(x) for x in v)
                lines.append(f"{f.name}.{sub.name} = {v}")
        else:
            lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
