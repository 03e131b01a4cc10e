"""Line-oriented `key = value` configuration with dotted section keys.

`#` starts a comment; unknown keys are usage errors. The same dialect is
used for the config snapshot embedded in checkpoints, so serialization is
canonical: fixed key order, round-trippable value formatting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .decoder import DecoderConfig
from .encoder import ModelConfig
from .errors import ConfigError

_LR_DEFAULTS = {"pretrain": 1e-4, "finetune": 1e-4, "phase": 3e-4}


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    lr: float | None = None          # overrides the per-task default when set
    gamma: float = 0.95
    batch: int = 8                   # pretrain / finetune batch
    phase_batch: int = 128
    loss: str = "mse"
    dropout: float = 0.10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    aug_brightness: float = 0.2
    aug_contrast: tuple[float, float] = (0.8, 1.25)
    aug_saturation: tuple[float, float] = (0.8, 1.25)
    aug_blur_prob: float = 0.5
    aug_blur_sigma_max: float = 1.5

    def __post_init__(self):
        self.validate()

    def lr_for(self, task: str) -> float:
        if task not in _LR_DEFAULTS:
            raise ConfigError(f"unknown training task '{task}'")
        return self.lr if self.lr is not None else _LR_DEFAULTS[task]

    def validate(self) -> None:
        if self.optimizer != "adam":
            raise ConfigError(f"unsupported optimizer '{self.optimizer}'")
        if self.loss not in ("mse", "l1"):
            raise ConfigError(f"unsupported loss '{self.loss}'")
        if self.lr is not None and self.lr <= 0:
            raise ConfigError("train.lr must be positive")
        if not 0 < self.gamma <= 1:
            raise ConfigError("train.gamma must be in (0,1]")
        if self.batch < 1 or self.phase_batch < 1:
            raise ConfigError("batch sizes must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ConfigError("train.dropout must be in [0,1)")


@dataclass
class Config:
    encoder: ModelConfig = field(default_factory=ModelConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        self.encoder.validate()
        self.decoder.validate()
        self.train.validate()
        if self.decoder.latent_dim != self.encoder.latent_dim:
            raise ConfigError(
                f"decoder latent_dim {self.decoder.latent_dim} != encoder latent_dim "
                f"{self.encoder.latent_dim}")
        if self.decoder.resolution != self.encoder.resolution:
            raise ConfigError(
                f"decoder resolution {self.decoder.resolution} != encoder resolution "
                f"{self.encoder.resolution}")

    @staticmethod
    def default() -> "Config":
        return Config()

    @staticmethod
    def tiny64() -> "Config":
        """Small 64x64 variant used for desk-scale training runs."""
        enc = ModelConfig(
            resolution=64, patch_size=16, widths=(32, 64), blocks=(1, 1), heads=(2, 2),
            mlps_per_side=1, mlp_ratio=2.0, width_mults=(1.0, 1.0), latent_dim=64)
        dec = DecoderConfig(
            latent_dim=64, seed_channels=128, seed_hw=4, channels=(64, 32, 16, 3),
            kernels=(4, 4, 4, 4), strides=(2, 2, 2, 2), pads=(1, 1, 1, 1),
            se_scales=(16, 32), resolution=64)
        return Config(encoder=enc, decoder=dec, train=TrainConfig(batch=4))


# key registry: config-file key -> (section, attr, parse, format)

def _parse_int(v: str) -> int:
    return int(v)


def _parse_float(v: str) -> float:
    return float(v)


def _parse_str(v: str) -> str:
    return v


def _parse_ints(v: str) -> tuple[int, ...]:
    return tuple(int(p.strip()) for p in v.split(",") if p.strip())


def _parse_floats(v: str) -> tuple[float, ...]:
    return tuple(float(p.strip()) for p in v.split(",") if p.strip())


def _parse_pair(v: str) -> tuple[float, float]:
    parts = _parse_floats(v)
    if len(parts) != 2:
        raise ValueError("expected two comma-separated values")
    return parts


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


_KEYS: dict[str, tuple[str, str, object]] = {
    "encoder.resolution": ("encoder", "resolution", _parse_int),
    "encoder.patch_size": ("encoder", "patch_size", _parse_int),
    "encoder.in_channels": ("encoder", "in_channels", _parse_int),
    "encoder.widths": ("encoder", "widths", _parse_ints),
    "encoder.blocks": ("encoder", "blocks", _parse_ints),
    "encoder.heads": ("encoder", "heads", _parse_ints),
    "encoder.mlps_per_side": ("encoder", "mlps_per_side", _parse_int),
    "encoder.mlp_ratio": ("encoder", "mlp_ratio", _parse_float),
    "encoder.width_mults": ("encoder", "width_mults", _parse_floats),
    "encoder.latent_dim": ("encoder", "latent_dim", _parse_int),
    "decoder.seed_channels": ("decoder", "seed_channels", _parse_int),
    "decoder.seed_hw": ("decoder", "seed_hw", _parse_int),
    "decoder.channels": ("decoder", "channels", _parse_ints),
    "decoder.kernels": ("decoder", "kernels", _parse_ints),
    "decoder.strides": ("decoder", "strides", _parse_ints),
    "decoder.pads": ("decoder", "pads", _parse_ints),
    "decoder.se_scales": ("decoder", "se_scales", _parse_ints),
    "decoder.se_reduction": ("decoder", "se_reduction", _parse_int),
    "decoder.resolution": ("decoder", "resolution", _parse_int),
    "train.optimizer": ("train", "optimizer", _parse_str),
    "train.lr": ("train", "lr", _parse_float),
    "train.gamma": ("train", "gamma", _parse_float),
    "train.batch": ("train", "batch", _parse_int),
    "train.phase_batch": ("train", "phase_batch", _parse_int),
    "train.loss": ("train", "loss", _parse_str),
    "train.dropout": ("train", "dropout", _parse_float),
    "train.beta1": ("train", "beta1", _parse_float),
    "train.beta2": ("train", "beta2", _parse_float),
    "train.eps": ("train", "eps", _parse_float),
    "train.aug_brightness": ("train", "aug_brightness", _parse_float),
    "train.aug_contrast": ("train", "aug_contrast", _parse_pair),
    "train.aug_saturation": ("train", "aug_saturation", _parse_pair),
    "train.aug_blur_prob": ("train", "aug_blur_prob", _parse_float),
    "train.aug_blur_sigma_max": ("train", "aug_blur_sigma_max", _parse_float),
}


def parse_config(text: str, source: str = "<config>") -> Config:
    """Parse config text over the defaults; unknown keys raise ConfigError."""
    overrides: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got '{raw.strip()}'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown config key '{key}'")
        _, _, parse = _KEYS[key]
        try:
            overrides[key] = parse(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for '{key}': {exc}") from exc

    sections = {"encoder": {}, "decoder": {}, "train": {}}
    for key, value in overrides.items():
        section, attr, _ = _KEYS[key]
        sections[section][attr] = value
    try:
        encoder = ModelConfig(**sections["encoder"])
        dec_kwargs = {"latent_dim": encoder.latent_dim, "resolution": encoder.resolution}
        dec_kwargs.update(sections["decoder"])
        decoder = DecoderConfig(**dec_kwargs)
        train = TrainConfig(**sections["train"])
        return Config(encoder=encoder, decoder=decoder, train=train)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_config(path: str) -> Config:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config(text, source=path)


def config_to_text(cfg: Config) -> str:
    """Canonical serialization: every key, registry order, one per line."""
    lines = []
    for key, (section, attr, _) in _KEYS.items():
        value = getattr(getattr(cfg, section), attr)
        if value is None:
            continue
        lines.append(f"{key} = {_fmt(value)}")
    return "\n".join(lines) + "\n"
