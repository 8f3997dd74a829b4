"""Plain-text key=value run configuration.

Every key has a default; unknown keys are rejected so configs stay
enumerable and diffable. Blank lines and '#' comments are allowed.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .nets import GeneratorSpec
from .synthdeg import DegradationSpec
from .uda import TrainConfig


class ConfigError(ValueError):
    """Unreadable, unknown or ill-typed configuration input."""


@dataclass
class RunConfig:
    latent_dim: int = 8
    image_size: int = 16
    lambda1: float = 1.0
    lambda2: float = 0.8
    lambda3: float = 1.0
    lambda_uda: float = 1.0
    divergence: str = "PearsonChi2"
    batch_size: int = 32
    iterations: int = 3000
    inner_steps: int = 1
    lr_encoder: float = 5e-4
    lr_hhat: float = 3e-4
    twin_init_jitter: float = 0.02
    seed: int = 0
    deg_kind: str = "mask"
    rain_streaks: int = 12
    rain_length: int = 5
    rain_angle_min: float = -60.0
    rain_angle_max: float = -45.0
    rain_intensity: float = 0.25
    mask_steps: int = 40
    mask_radius_min: int = 1
    mask_radius_max: int = 2
    mask_fill: float = 0.0
    down_factor: int = 2
    n_src: int = 2000
    n_trg: int = 2000
    n_eval: int = 200
    out_dir: str = "runs/default"

    def __post_init__(self) -> None:
        if self.image_size != 16:
            raise ConfigError(f"image_size must be 16, got {self.image_size}")

    def generator_spec(self) -> GeneratorSpec:
        return GeneratorSpec(latent_dim=self.latent_dim)

    def degradation_spec(self) -> DegradationSpec:
        return DegradationSpec(
            kind=self.deg_kind, seed=self.seed,
            rain_streaks=self.rain_streaks, rain_length=self.rain_length,
            rain_angle_min=self.rain_angle_min, rain_angle_max=self.rain_angle_max,
            rain_intensity=self.rain_intensity, mask_steps=self.mask_steps,
            mask_radius_min=self.mask_radius_min, mask_radius_max=self.mask_radius_max,
            mask_fill=self.mask_fill, down_factor=self.down_factor)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lambda1=self.lambda1, lambda2=self.lambda2, lambda3=self.lambda3,
            lambda_uda=self.lambda_uda, divergence=self.divergence,
            batch_size=self.batch_size, iterations=self.iterations,
            inner_steps=self.inner_steps, lr_encoder=self.lr_encoder,
            lr_hhat=self.lr_hhat, twin_init_jitter=self.twin_init_jitter,
            latent_dim=self.latent_dim, seed=self.seed)

    def to_lines(self) -> list[str]:
        return [f"{f.name}={getattr(self, f.name)}" for f in fields(RunConfig)]


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"key {key!r}: cannot parse {raw!r} as {kind}") from None


def parse_config(text: str) -> RunConfig:
    values = {}
    for line_no, line in enumerate(text.split("\n"), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")
        values[key] = _convert(key, raw.strip())
    return RunConfig(**values)


def load_config(path: Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    return parse_config(text)
