"""Engine configuration: dataclasses, TOML loading, and rendering.

Configuration lives in a TOML file with sections [diffusion], [fcm], [remod],
[degradation], and [io].  Every key has a default, so a partial (or missing)
file is fine.  When no path is given explicitly, the ``DIFUSE_CONFIG``
environment variable is consulted.
"""

from __future__ import annotations

import dataclasses
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "CONFIG_ENV_VAR",
    "TrainingConfig",
    "DiffusionConfig",
    "FcmConfig",
    "RemodConfig",
    "DegradationConfig",
    "IoConfig",
    "AppConfig",
    "default_config",
    "load_config",
    "resolve_config_path",
    "config_to_toml",
]

CONFIG_ENV_VAR = "DIFUSE_CONFIG"


@dataclass(frozen=True)
class TrainingConfig:
    """Optimizer and data-loop settings shared by all training entry points."""

    learning_rate: float = 2e-5
    batch_size: int = 8
    steps: int = 10000
    seed: int = 0
    random_flip: bool = True
    random_crop: bool = False
    crop_size: int = 0
    checkpoint_every: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0.0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1 or self.steps < 1:
            raise ValueError("batch_size and steps must be >= 1")
        if self.random_crop and self.crop_size < 8:
            raise ValueError("random_crop requires crop_size >= 8")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")


@dataclass(frozen=True)
class DiffusionConfig:
    """Schedule, denoiser architecture, and diffusion training settings."""

    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    schedule_kind: str = "linear"
    base_width: int = 64
    depth: int = 3
    time_embed_dim: int = 128
    lambda_vlb: float = 1e-3
    learning_rate: float = 2e-5
    batch_size: int = 8
    steps: int = 10000
    seed: int = 0
    random_flip: bool = True
    random_crop: bool = False
    crop_size: int = 0
    checkpoint_every: int = 0

    def __post_init__(self) -> None:
        if self.schedule_kind != "linear":
            raise ValueError(f"unsupported schedule kind {self.schedule_kind!r}")
        if self.lambda_vlb < 0.0:
            raise ValueError(f"lambda_vlb must be >= 0, got {self.lambda_vlb}")

    def training(self) -> TrainingConfig:
        return TrainingConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            steps=self.steps,
            seed=self.seed,
            random_flip=self.random_flip,
            random_crop=self.random_crop,
            crop_size=self.crop_size,
            checkpoint_every=self.checkpoint_every,
        )


@dataclass(frozen=True)
class FcmConfig:
    """Fusion-control training settings; gammas weight the intensity/gradient terms."""

    gamma_int: float = 1.0
    gamma_grad: float = 0.2
    learning_rate: float = 1e-3
    batch_size: int = 8
    steps: int = 400
    seed: int = 0
    x0_clamp_lo: float = -1.0
    x0_clamp_hi: float = 2.0

    def __post_init__(self) -> None:
        if self.gamma_int < 0.0 or self.gamma_grad < 0.0:
            raise ValueError("loss weights must be >= 0")
        if self.learning_rate <= 0.0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.x0_clamp_lo >= self.x0_clamp_hi:
            raise ValueError("x0 clamp range is empty")


@dataclass(frozen=True)
class RemodConfig:
    """Re-modulation training settings; the penalty keeps in-mask values in range.

    The clamp band must extend past the unit pixel range on both sides:
    clamping exactly at a penalty boundary hides overshoot in that direction
    and lets the contrast term push the masked region there for free.
    """

    learning_rate: float = 1e-3
    batch_size: int = 4
    steps: int = 200
    seed: int = 0
    hidden: int = 16
    penalty_weight: float = 10.0
    x0_clamp_lo: float = -2.0
    x0_clamp_hi: float = 2.0
    t_frac: float = 0.125

    def __post_init__(self) -> None:
        if self.x0_clamp_lo >= self.x0_clamp_hi:
            raise ValueError("x0 clamp range is empty")
        if not 0.0 < self.t_frac <= 1.0:
            raise ValueError(f"t_frac must be in (0, 1], got {self.t_frac}")
        if self.learning_rate <= 0.0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.penalty_weight < 0.0:
            raise ValueError("penalty_weight must be >= 0")


@dataclass(frozen=True)
class DegradationConfig:
    """Severity ranges for synthetic degradation sampling."""

    severity: str = "medium"
    light_gains: tuple[float, float] = (0.85, 1.15)
    light_gamma: tuple[float, float] = (0.80, 1.25)
    light_sigma: tuple[float, float] = (0.0, 0.05)
    medium_gains: tuple[float, float] = (0.70, 1.30)
    medium_gamma: tuple[float, float] = (0.55, 1.80)
    medium_sigma: tuple[float, float] = (0.0, 0.10)
    heavy_gains: tuple[float, float] = (0.60, 1.40)
    heavy_gamma: tuple[float, float] = (0.40, 2.50)
    heavy_sigma: tuple[float, float] = (0.0, 0.15)

    def __post_init__(self) -> None:
        if self.severity not in ("light", "medium", "heavy"):
            raise ValueError(f"unknown severity {self.severity!r}")

    def ranges(self) -> dict[str, dict[str, tuple[float, float]]]:
        return {
            sev: {
                "gains": getattr(self, f"{sev}_gains"),
                "gamma": getattr(self, f"{sev}_gamma"),
                "sigma": getattr(self, f"{sev}_sigma"),
            }
            for sev in ("light", "medium", "heavy")
        }


@dataclass(frozen=True)
class IoConfig:
    """Paths and the external locator endpoint."""

    checkpoint_dir: str = "checkpoints"
    output_dir: str = "outputs"
    mask_dir: str = ""
    locator_url: str = ""
    locator_timeout: float = 10.0

    def __post_init__(self) -> None:
        if self.locator_timeout <= 0.0:
            raise ValueError("locator_timeout must be positive")


@dataclass(frozen=True)
class AppConfig:
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    fcm: FcmConfig = field(default_factory=FcmConfig)
    remod: RemodConfig = field(default_factory=RemodConfig)
    degradation: DegradationConfig = field(default_factory=DegradationConfig)
    io: IoConfig = field(default_factory=IoConfig)


_SECTIONS = {
    "diffusion": DiffusionConfig,
    "fcm": FcmConfig,
    "remod": RemodConfig,
    "degradation": DegradationConfig,
    "io": IoConfig,
}


def default_config() -> AppConfig:
    return AppConfig()


def resolve_config_path(explicit: str | None = None) -> Path | None:
    """Explicit path if given, else the DIFUSE_CONFIG environment variable."""
    if explicit:
        return Path(explicit)
    env = os.environ.get(CONFIG_ENV_VAR, "")
    return Path(env) if env else None


def _build_section(cls, data: dict, section: str):
    valid = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in valid:
            raise ValueError(f"unknown key {key!r} in config section [{section}]")
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def load_config(path: str | Path | None = None) -> AppConfig:
    """Load a TOML config; missing file (when implicit) or sections fall back to defaults."""
    resolved = resolve_config_path(str(path) if path is not None else None)
    if resolved is None:
        return default_config()
    if not resolved.exists():
        raise FileNotFoundError(f"config file not found: {resolved}")
    with resolved.open("rb") as fh:
        data = tomllib.load(fh)
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    kwargs = {
        name: _build_section(cls, data.get(name, {}), name)
        for name, cls in _SECTIONS.items()
    }
    return AppConfig(**kwargs)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return f'"{value}"'
    if isinstance(value, (tuple, list)):
        return "[" + ", ".join(_format_value(v) for v in value) + "]"
    return repr(value)


def config_to_toml(cfg: AppConfig) -> str:
    """Render a config as TOML text (parseable back into the same config)."""
    lines: list[str] = []
    for section, _ in _SECTIONS.items():
        lines.append(f"[{section}]")
        part = getattr(cfg, section)
        for f in fields(part):
            lines.append(f"{f.name} = {_format_value(getattr(part, f.name))}")
        lines.append("")
    return "\n".join(lines)
