"""Training and sampling engine tying schedule, networks, and losses together."""

from .checkpoint import (
    Checkpoint,
    build_denoiser,
    build_fcm,
    build_remod,
    load_checkpoint,
    save_checkpoint,
)
from .config import (
    AppConfig,
    DegradationConfig,
    DiffusionConfig,
    FcmConfig,
    IoConfig,
    RemodConfig,
    TrainingConfig,
    config_to_toml,
    default_config,
    load_config,
    resolve_config_path,
)
from .losses import contrast_loss, fcm_loss, gaussian_kl, hybrid_loss, sobel_gradients
from .sampler import (
    FusionRun,
    ModalPair,
    diffuse_fuse,
    fuse_full,
    remodulated_blend,
    restore_chroma,
    restore_component,
)
from .training import (
    evaluate_fcm_loss,
    train_fcm,
    train_remod_block,
    train_restoration_diffusion,
)

__all__ = [
    "AppConfig",
    "Checkpoint",
    "DegradationConfig",
    "DiffusionConfig",
    "FcmConfig",
    "FusionRun",
    "IoConfig",
    "ModalPair",
    "RemodConfig",
    "TrainingConfig",
    "build_denoiser",
    "build_fcm",
    "build_remod",
    "config_to_toml",
    "contrast_loss",
    "default_config",
    "diffuse_fuse",
    "evaluate_fcm_loss",
    "fcm_loss",
    "fuse_full",
    "gaussian_kl",
    "hybrid_loss",
    "load_checkpoint",
    "load_config",
    "remodulated_blend",
    "resolve_config_path",
    "restore_chroma",
    "restore_component",
    "save_checkpoint",
    "sobel_gradients",
    "train_fcm",
    "train_remod_block",
    "train_restoration_diffusion",
]
