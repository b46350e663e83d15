"""Fine-grained recognition with overlapping patches, attention-rollout part
selection and a margin contrastive loss, on a synthetic toy task."""

from ._core import (
    ConfigError,
    DimensionError,
    IoError,
    contrastive_loss,
    count_patches,
    default_config,
    evaluate,
    extract_patches,
    generate,
    random_hit_probability,
    read_ppm,
    rollout,
    select,
    train,
    write_ppm,
)

__all__ = [
    "ConfigError",
    "DimensionError",
    "IoError",
    "contrastive_loss",
    "count_patches",
    "default_config",
    "evaluate",
    "extract_patches",
    "generate",
    "random_hit_probability",
    "read_ppm",
    "rollout",
    "select",
    "train",
    "write_ppm",
]
