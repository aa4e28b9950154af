"""Sampling strategies, density algebra, augmentations and epoch scheduling."""

from aerialseg.sampling.augment import (
    NO_AUGMENTATION,
    AugmentOptions,
    augment,
    center,
    jitter,
    random_downsample,
    rotate_z,
    shuffle,
)
from aerialseg.sampling.config import (
    CONSTANT_DENSITY,
    CONSTANT_RADIUS,
    NAIVE,
    STRATEGIES,
    SamplerConfig,
)
from aerialseg.sampling.density import max_density, points_for_density, radius_for_count
from aerialseg.sampling.samplers import (
    SYNTHETIC,
    Sample,
    draw_sample,
    sample_constant_density,
    sample_constant_radius,
    sample_naive,
    upsample_with_noise,
)
from aerialseg.sampling.schedule import Draw, derive_rng, epoch_schedule, stable_key

__all__ = [
    "AugmentOptions",
    "CONSTANT_DENSITY",
    "CONSTANT_RADIUS",
    "Draw",
    "NAIVE",
    "NO_AUGMENTATION",
    "STRATEGIES",
    "SYNTHETIC",
    "Sample",
    "SamplerConfig",
    "augment",
    "center",
    "derive_rng",
    "draw_sample",
    "epoch_schedule",
    "jitter",
    "max_density",
    "points_for_density",
    "radius_for_count",
    "random_downsample",
    "rotate_z",
    "sample_constant_density",
    "sample_constant_radius",
    "sample_naive",
    "shuffle",
    "stable_key",
    "upsample_with_noise",
]
