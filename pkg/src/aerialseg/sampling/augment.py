"""Training-time augmentations: shuffle, center, downsample, z-rotation, jitter."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from aerialseg.errors import SamplingError
from aerialseg.sampling.samplers import Sample

JITTER_UNIFORM = "uniform"
JITTER_GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class AugmentOptions:
    shuffle: bool = True
    center: bool = True
    downsample: bool = True
    min_keep_fraction: float = 0.1
    rotate: bool = True
    jitter: bool = True
    jitter_scale: float = 0.5  # bound per axis (uniform) or std (gaussian), metres
    jitter_mode: str = JITTER_UNIFORM

    def __post_init__(self):
        if not 0 < self.min_keep_fraction <= 1:
            raise SamplingError("min_keep_fraction must be in (0, 1]")
        if self.jitter_mode not in (JITTER_UNIFORM, JITTER_GAUSSIAN):
            raise SamplingError(f"unknown jitter_mode {self.jitter_mode!r}")
        if not self.jitter_scale >= 0:
            raise SamplingError("jitter_scale must be >= 0")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "AugmentOptions":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise SamplingError(f"unknown augmentation keys {sorted(unknown)}")
        return cls(**doc)


NO_AUGMENTATION = AugmentOptions(shuffle=False, center=False, downsample=False, rotate=False, jitter=False)


def shuffle(sample: Sample, rng: np.random.Generator) -> Sample:
    return sample.take(rng.permutation(len(sample)))


def center(sample: Sample) -> Sample:
    """Shift so the coordinate mean is zero."""
    return replace(sample, positions=sample.positions - sample.positions.mean(axis=0))


def random_downsample(sample: Sample, rng: np.random.Generator, fraction: float | None = None,
                      min_keep_fraction: float = 0.1) -> Sample:
    """Keep a uniform random ``fraction`` of the points (drawn from [min, 1] if None)."""
    if fraction is None:
        fraction = rng.uniform(min_keep_fraction, 1.0)
    n = len(sample)
    keep = max(1, int(round(fraction * n)))
    if keep >= n:
        return sample
    chosen = np.sort(rng.choice(n, size=keep, replace=False))
    return sample.take(chosen)


def rotate_z(sample: Sample, theta: float) -> Sample:
    """Rotate about the z axis by ``theta`` radians; z is left untouched."""
    c, s = math.cos(theta), math.sin(theta)
    p = sample.positions
    out = p.copy()
    out[:, 0] = c * p[:, 0] - s * p[:, 1]
    out[:, 1] = s * p[:, 0] + c * p[:, 1]
    return replace(sample, positions=out)


def jitter(sample: Sample, rng: np.random.Generator, scale: float = 0.5,
           mode: str = JITTER_UNIFORM) -> Sample:
    """Add per-point noise: uniform in [-scale, scale] per axis, or Gaussian with std ``scale``."""
    shape = sample.positions.shape
    if mode == JITTER_UNIFORM:
        noise = rng.uniform(-scale, scale, size=shape)
    elif mode == JITTER_GAUSSIAN:
        noise = rng.normal(0.0, scale, size=shape)
    else:
        raise SamplingError(f"unknown jitter mode {mode!r}")
    return replace(sample, positions=sample.positions + noise)


def augment(sample: Sample, rng: np.random.Generator, options: AugmentOptions = AugmentOptions()) -> Sample:
    """shuffle -> center -> random_downsample -> rotate_z -> jitter.

    Downsampling only applies to naive samples: fixed-size strategies must
    keep exactly N points.
    """
    if len(sample) == 0:
        raise SamplingError("cannot augment an empty sample")
    if options.shuffle:
        sample = shuffle(sample, rng)
    if options.center:
        sample = center(sample)
    if options.downsample and sample.config.is_naive:
        sample = random_downsample(sample, rng, min_keep_fraction=options.min_keep_fraction)
    if options.rotate:
        sample = rotate_z(sample, rng.uniform(0.0, 2.0 * math.pi))
    if options.jitter:
        sample = jitter(sample, rng, options.jitter_scale, options.jitter_mode)
    return sample
