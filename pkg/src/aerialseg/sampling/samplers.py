"""Cutting fixed-size samples out of a tile around an origin point."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from aerialseg.errors import SamplingError
from aerialseg.sampling.config import (
    CONSTANT_DENSITY,
    CONSTANT_RADIUS,
    DEFAULT_UPSAMPLE_SIGMA,
    NAIVE,
    SamplerConfig,
)
from aerialseg.sampling.density import points_for_density
from aerialseg.spatial import KdTree

# original_indices value of points that do not exist in the tile.
SYNTHETIC = -1


@dataclass(eq=False)
class Sample:
    """A drawn batch of points.

    ``positions`` are relative to ``origin``. Points synthesized by
    upsampling carry ``original_indices == SYNTHETIC`` and
    ``synthetic_mask == True``; they copy their parent's label.
    """

    positions: np.ndarray
    unified_labels: np.ndarray
    original_indices: np.ndarray
    synthetic_mask: np.ndarray
    origin: np.ndarray
    config: SamplerConfig

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def n_synthetic(self) -> int:
        return int(self.synthetic_mask.sum())

    def take(self, keep: np.ndarray) -> "Sample":
        """Subset/reorder by an index array."""
        return replace(
            self,
            positions=self.positions[keep],
            unified_labels=self.unified_labels[keep],
            original_indices=self.original_indices[keep],
            synthetic_mask=self.synthetic_mask[keep],
        )

    def identical(self, other: "Sample") -> bool:
        return (
            self.config == other.config
            and np.array_equal(self.origin, other.origin)
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.unified_labels, other.unified_labels)
            and np.array_equal(self.original_indices, other.original_indices)
            and np.array_equal(self.synthetic_mask, other.synthetic_mask)
        )


def upsample_with_noise(real_points, target_count: int, rng: np.random.Generator,
                        sigma: float = DEFAULT_UPSAMPLE_SIGMA) -> tuple[np.ndarray, np.ndarray]:
    """Synthesize ``target_count - len(real_points)`` noisy duplicates.

    Each new point is a uniformly chosen real point plus isotropic Gaussian
    noise with per-axis std ``sigma``. Returns ``(points, parents)`` where
    ``parents`` indexes ``real_points``.
    """
    real = np.asarray(real_points, dtype=np.float64).reshape(-1, 3)
    if len(real) == 0:
        raise SamplingError("cannot upsample from zero real points")
    extra = int(target_count) - len(real)
    if extra <= 0:
        raise SamplingError(f"target_count {target_count} must exceed the {len(real)} real points")
    parents = rng.integers(0, len(real), size=extra)
    noise = rng.normal(0.0, 1.0, size=(extra, 3)) * sigma
    return real[parents] + noise, parents


def _make(tile, idx: np.ndarray, origin: np.ndarray, config: SamplerConfig) -> Sample:
    return Sample(
        positions=tile.positions[idx] - origin,
        unified_labels=tile.unified_labels[idx],
        original_indices=idx.astype(np.int64),
        synthetic_mask=np.zeros(len(idx), dtype=bool),
        origin=origin,
        config=config,
    )


def _origin(tile, origin_index: int) -> np.ndarray:
    if not 0 <= int(origin_index) < len(tile.positions):
        raise SamplingError(f"origin_index {origin_index} outside tile of {len(tile.positions)} points")
    return tile.positions[int(origin_index)].copy()


def sample_naive(tile, tree: KdTree, origin_index: int, n_points: int,
                 rng: np.random.Generator | None = None, config: SamplerConfig | None = None) -> Sample:
    """The ``n_points`` nearest neighbours of the origin point, origin included.

    No padding: a tile smaller than ``n_points`` is an error.
    """
    if n_points > len(tile.positions):
        raise SamplingError(
            f"naive sampling of {n_points} points from a tile of only {len(tile.positions)}"
        )
    origin = _origin(tile, origin_index)
    config = config or SamplerConfig(NAIVE, n_points=n_points)
    idx = tree.knn(origin, n_points)
    return _make(tile, idx, origin, config)


def sample_constant_radius(tile, tree: KdTree, origin_index: int, radius: float, n_points: int,
                           rng: np.random.Generator, config: SamplerConfig | None = None,
                           upsample_sigma: float | None = None) -> Sample:
    """All points within ``radius`` of the origin, resized to exactly ``n_points``.

    Too many points are randomly dropped; too few are topped up with noisy
    duplicates flagged in ``synthetic_mask``.
    """
    if not radius > 0 or n_points < 1:
        raise SamplingError(f"need radius > 0 and n_points >= 1, got {radius}, {n_points}")
    config = config or SamplerConfig(CONSTANT_RADIUS, n_points=n_points, radius=radius)
    sigma = config.upsample_sigma if upsample_sigma is None else upsample_sigma
    origin = _origin(tile, origin_index)
    ball = tree.radius_query(origin, radius)
    if len(ball) == 0:
        raise SamplingError("empty sample region")
    if len(ball) > n_points:
        ball = np.sort(rng.choice(ball, size=n_points, replace=False))
    sample = _make(tile, ball, origin, config)
    if len(ball) == n_points:
        return sample
    extra, parents = upsample_with_noise(sample.positions, n_points, rng, sigma)
    k = len(extra)
    return replace(
        sample,
        positions=np.concatenate([sample.positions, extra]),
        unified_labels=np.concatenate([sample.unified_labels, sample.unified_labels[parents]]),
        original_indices=np.concatenate([sample.original_indices, np.full(k, SYNTHETIC, dtype=np.int64)]),
        synthetic_mask=np.concatenate([sample.synthetic_mask, np.ones(k, dtype=bool)]),
    )


def sample_constant_density(tile, tree: KdTree, origin_index: int, radius: float, density: float,
                            rng: np.random.Generator, config: SamplerConfig | None = None) -> Sample:
    n_points = points_for_density(density, radius)
    config = config or SamplerConfig(CONSTANT_DENSITY, radius=radius, density=density)
    return sample_constant_radius(tile, tree, origin_index, radius, n_points, rng, config)


def draw_sample(tile, tree: KdTree, origin_index: int, config: SamplerConfig,
                rng: np.random.Generator) -> Sample:
    """Dispatch on ``config.strategy``."""
    if config.strategy == NAIVE:
        return sample_naive(tile, tree, origin_index, config.n_points, rng, config)
    if config.strategy == CONSTANT_RADIUS:
        return sample_constant_radius(tile, tree, origin_index, config.radius, config.n_points, rng, config)
    return sample_constant_density(tile, tree, origin_index, config.radius, config.density, rng, config)
