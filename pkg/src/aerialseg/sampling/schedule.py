"""Seed derivation and equal-allocation epoch scheduling."""

from __future__ import annotations

import zlib
from typing import NamedTuple

import numpy as np

from aerialseg.errors import SamplingError


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``; same inputs, same stream.

    Lets any subset of samples be drawn in any order with identical results.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]))


def stable_key(text: str) -> int:
    """A 32-bit integer key for a string, stable across processes."""
    return zlib.crc32(text.encode("utf-8"))


class Draw(NamedTuple):
    dataset_id: str
    tile_index: int
    origin_index: int


def epoch_schedule(train_datasets: dict, samples_per_epoch: int, rng: np.random.Generator) -> list:
    """Equal per-dataset allocation of sample origins for one epoch.

    Args:
        train_datasets: dataset_id -> sequence of tile point counts.
        samples_per_epoch: total draws; must divide evenly across datasets.
        rng: source of randomness.

    Each dataset receives ``samples_per_epoch / len(train_datasets)`` draws.
    Origins are uniform over a dataset's points, so tiles are weighted by
    their point count. The combined list is shuffled.
    """
    if not train_datasets:
        raise SamplingError("epoch_schedule needs at least one training dataset")
    per_ds, rem = divmod(int(samples_per_epoch), len(train_datasets))
    if rem or per_ds < 1:
        raise SamplingError(
            f"{samples_per_epoch} samples cannot be split equally over {len(train_datasets)} datasets"
        )
    draws = []
    for dataset_id in sorted(train_datasets):
        counts = np.asarray(train_datasets[dataset_id], dtype=np.int64)
        if len(counts) == 0 or counts.sum() == 0:
            raise SamplingError(f"dataset {dataset_id!r} has no points")
        ends = np.cumsum(counts)
        flat = rng.integers(0, ends[-1], size=per_ds)
        tiles = np.searchsorted(ends, flat, side="right")
        local = flat - (ends[tiles] - counts[tiles])
        draws += [Draw(dataset_id, int(t), int(o)) for t, o in zip(tiles, local)]
    order = rng.permutation(len(draws))
    return [draws[i] for i in order]
