"""Relations between sample size, sample radius and overhead density.

A sample of ``N`` points inside a disk of radius ``r`` has overhead density
``N / (pi r^2)``; the helpers below solve that relation for each variable.
"""

import math

from aerialseg.errors import SamplingError


def max_density(n_points: int, radius: float) -> float:
    """Density (pts/m²) reached when ``n_points`` fill a disk of ``radius`` metres."""
    if n_points < 1 or not radius > 0:
        raise SamplingError(f"need n_points >= 1 and radius > 0, got {n_points}, {radius}")
    return n_points / (math.pi * radius * radius)


def points_for_density(density: float, radius: float) -> int:
    """Point count for ``density`` over a disk of ``radius``, rounded half away from zero."""
    if not density > 0 or not radius > 0:
        raise SamplingError(f"need density > 0 and radius > 0, got {density}, {radius}")
    n = math.floor(density * math.pi * radius * radius + 0.5)
    if n < 1:
        raise SamplingError(
            f"density {density} over radius {radius} m rounds to zero points"
        )
    return n


def radius_for_count(n_points: int, density: float) -> float:
    """Radius (m) of the disk that holds ``n_points`` at ``density``."""
    if n_points < 1 or not density > 0:
        raise SamplingError(f"need n_points >= 1 and density > 0, got {n_points}, {density}")
    return math.sqrt(n_points / (math.pi * density))
