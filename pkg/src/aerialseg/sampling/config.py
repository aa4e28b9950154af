from __future__ import annotations

from dataclasses import asdict, dataclass

from aerialseg.errors import SamplingError
from aerialseg.sampling.density import points_for_density

NAIVE = "naive"
CONSTANT_RADIUS = "constant-radius"
CONSTANT_DENSITY = "constant-density"
STRATEGIES = (NAIVE, CONSTANT_RADIUS, CONSTANT_DENSITY)

# Std-dev (m) of the isotropic Gaussian offset given to upsampled duplicates.
DEFAULT_UPSAMPLE_SIGMA = 0.05


@dataclass(frozen=True)
class SamplerConfig:
    """How samples are cut from a tile.

    * ``naive``: the ``n_points`` nearest neighbours of the origin.
    * ``constant-radius``: every point within ``radius``, randomly dropped
      or noisily upsampled to exactly ``n_points``.
    * ``constant-density``: constant-radius with ``n_points`` derived from
      ``density`` so every sample has the same overhead density.
    """

    strategy: str
    n_points: int | None = None
    radius: float | None = None
    density: float | None = None
    seed: int = 0
    upsample_sigma: float = DEFAULT_UPSAMPLE_SIGMA

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise SamplingError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.strategy in (NAIVE, CONSTANT_RADIUS):
            if self.n_points is None or int(self.n_points) < 1:
                raise SamplingError(f"{self.strategy} sampling needs n_points >= 1")
            object.__setattr__(self, "n_points", int(self.n_points))
        if self.strategy in (CONSTANT_RADIUS, CONSTANT_DENSITY):
            if self.radius is None or not self.radius > 0:
                raise SamplingError(f"{self.strategy} sampling needs radius > 0")
            object.__setattr__(self, "radius", float(self.radius))
        if self.strategy == CONSTANT_DENSITY:
            if self.density is None or not self.density > 0:
                raise SamplingError("constant-density sampling needs density > 0")
            object.__setattr__(self, "density", float(self.density))
            n = points_for_density(self.density, self.radius)
            if self.n_points is not None and int(self.n_points) != n:
                raise SamplingError(f"n_points {self.n_points} disagrees with density-derived {n}")
            object.__setattr__(self, "n_points", n)
        if not self.upsample_sigma >= 0:
            raise SamplingError("upsample_sigma must be >= 0")
        if not 0 <= int(self.seed) < 2**64:
            raise SamplingError("seed must fit in 64 unsigned bits")

    @property
    def is_naive(self) -> bool:
        return self.strategy == NAIVE

    @property
    def label(self) -> str:
        """Short column label, e.g. ``naive N=65536`` or ``r=30 d=1``."""
        if self.strategy == NAIVE:
            return f"naive N={self.n_points}"
        if self.strategy == CONSTANT_RADIUS:
            return f"r={_num(self.radius)} N={self.n_points}"
        return f"r={_num(self.radius)} d={_num(self.density)}"

    def to_json(self) -> dict:
        doc = {k: v for k, v in asdict(self).items() if v is not None}
        if self.strategy == CONSTANT_DENSITY:
            doc.pop("n_points", None)
        return doc

    @classmethod
    def from_json(cls, doc: dict, seed: int | None = None) -> "SamplerConfig":
        known = {"strategy", "n_points", "radius", "density", "seed", "upsample_sigma"}
        extra = set(doc) - known
        if extra:
            raise SamplingError(f"unknown sampler keys {sorted(extra)}")
        kwargs = dict(doc)
        if seed is not None and "seed" not in kwargs:
            kwargs["seed"] = seed
        if "strategy" not in kwargs:
            raise SamplingError("sampler config needs a 'strategy'")
        return cls(**kwargs)


def _num(x: float) -> str:
    return f"{x:g}"
