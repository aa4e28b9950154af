"""The unified label taxonomy every source vocabulary is remapped onto."""

from enum import Enum, IntEnum


class UnifiedClass(IntEnum):
    GROUND = 0
    BUILDING = 1
    VEGETATION = 2
    UNDEFINED = 3

    @property
    def title(self) -> str:
        return self.name.capitalize()

    @classmethod
    def parse(cls, name: str) -> "UnifiedClass":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown unified class {name!r}") from None


# Classes that are scored. Undefined is kept in geometry but never evaluated.
EVAL_CLASSES = (UnifiedClass.GROUND, UnifiedClass.BUILDING, UnifiedClass.VEGETATION)


class SensorKind(str, Enum):
    LIDAR = "lidar"
    PHOTOGRAMMETRY = "photogrammetry"

    @classmethod
    def parse(cls, value: str) -> "SensorKind":
        try:
            return cls(value.strip().lower())
        except ValueError:
            raise ValueError(f"unknown sensor kind {value!r}") from None
