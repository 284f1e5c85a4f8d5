"""Scene specs, the colour palette and camera sampling regimes."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PRIMITIVES = ("sphere", "cube", "cylinder", "cone", "torus")

# fixed palette, RGB in [0, 1]; white is reserved for the background
PALETTE: dict[str, tuple[float, float, float]] = {
    "red": (0.85, 0.15, 0.15),
    "green": (0.20, 0.70, 0.25),
    "blue": (0.20, 0.35, 0.85),
    "yellow": (0.90, 0.80, 0.15),
    "purple": (0.55, 0.25, 0.75),
    "orange": (0.95, 0.55, 0.10),
    "cyan": (0.15, 0.75, 0.80),
    "gray": (0.50, 0.50, 0.50),
}
COLORS = tuple(PALETTE)

# ambient (flat) weight of each shading style; diffuse weight is 1 - ambient
SHADINGS: dict[str, float] = {"harsh": 0.25, "matte": 0.40, "soft": 0.55, "flat": 0.70}

SCALE_RANGE = (0.6, 1.0)


@dataclass(frozen=True)
class SceneSpec:
    id: str
    primitive: str
    color: str
    scale: float
    shading: str = "matte"

    def __post_init__(self):
        if self.primitive not in PRIMITIVES:
            raise ValueError(f"unknown primitive {self.primitive!r}")
        if self.color not in PALETTE:
            raise ValueError(f"unknown colour {self.color!r}")
        if self.shading not in SHADINGS:
            raise ValueError(f"unknown shading {self.shading!r}")

    @property
    def rgb(self) -> tuple[float, float, float]:
        return PALETTE[self.color]

    @property
    def ambient(self) -> float:
        return SHADINGS[self.shading]

    @property
    def fine_class(self) -> str:
        return f"{self.color} {self.primitive}"


def sample_scene(rng: np.random.Generator, primitive: str, scene_id: str) -> SceneSpec:
    color = COLORS[int(rng.integers(len(COLORS)))]
    scale = float(rng.uniform(*SCALE_RANGE))
    shading = tuple(SHADINGS)[int(rng.integers(len(SHADINGS)))]
    return SceneSpec(scene_id, primitive, color, scale, shading)


@dataclass(frozen=True)
class CameraSetting:
    name: str
    elevation: tuple[float, float]
    radius: tuple[float, float] = (1.5, 2.2)
    azimuth: tuple[float, float] = (0.0, 360.0)


UPPER_HEM = CameraSetting("UpperHem", (0.0, 60.0))
EXTENDED_HEM = CameraSetting("ExtendedHem", (-30.0, 60.0))
FULL_SPHERE = CameraSetting("FullSphere", (-90.0, 90.0))

CAMERA_SETTINGS = {
    "upper": UPPER_HEM,
    "extended": EXTENDED_HEM,
    "full": FULL_SPHERE,
}


def camera_setting(name: str) -> CameraSetting:
    key = name.lower()
    for alias, setting in CAMERA_SETTINGS.items():
        if key in (alias, setting.name.lower()):
            return setting
    raise ValueError(f"unknown camera setting {name!r} (choose upper, extended or full)")


@dataclass(frozen=True)
class Pose:
    radius: float
    azimuth: float    # degrees
    elevation: float  # degrees

    def as_list(self) -> list[float]:
        return [self.radius, self.azimuth, self.elevation]

    def basis(self) -> tuple[np.ndarray, np.ndarray]:
        """World->camera rotation (rows: right, up, back) and camera position."""
        az, el = math.radians(self.azimuth), math.radians(self.elevation)
        ca, sa, ce, se = math.cos(az), math.sin(az), math.cos(el), math.sin(el)
        right = (-sa, ca, 0.0)
        up = (-se * ca, -se * sa, ce)
        back = (ce * ca, ce * sa, se)
        R = np.array([right, up, back], dtype=np.float64)
        return R, self.radius * R[2]


def sample_camera(setting: CameraSetting, rng: np.random.Generator) -> Pose:
    """Uniform radius / azimuth / elevation within the setting; looks at the origin."""
    radius = float(rng.uniform(*setting.radius))
    azimuth = float(rng.uniform(*setting.azimuth))
    elevation = float(rng.uniform(*setting.elevation))
    return Pose(radius, azimuth, elevation)
