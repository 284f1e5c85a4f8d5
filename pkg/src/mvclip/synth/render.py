"""Analytic ray tracing of the primitive set.

Geometry is traced in camera space: the camera sits at the origin looking
down -z and the object centre is at (0, 0, -radius).  Spheres are tested
directly in that frame; the other primitives are tested in their local frame.
One camera-relative directional light gives a Lambert term on top of a flat
ambient term.  Background is white.
"""
from __future__ import annotations

import functools
import math

import numpy as np

from .. import kernels
from .._fallback import CONE, CUBE, CYLINDER, EMPTY, SPHERES
from .scene import Pose, SceneSpec

FOV_DEGREES = 45.0
LIGHT = np.array([0.35, 0.55, 0.76]) / np.linalg.norm([0.35, 0.55, 0.76])

# canonical sizes at scale 1.0
SPHERE_RADIUS = 0.5
CUBE_HALF = 0.4
CYLINDER_RADIUS, CYLINDER_HALF = 0.4, 0.4
CONE_RADIUS, CONE_HALF = 0.45, 0.45
RING_RADIUS, RING_BEAD, RING_COUNT = 0.36, 0.14, 8


@functools.lru_cache(maxsize=8)
def ray_directions(resolution: int) -> np.ndarray:
    """Unit camera-space directions through pixel centres, row-major, (P, 3)."""
    t = math.tan(math.radians(FOV_DEGREES) / 2.0)
    c = (np.arange(resolution) + 0.5) / resolution * 2.0 - 1.0
    v, u = np.meshgrid(-c * t, c * t, indexing="ij")
    d = np.stack([u, v, -np.ones_like(u)], axis=-1).reshape(-1, 3)
    d /= np.sqrt((d * d).sum(axis=1, keepdims=True))
    d.setflags(write=False)
    return d


def _sphere_rows(centres_local: np.ndarray, radius: float, R: np.ndarray, dist: float) -> np.ndarray:
    rows = []
    for c in centres_local:
        cam = R @ c + np.array([0.0, 0.0, -dist])
        cx, cy, cz = (float(v) for v in cam)
        rows.append((cx, cy, cz, radius, cx * cx + cy * cy + cz * cz - radius * radius))
    return np.ascontiguousarray(rows, dtype=np.float64)


def trace_args(scene: SceneSpec | None, pose: Pose) -> tuple:
    """Arguments of the ``trace`` kernel (after the ray directions)."""
    R, origin = pose.basis()
    no_spheres = np.zeros((0, 5))
    size = np.zeros(3)
    if scene is None:
        return (EMPTY, no_spheres, R, origin, size, np.ones(3), 1.0, 0.0, LIGHT)
    s = scene.scale
    if scene.primitive == "sphere":
        kind, spheres = SPHERES, _sphere_rows(np.zeros((1, 3)), SPHERE_RADIUS * s, R, pose.radius)
    elif scene.primitive == "torus":
        ang = 2.0 * math.pi * np.arange(RING_COUNT) / RING_COUNT
        centres = np.stack([np.cos(ang), np.sin(ang), np.zeros_like(ang)], axis=1) * (RING_RADIUS * s)
        kind, spheres = SPHERES, _sphere_rows(centres, RING_BEAD * s, R, pose.radius)
    elif scene.primitive == "cube":
        kind, spheres = CUBE, no_spheres
        size = np.array([CUBE_HALF * s, 0.0, 0.0])
    elif scene.primitive == "cylinder":
        kind, spheres = CYLINDER, no_spheres
        size = np.array([CYLINDER_RADIUS * s, CYLINDER_HALF * s, 0.0])
    elif scene.primitive == "cone":
        kind, spheres = CONE, no_spheres
        rho, h = CONE_RADIUS * s, CONE_HALF * s
        size = np.array([rho, h, (rho / (2.0 * h)) ** 2])
    else:
        raise ValueError(f"unknown primitive {scene.primitive!r}")
    ambient = scene.ambient
    return (kind, spheres, np.ascontiguousarray(R), np.ascontiguousarray(origin), size,
            np.asarray(scene.rgb, dtype=np.float64), ambient, 1.0 - ambient, LIGHT)


def render_view(scene: SceneSpec | None, pose: Pose, resolution: int = 32, backend=None) -> np.ndarray:
    """uint8 (resolution, resolution, 3) image; ``scene=None`` renders the empty scene."""
    impl = backend or kernels.get_backend()
    pixels = impl.trace(ray_directions(resolution), *trace_args(scene, pose))
    return pixels.reshape(resolution, resolution, 3)
