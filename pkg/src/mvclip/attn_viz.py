"""Cross-view attention rows and per-view heatmap overlays."""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .encoder import VisionEncoder
from .numerics import no_grad
from .synth.ppm import write_ppm

ALPHA = 0.5


@dataclass
class AttentionRecord:
    layer: int
    head: str | int          # "mean" or a head index
    query: int               # flattened token index in [0, m*L)
    row: np.ndarray          # (m*L,) post-softmax weights, sums to 1
    views: int
    tokens_per_view: int

    def view_slice(self, j: int) -> np.ndarray:
        L = self.tokens_per_view
        return self.row[j * L:(j + 1) * L]


def first_cross_view_layer(encoder: VisionEncoder) -> int:
    for i in range(encoder.config.depth):
        if encoder.cross_view_layer(i):
            return i
    raise ValueError("layer has no cross-view attention")


def extract_attention(encoder: VisionEncoder, views: np.ndarray, layer: int | None = None,
                      token: tuple[int, int] = (0, 0), head: str | int = "mean") -> AttentionRecord:
    """Attention row of patch ``token = (view j, patch p)`` at a cross-view layer.

    Patches are numbered row-major over the grid and exclude CLS, so the
    query's flattened index is ``j*L + 1 + p``.
    """
    layer = first_cross_view_layer(encoder) if layer is None else layer
    if not 0 <= layer < encoder.config.depth or not encoder.cross_view_layer(layer):
        raise ValueError("layer has no cross-view attention")
    views = np.asarray(views)
    if views.ndim == 3:
        views = views[None]
    m = views.shape[0]
    L = encoder.config.tokens_per_view
    j, p = token
    if not 0 <= j < m or not 0 <= p < encoder.config.num_patches:
        raise ValueError(f"token {token} outside {m} views x {encoder.config.num_patches} patches")
    capture: dict[int, np.ndarray] = {}
    with no_grad():
        encoder.encode(views[None], capture=capture)
    probs = capture[layer][0]  # (heads, m*L, m*L)
    query = j * L + 1 + p
    if head == "mean":
        row = probs[:, query, :].astype(np.float64).mean(axis=0)
    else:
        if not 0 <= int(head) < probs.shape[0]:
            raise ValueError(f"head {head} outside [0, {probs.shape[0]})")
        row = probs[int(head), query, :].astype(np.float64)
    return AttentionRecord(layer, head, query, row, m, L)


def heat_maps(record: AttentionRecord, grid: int) -> np.ndarray:
    """Per-view patch maps (m, grid, grid), min-max normalised jointly over all views.

    CLS columns are dropped first.  A constant row maps to 0.5 everywhere.
    """
    patches = np.stack([record.view_slice(j)[1:] for j in range(record.views)])
    if patches.shape[1] != grid * grid:
        raise ValueError("record does not match the patch grid")
    lo, hi = patches.min(), patches.max()
    norm = np.full_like(patches, 0.5) if hi == lo else (patches - lo) / (hi - lo)
    return norm.reshape(record.views, grid, grid)


def _upsample(cells: np.ndarray, size: int) -> np.ndarray:
    # half-pixel aligned bilinear interpolation
    return np.clip(ndimage.zoom(cells, size / cells.shape[0], order=1, mode="nearest", grid_mode=True), 0.0, 1.0)


def colorize(v: np.ndarray) -> np.ndarray:
    """Blue (low) to red (high) ramp, (..., 3) in [0, 1]."""
    return np.stack([v, np.zeros_like(v), 1.0 - v], axis=-1)


def overlays(record: AttentionRecord, views: np.ndarray, grid: int) -> list[np.ndarray]:
    views = np.asarray(views)
    if views.ndim == 3:
        views = views[None]
    if views.shape[0] != record.views:
        raise ValueError(f"record covers {record.views} views, got {views.shape[0]}")
    images = views.astype(np.float64)
    if views.dtype == np.uint8:
        images = images / 255.0
    out = []
    for cells, image in zip(heat_maps(record, grid), images):
        heat = colorize(_upsample(cells, image.shape[0]))
        blend = (1.0 - ALPHA) * image + ALPHA * heat
        out.append(np.clip(np.floor(blend * 255.0 + 0.5), 0, 255).astype(np.uint8))
    return out


def render_heatmap(record: AttentionRecord, views: np.ndarray, out_dir: str | os.PathLike,
                   object_id: str, grid: int) -> list[Path]:
    """Write ``<id>_view<j>_tok<p>.ppm`` for every view; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    patch = record.query % record.tokens_per_view - 1
    paths = []
    for j, image in enumerate(overlays(record, views, grid)):
        path = out / f"{object_id}_view{j}_tok{patch}.ppm"
        write_ppm(path, image)
        paths.append(path)
    return paths
