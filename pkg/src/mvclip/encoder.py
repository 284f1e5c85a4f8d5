"""Multi-view vision transformer shape encoder.

Every view is patchified and embedded with one shared positional table.
Blocks in the frozen prefix attend within each view; blocks in the
trainable suffix can attend across all views of an object (multi-view
attention).  The final CLS token of each view is projected, the projected
vectors are averaged over views and the mean is L2-normalised.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import config as cfgio
from .nn import Block, LayerNorm, Module, MultiHeadAttention, scaled_dot_attention
from .numerics import Parameter, Tensor, no_grad, ops


@dataclass(frozen=True)
class EncoderConfig:
    image_size: int = 32
    patch_size: int = 8
    width: int = 64
    depth: int = 4
    heads: int = 4
    frozen_prefix: int = 2
    mva_enabled: bool = True
    train_mlp: bool = False
    embed_dim: int = 64
    max_views: int = 12

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ValueError("image_size must be divisible by patch_size")
        if self.width % self.heads:
            raise ValueError("width must be divisible by heads")
        if not 0 <= self.frozen_prefix <= self.depth:
            raise ValueError("frozen_prefix must lie in [0, depth]")
        if self.max_views < 1:
            raise ValueError("max_views must be >= 1")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid ** 2

    @property
    def tokens_per_view(self) -> int:
        return self.num_patches + 1

    @property
    def head_dim(self) -> int:
        return self.width // self.heads

    def dumps(self) -> str:
        return cfgio.dumps(self)

    @classmethod
    def loads(cls, text: str) -> "EncoderConfig":
        return cfgio.loads(text, cls)


class ViewCountError(ValueError):
    pass


def patchify_pixels(images: np.ndarray, patch: int) -> np.ndarray:
    """(..., H, W, 3) -> (..., (H/p)*(W/p), p*p*3), row-major over the patch grid."""
    *lead, H, W, C = images.shape
    if H % patch or W % patch:
        raise ValueError(f"image size {H}x{W} is not divisible by patch size {patch}")
    g_h, g_w = H // patch, W // patch
    x = images.reshape(*lead, g_h, patch, g_w, patch, C)
    n = len(lead)
    axes = tuple(range(n)) + (n, n + 2, n + 1, n + 3, n + 4)
    return x.transpose(axes).reshape(*lead, g_h * g_w, patch * patch * C)


class VisionEncoder(Module):
    def __init__(self, config: EncoderConfig = EncoderConfig(), seed: int = 0):
        rng = np.random.default_rng(seed)
        c = config
        self.config = c
        k = c.width
        self.patch_embed = Parameter(
            (rng.standard_normal((c.patch_size ** 2 * 3, k)) / math.sqrt(c.patch_size ** 2 * 3)).astype(np.float32))
        self.cls = Parameter((rng.standard_normal(k) * 0.02).astype(np.float32))
        self.pos = Parameter((rng.standard_normal((c.tokens_per_view, k)) * 0.02).astype(np.float32))
        self.ln_pre = LayerNorm(k)
        self.blocks = [Block(rng, k, c.heads) for _ in range(c.depth)]
        self.ln_post = LayerNorm(k)
        self.proj = Parameter((rng.standard_normal((k, c.embed_dim)) / math.sqrt(k)).astype(np.float32))

    # -- configuration ------------------------------------------------------
    def with_config(self, **changes) -> "VisionEncoder":
        """Copy of this encoder sharing no state, with config fields replaced."""
        clone = self.clone()
        clone.config = dataclasses.replace(self.config, **changes)
        return clone

    def configure_trainable(self) -> None:
        """Freeze everything except suffix attention (+MLPs if enabled) and the projection."""
        self.freeze()
        for block in self.blocks[self.config.frozen_prefix:]:
            for p in block.attention_parameters():
                p.set_trainable(True)
            if self.config.train_mlp:
                for p in block.mlp_parameters():
                    p.set_trainable(True)
        self.proj.set_trainable(True)

    def cross_view_layer(self, index: int) -> bool:
        return self.config.mva_enabled and index >= self.config.frozen_prefix

    # -- forward pieces -------------------------------------------------------
    def _as_batch(self, views: np.ndarray) -> np.ndarray:
        views = np.asarray(views)
        if views.ndim == 3:
            views = views[None, None]
        elif views.ndim == 4:
            views = views[None]
        if views.ndim != 5:
            raise ValueError(f"expected (B, m, H, W, 3) views, got shape {views.shape}")
        B, m, H, W, C = views.shape
        s = self.config.image_size
        if (H, W, C) != (s, s, 3):
            raise ValueError(f"view size {H}x{W}x{C} does not match config image_size {s}")
        if not 1 <= m <= self.config.max_views:
            raise ViewCountError(f"view count {m} outside [1, {self.config.max_views}]")
        return views

    def embed_tokens(self, views: np.ndarray) -> Tensor:
        """Patchify, project, prepend CLS, add positions, pre-norm: (B, m, L, k)."""
        views = self._as_batch(views)
        B, m = views.shape[:2]
        k = self.config.width
        patches = Tensor(patchify_pixels(views.astype(self.dtype, copy=False), self.config.patch_size))
        x = ops.matmul(patches, self.patch_embed)
        cls = ops.broadcast_to(ops.reshape(self.cls, (1, 1, 1, k)), (B, m, 1, k))
        x = ops.concat([cls, x], axis=2) + self.pos
        return self.ln_pre(x)

    def run_blocks(self, x: Tensor, start: int = 0, stop: int | None = None, capture: dict | None = None) -> Tensor:
        stop = len(self.blocks) if stop is None else stop
        for i in range(start, stop):
            probs: list | None = [] if capture is not None else None
            x = self.blocks[i](x, cross_view=self.cross_view_layer(i), capture=probs)
            if capture is not None:
                capture[i] = probs[0]
        return x

    def head(self, x: Tensor) -> Tensor:
        """Final CLS tokens -> projected per-view vectors (B, m, embed_dim)."""
        cls = x[:, :, 0, :]
        return ops.matmul(self.ln_post(cls), self.proj)

    def view_features(self, views: np.ndarray, capture: dict | None = None) -> Tensor:
        return self.head(self.run_blocks(self.embed_tokens(views), capture=capture))

    def prefix_tokens(self, views: np.ndarray) -> np.ndarray:
        """Output of the frozen prefix (constant while the prefix stays frozen)."""
        with no_grad():
            x = self.run_blocks(self.embed_tokens(views), 0, self.config.frozen_prefix)
        return x.data

    def features_from_prefix(self, prefix: np.ndarray) -> Tensor:
        x = self.run_blocks(Tensor(prefix), self.config.frozen_prefix)
        return self.head(x)

    def encode(self, views: np.ndarray, capture: dict | None = None) -> Tensor:
        """Unit-norm shape embeddings (B, embed_dim) from views (B, m, H, W, 3)."""
        return pool_views(self.view_features(views, capture))


def pool_views(features: Tensor) -> Tensor:
    """Mean over the view axis of projected vectors, then L2 normalise."""
    return ops.l2_normalize(ops.mean(features, axis=1), axis=-1)


# -- functional views of the encoder's operations -----------------------------

def patchify(image: np.ndarray, encoder: VisionEncoder) -> np.ndarray:
    """Token matrix (L, k) for a single (H, W, 3) image."""
    with no_grad():
        return encoder.embed_tokens(np.asarray(image)[None, None]).data[0, 0]


def attention(q, k, v) -> np.ndarray:
    """Single-head softmax(q k^T / sqrt(d_k)) v for (T, d_k) matrices."""
    q, k, v = (x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64)) for x in (q, k, v))
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ValueError("attention expects (T, d_k) matrices")
    out, _ = scaled_dot_attention(q, k, v)
    return out.data


def mva_attention(attn: MultiHeadAttention, tokens: np.ndarray, enable_mva: bool) -> np.ndarray:
    """Run one attention layer over an object's (m, L, k) tokens."""
    tokens = np.asarray(tokens)
    if tokens.ndim != 3:
        raise ValueError("tokens must be shaped (m, L, k)")
    with no_grad():
        x = Tensor(tokens.astype(attn.q.weight.dtype, copy=False)[None])
        return attn(x, cross_view=enable_mva).data[0]


def encode_shape(views, encoder: VisionEncoder) -> np.ndarray:
    """Embedding of one object from its (m, H, W, 3) views."""
    views = np.asarray(views)
    if views.ndim == 3:
        views = views[None]
    if views.shape[0] == 0:
        raise ViewCountError("at least one view is required")
    with no_grad():
        return encoder.encode(views[None]).data[0]
