"""End-to-end gradient verification of the four-term loss."""
from __future__ import annotations

import numpy as np

from .contrastive import LogitScale, full_loss
from .encoder import EncoderConfig, VisionEncoder
from .numerics import Tensor, grad_check, ops

TINY_ENCODER = EncoderConfig(image_size=8, patch_size=4, width=8, depth=2, heads=2, frozen_prefix=0,
                             mva_enabled=True, embed_dim=4, max_views=4)


def end_to_end_gradcheck(seed: int = 0, batch: int = 3, views: int = 2,
                         config: EncoderConfig = TINY_ENCODER, eps: float = 1e-5) -> float:
    """Max relative gradient error of full_loss through a double-precision encoder.

    Every encoder parameter (patch embedding, norms, attention, MLPs,
    projection) and the logit scale are checked.
    """
    rng = np.random.default_rng(seed)
    enc = VisionEncoder(config, seed=seed).astype(np.float64)
    for p in enc.parameters():
        p.set_trainable(True)
    scale = LogitScale(0.5, dtype=np.float64)
    images = rng.random((batch, views, config.image_size, config.image_size, 3))
    fi = ops.l2_normalize(Tensor(rng.standard_normal((batch, config.embed_dim))), axis=-1)
    ft = ops.l2_normalize(Tensor(rng.standard_normal((batch, config.embed_dim))), axis=-1)

    def loss():
        return full_loss(enc.encode(images), fi, ft, scale)

    return grad_check(loss, enc.parameters() + [scale.param], eps=eps)
