"""Residual decoder: transformer blocks, unpatch projection, conv tail.

The decoder predicts a correction on top of the degraded input: enhanced
features run through blocks, are projected back to pixel patches, smoothed
by a 3x3 convolution, added to the input image, and clamped to [0, 1]. With
a zero unpatch projection the model is exactly the identity on valid images,
which makes the untrained network a meaningful baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoder import AttnBlockParams, attn_block_backward, attn_block_forward, init_block
from .encoder import extract_patches, merge_patches
from .tensor_ops import (
    ShapeError,
    clamp01,
    clamp01_backward,
    conv3x3,
    conv3x3_backward,
)


@dataclass
class DecoderParams:
    patch_size: int
    blocks: list[AttnBlockParams] = field(default_factory=list)
    w_unpatch: np.ndarray = None
    b_unpatch: np.ndarray = None
    conv_w: np.ndarray = None
    conv_b: np.ndarray = None


def init_decoder(
    patch_size: int,
    c_feat: int,
    n_blocks: int,
    ffn_hidden: int,
    rng: np.random.Generator,
    dtype=np.float64,
) -> DecoderParams:
    patch_out = patch_size * patch_size * 3
    # identity-tap conv: the tail passes the unpatch output through at init,
    # and the zero unpatch projection makes the whole decoder the identity
    conv_w = np.zeros((3, 3, 3, 3), dtype=dtype)
    for c in range(3):
        conv_w[1, 1, c, c] = 1.0
    return DecoderParams(
        patch_size=patch_size,
        blocks=[init_block(c_feat, ffn_hidden, rng, dtype) for _ in range(n_blocks)],
        w_unpatch=np.zeros((c_feat, patch_out), dtype=dtype),
        b_unpatch=np.zeros(patch_out, dtype=dtype),
        conv_w=conv_w,
        conv_b=np.zeros(3, dtype=dtype),
    )


def decode_forward(
    xhat: np.ndarray, img: np.ndarray, params: DecoderParams
) -> tuple[np.ndarray, tuple]:
    """(B, H', W', C) features + (B, H, W, 3) input -> restored (B, H, W, 3)."""
    p = params.patch_size
    b, gh, gw, c = xhat.shape
    if img.shape[1] != gh * p or img.shape[2] != gw * p:
        raise ShapeError(
            f"decode: feature grid {gh}x{gw} at patch {p} does not match "
            f"image {img.shape[1]}x{img.shape[2]}"
        )
    tokens = xhat.reshape(b, gh * gw, c)
    block_caches = []
    for block in params.blocks:
        tokens, cache = attn_block_forward(tokens, block)
        block_caches.append(cache)
    patches = tokens @ params.w_unpatch + params.b_unpatch
    residual = merge_patches(patches, gh * p, gw * p, p)
    tail = conv3x3(residual, params.conv_w, params.conv_b)
    pre = img + tail
    out = clamp01(pre)
    return out, (tokens, block_caches, residual, pre, xhat.shape)


def decode_backward(
    dout: np.ndarray, params: DecoderParams, cache: tuple
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Returns (d_xhat, grads keyed by parameter path)."""
    tokens, block_caches, residual, pre, xhat_shape = cache
    p = params.patch_size
    dpre = clamp01_backward(dout, pre)
    dresidual, dconv_w, dconv_b = conv3x3_backward(dpre, residual, params.conv_w)
    dpatches = extract_patches(dresidual, p)
    reduce_axes = (0, 1)
    grads: dict[str, np.ndarray] = {
        "conv_w": dconv_w,
        "conv_b": dconv_b,
        "unpatch_w": np.tensordot(tokens, dpatches, axes=(reduce_axes, reduce_axes)),
        "unpatch_b": dpatches.sum(axis=reduce_axes),
    }
    dtokens = dpatches @ params.w_unpatch.T
    for i in reversed(range(len(params.blocks))):
        dtokens, bgrads = attn_block_backward(dtokens, params.blocks[i], block_caches[i])
        for name, g in bgrads.items():
            grads[f"block{i}.{name}"] = g
    return dtokens.reshape(xhat_shape), grads


def decode(xhat: np.ndarray, img: np.ndarray, params: DecoderParams) -> np.ndarray:
    """Public decode entry point; accepts single samples or batches."""
    squeeze = xhat.ndim == 3
    if squeeze:
        xhat, img = xhat[None], img[None]
    out, _ = decode_forward(xhat, img, params)
    return out[0] if squeeze else out
