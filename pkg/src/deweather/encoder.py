"""Patch-token encoder with prior fusion.

The degraded image is split into non-overlapping patches, linearly embedded,
run through pre-norm single-head transformer blocks, and optionally fused
with the projected prior: image tokens form the queries, prior rows the keys
and values, with an output projection and a residual back onto the tokens.

Forward functions return a cache consumed by the matching backward; both are
pure. Batched arrays carry a leading axis; public entry points also accept
single samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor_ops import (
    ShapeError,
    layer_norm,
    layer_norm_backward,
    matmul_backward,
    relu,
    relu_backward,
    softmax_rows,
    softmax_rows_backward,
)


@dataclass
class AttnBlockParams:
    """One pre-norm block: self-attention then a two-layer feed-forward."""

    ln1_g: np.ndarray
    ln1_b: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass
class FusionParams:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray


@dataclass
class EncoderParams:
    patch_size: int
    w_patch: np.ndarray
    b_patch: np.ndarray
    blocks: list[AttnBlockParams] = field(default_factory=list)
    fusion: FusionParams | None = None


def init_block(c_feat: int, ffn_hidden: int, rng: np.random.Generator,
               dtype=np.float64) -> AttnBlockParams:
    def w(n_in, n_out, scale=1.0):
        return (scale * rng.standard_normal((n_in, n_out)) / np.sqrt(n_in)).astype(dtype)

    return AttnBlockParams(
        ln1_g=np.ones(c_feat, dtype=dtype),
        ln1_b=np.zeros(c_feat, dtype=dtype),
        wq=w(c_feat, c_feat),
        wk=w(c_feat, c_feat),
        wv=w(c_feat, c_feat),
        wo=w(c_feat, c_feat, scale=0.5),
        ln2_g=np.ones(c_feat, dtype=dtype),
        ln2_b=np.zeros(c_feat, dtype=dtype),
        w1=w(c_feat, ffn_hidden),
        b1=np.zeros(ffn_hidden, dtype=dtype),
        w2=w(ffn_hidden, c_feat, scale=0.5),
        b2=np.zeros(c_feat, dtype=dtype),
    )


def init_encoder(
    patch_size: int,
    c_feat: int,
    d_k: int,
    n_blocks: int,
    ffn_hidden: int,
    rng: np.random.Generator,
    dtype=np.float64,
) -> EncoderParams:
    patch_in = patch_size * patch_size * 3
    fusion = FusionParams(
        wq=(rng.standard_normal((c_feat, d_k)) / np.sqrt(c_feat)).astype(dtype),
        wk=(rng.standard_normal((c_feat, d_k)) / np.sqrt(c_feat)).astype(dtype),
        wv=(rng.standard_normal((c_feat, d_k)) / np.sqrt(c_feat)).astype(dtype),
        # gentle start: fusion barely perturbs the residual stream at init
        wo=(0.1 * rng.standard_normal((d_k, c_feat)) / np.sqrt(d_k)).astype(dtype),
    )
    return EncoderParams(
        patch_size=patch_size,
        w_patch=(rng.standard_normal((patch_in, c_feat)) / np.sqrt(patch_in)).astype(dtype),
        b_patch=np.zeros(c_feat, dtype=dtype),
        blocks=[init_block(c_feat, ffn_hidden, rng, dtype) for _ in range(n_blocks)],
        fusion=fusion,
    )


# ---------------------------------------------------------------------------
# patch <-> token layout


def extract_patches(img: np.ndarray, patch_size: int) -> np.ndarray:
    """(B?, H, W, 3) -> (B?, N, patch_size^2 * 3), row-major patch order."""
    squeeze = img.ndim == 3
    if squeeze:
        img = img[None]
    b, h, w, c = img.shape
    p = patch_size
    if h % p or w % p:
        raise ShapeError(f"image {h}x{w} not divisible by patch size {p}")
    t = img.reshape(b, h // p, p, w // p, p, c).transpose(0, 1, 3, 2, 4, 5)
    t = t.reshape(b, (h // p) * (w // p), p * p * c)
    return t[0] if squeeze else t


def merge_patches(tokens: np.ndarray, height: int, width: int, patch_size: int) -> np.ndarray:
    """Exact inverse of :func:`extract_patches`."""
    squeeze = tokens.ndim == 2
    if squeeze:
        tokens = tokens[None]
    b, n, d = tokens.shape
    p = patch_size
    c = d // (p * p)
    if n != (height // p) * (width // p) or d != p * p * c:
        raise ShapeError(
            f"cannot merge {n} tokens of width {d} into {height}x{width} at patch {p}"
        )
    img = tokens.reshape(b, height // p, width // p, p, p, c).transpose(0, 1, 3, 2, 4, 5)
    img = img.reshape(b, height, width, c)
    return img[0] if squeeze else img


def patchify(img: np.ndarray, params: EncoderParams) -> np.ndarray:
    """Extract patches and linearly embed them to the feature width."""
    return extract_patches(img, params.patch_size) @ params.w_patch + params.b_patch


# ---------------------------------------------------------------------------
# transformer block


def attn_block_forward(x: np.ndarray, p: AttnBlockParams) -> tuple[np.ndarray, tuple]:
    scale = 1.0 / np.sqrt(p.wq.shape[1])
    h1, ln1_cache = layer_norm(x, p.ln1_g, p.ln1_b)
    q, k, v = h1 @ p.wq, h1 @ p.wk, h1 @ p.wv
    attn = softmax_rows((q @ np.swapaxes(k, -1, -2)) * scale)
    y = attn @ v
    x1 = x + y @ p.wo
    h2, ln2_cache = layer_norm(x1, p.ln2_g, p.ln2_b)
    pre = h2 @ p.w1 + p.b1
    act = relu(pre)
    out = x1 + act @ p.w2 + p.b2
    cache = (h1, ln1_cache, q, k, v, attn, y, x1, h2, ln2_cache, pre, act, scale)
    return out, cache


def attn_block_backward(
    dout: np.ndarray, p: AttnBlockParams, cache: tuple
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    h1, ln1_cache, q, k, v, attn, y, x1, h2, ln2_cache, pre, act, scale = cache
    reduce_axes = tuple(range(dout.ndim - 1))

    # feed-forward branch
    dact, dw2 = matmul_backward(dout, act, p.w2)
    db2 = dout.sum(axis=reduce_axes)
    dpre = relu_backward(dact, pre)
    dh2, dw1 = matmul_backward(dpre, h2, p.w1)
    db1 = dpre.sum(axis=reduce_axes)
    dx1, dln2_g, dln2_b = layer_norm_backward(dh2, ln2_cache)
    dx1 = dx1 + dout

    # attention branch
    dy, dwo = matmul_backward(dx1, y, p.wo)
    dattn, dv = matmul_backward(dy, attn, v)
    ds = softmax_rows_backward(dattn, attn) * scale
    dq = ds @ k
    dk = np.swapaxes(ds, -1, -2) @ q
    dh1_q, dwq = matmul_backward(dq, h1, p.wq)
    dh1_k, dwk = matmul_backward(dk, h1, p.wk)
    dh1_v, dwv = matmul_backward(dv, h1, p.wv)
    dh1 = dh1_q + dh1_k + dh1_v
    dx, dln1_g, dln1_b = layer_norm_backward(dh1, ln1_cache)
    dx = dx + dx1

    grads = {
        "ln1_g": dln1_g, "ln1_b": dln1_b,
        "wq": dwq, "wk": dwk, "wv": dwv, "wo": dwo,
        "ln2_g": dln2_g, "ln2_b": dln2_b,
        "w1": dw1, "b1": db1, "w2": dw2, "b2": db2,
    }
    return dx, grads


# ---------------------------------------------------------------------------
# prior fusion


def fuse_forward(
    tokens: np.ndarray, prior: np.ndarray, fp: FusionParams
) -> tuple[np.ndarray, tuple]:
    """Cross-attention of image tokens (queries) over prior rows (keys/values)."""
    if tokens.shape[-1] != prior.shape[-1]:
        raise ShapeError(
            f"fusion: token width {tokens.shape[-1]} != prior width {prior.shape[-1]}"
        )
    scale = 1.0 / np.sqrt(fp.wq.shape[1])
    q = tokens @ fp.wq
    k = prior @ fp.wk
    v = prior @ fp.wv
    attn = softmax_rows((q @ np.swapaxes(k, -1, -2)) * scale)
    y = attn @ v
    out = tokens + y @ fp.wo
    return out, (tokens, prior, q, k, v, attn, y, scale)


def fuse_backward(
    dout: np.ndarray, fp: FusionParams, cache: tuple
) -> tuple[np.ndarray, np.ndarray, dict[str, np.ndarray]]:
    """Returns (d_tokens, d_prior, weight grads)."""
    tokens, prior, q, k, v, attn, y, scale = cache
    dy, dwo = matmul_backward(dout, y, fp.wo)
    dattn, dv = matmul_backward(dy, attn, v)
    ds = softmax_rows_backward(dattn, attn) * scale
    dq = ds @ k
    dk = np.swapaxes(ds, -1, -2) @ q
    dtokens, dwq = matmul_backward(dq, tokens, fp.wq)
    dprior_k, dwk = matmul_backward(dk, prior, fp.wk)
    dprior_v, dwv = matmul_backward(dv, prior, fp.wv)
    dtokens = dtokens + dout
    dprior = dprior_k + dprior_v
    return dtokens, dprior, {"wq": dwq, "wk": dwk, "wv": dwv, "wo": dwo}


def cross_attention_fuse(
    tokens: np.ndarray, prior: np.ndarray, params: EncoderParams | FusionParams
) -> np.ndarray:
    """Public fusion entry point; accepts single samples or batches."""
    fp = params.fusion if isinstance(params, EncoderParams) else params
    out, _ = fuse_forward(tokens, prior, fp)
    return out


# ---------------------------------------------------------------------------
# full encoder


def encode_forward(
    img: np.ndarray,
    prior_proj: np.ndarray | None,
    params: EncoderParams,
    use_prior: bool = True,
) -> tuple[np.ndarray, tuple]:
    """(B, H, W, 3) -> (B, H', W', C) feature grid plus backward cache."""
    patches = extract_patches(img, params.patch_size)
    tokens = patches @ params.w_patch + params.b_patch
    block_caches = []
    for block in params.blocks:
        tokens, cache = attn_block_forward(tokens, block)
        block_caches.append(cache)
    fuse_cache = None
    if use_prior:
        if prior_proj is None:
            raise ShapeError("encode: use_prior=True requires a projected prior")
        tokens, fuse_cache = fuse_forward(tokens, prior_proj, params.fusion)
    b, h, w = img.shape[0], img.shape[1], img.shape[2]
    grid_h, grid_w = h // params.patch_size, w // params.patch_size
    x = tokens.reshape(b, grid_h, grid_w, tokens.shape[-1])
    return x, (patches, block_caches, fuse_cache, use_prior)


def encode_backward(
    dx: np.ndarray, params: EncoderParams, cache: tuple
) -> tuple[np.ndarray | None, dict[str, np.ndarray]]:
    """Returns (d_prior_proj or None, grads keyed by parameter path)."""
    patches, block_caches, fuse_cache, use_prior = cache
    b = dx.shape[0]
    dtokens = dx.reshape(b, -1, dx.shape[-1])
    grads: dict[str, np.ndarray] = {}
    dprior = None
    if use_prior:
        dtokens, dprior, fgrads = fuse_backward(dtokens, params.fusion, fuse_cache)
        for name, g in fgrads.items():
            grads[f"fusion.{name}"] = g
    for i in reversed(range(len(params.blocks))):
        dtokens, bgrads = attn_block_backward(dtokens, params.blocks[i], block_caches[i])
        for name, g in bgrads.items():
            grads[f"block{i}.{name}"] = g
    reduce_axes = tuple(range(dtokens.ndim - 1))
    grads["patch_w"] = np.tensordot(
        patches, dtokens, axes=(list(reduce_axes), list(reduce_axes))
    )
    grads["patch_b"] = dtokens.sum(axis=reduce_axes)
    return dprior, grads


def encode(
    img: np.ndarray,
    prior_proj: np.ndarray | None,
    params: EncoderParams,
    use_prior: bool = True,
) -> np.ndarray:
    """Public encoder entry point; accepts a single image or a batch."""
    squeeze = img.ndim == 3
    if squeeze:
        img = img[None]
        if prior_proj is not None and prior_proj.ndim == 2:
            prior_proj = prior_proj[None]
    x, _ = encode_forward(img, prior_proj, params, use_prior)
    return x[0] if squeeze else x
