"""Degradation priors: synthetic embeddings and their projection to feature space.

A real captioning model is out of scope; ``synth_prior`` stands in with a
fixed-layout embedding. Row 0 is structured: coordinates 0-3 hold a one-hot
weather-type block (rain, snow, haze, mixed) and coordinate 4 the severity.
Everything else is seeded scene noise in [-1, 1], keyed only by the seeds so
two weather conditions over the same scene share their noise. Embeddings can
also be loaded from rank-2 MVLT files written by any other producer.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .degrade import WEATHER_TYPES, DegradationSpec
from .mvlt import MvltFormatError, read_mvlt, write_mvlt
from .tensor_ops import ShapeError, matmul_backward, relu, relu_backward

DEFAULT_TOKENS = 8
DEFAULT_DIM = 32

_STREAM_PRIOR = 5


@dataclass
class PriorEmbedding:
    """An L x C_l prior matrix plus the condition that produced it, if known."""

    matrix: np.ndarray
    meta: DegradationSpec | None = None

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]


@dataclass
class MlpParams:
    """Two-layer projection MLP applied independently to each prior row."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


def init_mlp(c_in: int, hidden: int, c_out: int, rng: np.random.Generator,
             dtype=np.float64) -> MlpParams:
    return MlpParams(
        w1=(rng.standard_normal((c_in, hidden)) / np.sqrt(c_in)).astype(dtype),
        b1=np.zeros(hidden, dtype=dtype),
        w2=(rng.standard_normal((hidden, c_out)) / np.sqrt(hidden)).astype(dtype),
        b2=np.zeros(c_out, dtype=dtype),
    )


def synth_prior(
    spec: DegradationSpec,
    seed: int,
    tokens: int = DEFAULT_TOKENS,
    dim: int = DEFAULT_DIM,
) -> PriorEmbedding:
    """Deterministic embedding for a degradation condition."""
    spec.validate()
    if dim < 5:
        raise ShapeError(f"prior dim {dim} too small for the structured row 0")
    rng = np.random.default_rng([_STREAM_PRIOR, seed, spec.seed])
    matrix = rng.uniform(-1.0, 1.0, (tokens, dim))
    matrix[0, 0:4] = 0.0
    matrix[0, WEATHER_TYPES.index(spec.weather)] = 1.0
    matrix[0, 4] = spec.severity
    return PriorEmbedding(matrix, spec)


def save_prior(path: str | os.PathLike, prior: PriorEmbedding) -> None:
    write_mvlt(path, prior.matrix)


def load_prior(path: str | os.PathLike) -> PriorEmbedding:
    """Read a precomputed embedding from a rank-2 MVLT file."""
    matrix = read_mvlt(path)
    if matrix.ndim != 2:
        raise MvltFormatError(f"prior file has rank {matrix.ndim}, expected 2")
    return PriorEmbedding(matrix, None)


def project_prior(prior: PriorEmbedding | np.ndarray, mlp: MlpParams) -> np.ndarray:
    """Project an L x C_l embedding to L x C_feat with the two-layer MLP."""
    out, _ = project_prior_forward(prior, mlp)
    return out


def project_prior_forward(
    prior: PriorEmbedding | np.ndarray, mlp: MlpParams
) -> tuple[np.ndarray, tuple]:
    """Forward pass retaining the cache needed for the backward pass.

    Accepts an (L, C_l) matrix or a batched (B, L, C_l) stack.
    """
    x = prior.matrix if isinstance(prior, PriorEmbedding) else prior
    if x.shape[-1] != mlp.w1.shape[0]:
        raise ShapeError(
            f"project_prior: input width {x.shape[-1]} != MLP input {mlp.w1.shape[0]}"
        )
    pre = x @ mlp.w1 + mlp.b1
    hid = relu(pre)
    out = hid @ mlp.w2 + mlp.b2
    return out, (x, pre, hid)


def project_prior_backward(
    dout: np.ndarray, mlp: MlpParams, cache: tuple
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Returns (d_input, grads for w1/b1/w2/b2)."""
    x, pre, hid = cache
    reduce_axes = tuple(range(dout.ndim - 1))
    dhid, dw2 = matmul_backward(dout, hid, mlp.w2)
    db2 = dout.sum(axis=reduce_axes)
    dpre = relu_backward(dhid, pre)
    dx, dw1 = matmul_backward(dpre, x, mlp.w1)
    db1 = dpre.sum(axis=reduce_axes)
    return dx, {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2}
