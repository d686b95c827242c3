"""Learnable prototype memory with top-k cosine retrieval.

A bank of K slot vectors is queried by the global average of the feature
grid: cosine similarities pick the k best slots, their mean forms a
prototype, and the prototype is broadcast-added back onto every spatial
position. Slots train jointly with the network and are frozen for inference.

Selection is discrete: backward treats the chosen indices as constants, so
only the selected slots receive gradient and the feature grid is reached
through the residual alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import ValidationError
from .tensor_ops import ShapeError

NORM_FLOOR = 1e-12


@dataclass
class MemoryBank:
    """K x C slot matrix with a retrieval budget and a train/eval mode flag."""

    slots: np.ndarray
    topk: int
    frozen: bool = False

    def __post_init__(self) -> None:
        if self.slots.ndim != 2:
            raise ShapeError(f"memory slots must be K x C, got {tuple(self.slots.shape)}")
        if not 1 <= self.topk <= self.slots.shape[0]:
            raise ValidationError(
                f"topk {self.topk} outside [1, {self.slots.shape[0]}]"
            )

    @property
    def capacity(self) -> int:
        return self.slots.shape[0]

    @property
    def width(self) -> int:
        return self.slots.shape[1]


def init_bank(
    capacity: int,
    c_feat: int,
    topk: int,
    rng: np.random.Generator,
    dtype=np.float64,
) -> MemoryBank:
    """Gaussian slots with standard deviation 1/sqrt(C)."""
    slots = (rng.standard_normal((capacity, c_feat)) / np.sqrt(c_feat)).astype(dtype)
    return MemoryBank(slots=slots, topk=topk)


def cosine_similarities(q: np.ndarray, bank: MemoryBank | np.ndarray) -> np.ndarray:
    """Cosine similarity of the query against every slot; zero vectors give 0."""
    slots = bank.slots if isinstance(bank, MemoryBank) else bank
    if q.shape != (slots.shape[1],):
        raise ShapeError(
            f"query shape {tuple(q.shape)} does not match slot width {slots.shape[1]}"
        )
    qn = max(float(np.linalg.norm(q)), NORM_FLOOR)
    sn = np.maximum(np.linalg.norm(slots, axis=1), NORM_FLOOR)
    return (slots @ q) / (sn * qn)


def top_k_select(similarities: np.ndarray, k: int) -> list[int]:
    """Indices of the k largest similarities, descending, lower index on ties."""
    n = similarities.shape[0]
    if not 1 <= k <= n:
        raise ValidationError(f"k {k} outside [1, {n}]")
    order = np.lexsort((np.arange(n), -similarities))
    return [int(i) for i in order[:k]]


def retrieve_prototype(bank: MemoryBank | np.ndarray, indices: Sequence[int]) -> np.ndarray:
    """Arithmetic mean of the selected slot vectors."""
    slots = bank.slots if isinstance(bank, MemoryBank) else bank
    idx = list(indices)
    if len(set(idx)) != len(idx):
        raise ValidationError(f"duplicate slot indices in {idx}")
    if any(i < 0 or i >= slots.shape[0] for i in idx):
        raise ValidationError(f"slot index out of range in {idx}")
    return slots[idx].mean(axis=0)


def enhance(x: np.ndarray, m_proto: np.ndarray) -> np.ndarray:
    """Add the prototype to every spatial position."""
    if x.shape[-1] != m_proto.shape[-1]:
        raise ShapeError(
            f"channel mismatch: features {x.shape[-1]} vs prototype {m_proto.shape[-1]}"
        )
    return x + m_proto


def imb_forward(x: np.ndarray, bank: MemoryBank, use_imb: bool = True) -> np.ndarray:
    """Retrieve and apply the prototype for one (H', W', C) feature grid."""
    if not use_imb:
        return x.copy()
    q = x.mean(axis=(0, 1))
    sims = cosine_similarities(q, bank)
    idx = top_k_select(sims, bank.topk)
    return enhance(x, retrieve_prototype(bank, idx))


# ---------------------------------------------------------------------------
# batched training path


def imb_forward_batch(
    x: np.ndarray, bank: MemoryBank, use_imb: bool = True
) -> tuple[np.ndarray, tuple]:
    """(B, H', W', C) variant returning the cache for the backward pass."""
    if not use_imb:
        return x, (None, None)
    selected = []
    out = x.copy()
    for b in range(x.shape[0]):
        q = x[b].mean(axis=(0, 1))
        idx = top_k_select(cosine_similarities(q, bank), bank.topk)
        selected.append(idx)
        out[b] = x[b] + bank.slots[idx].mean(axis=0)
    return out, (selected, x.shape)


def imb_backward(
    dout: np.ndarray, bank: MemoryBank, cache: tuple
) -> tuple[np.ndarray, np.ndarray]:
    """Returns (dx, dslots); unselected slots get an exactly zero gradient."""
    selected, _ = cache
    dslots = np.zeros_like(bank.slots)
    if selected is None:
        return dout, dslots
    for b, idx in enumerate(selected):
        dslots[idx] += dout[b].sum(axis=(0, 1)) / len(idx)
    return dout, dslots


def selection_gap(x: np.ndarray, bank: MemoryBank) -> float:
    """Similarity margin between the k-th selected and the best unselected slot.

    Gradient checks require this to be comfortably positive so that finite
    perturbations cannot flip the selection.
    """
    gaps = []
    batch = x if x.ndim == 4 else x[None]
    for b in range(batch.shape[0]):
        q = batch[b].mean(axis=(0, 1))
        sims = np.sort(cosine_similarities(q, bank))[::-1]
        if bank.topk < sims.shape[0]:
            gaps.append(float(sims[bank.topk - 1] - sims[bank.topk]))
    return min(gaps) if gaps else np.inf
