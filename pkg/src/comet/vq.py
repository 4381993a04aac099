"""Codebook quantization, VQ losses with stop-gradient routing, and the coreset.

Each scale owns a learnable codebook of M d-dimensional entries. Embeddings
quantize to the nearest entry by squared Euclidean distance, ties broken by
the lowest index. The memory bank (coreset) is the subset of entries each
scale activated on training data, stored together with per-entry local scales
(median squared distance to the nearest same-scale bank neighbors, self
excluded; a scale with a single bank entry gets local scale 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateModelError, ShapeError
from .ndmath import Rng, pairwise_sq_dists


@dataclass
class Codebook:
    scale_index: int
    entries: np.ndarray  # (M, d)

    @property
    def size(self) -> int:
        return self.entries.shape[0]


def init_codebook(scale_index: int, size: int, embed_dim: int, rng: Rng) -> Codebook:
    """Entries i.i.d. normal with variance 1/d, matching embedding scale at init."""
    if size < 1:
        raise ConfigError(f"codebook size must be >= 1, got {size}")
    return Codebook(
        scale_index=scale_index,
        entries=rng.normal(1.0 / np.sqrt(embed_dim), (size, embed_dim)),
    )


@dataclass
class QuantResult:
    index: int
    quantized: np.ndarray
    residual_norm: float


def nearest_entries(embeddings: np.ndarray, entries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized nearest-codebook-entry lookup.

    embeddings: (..., d). Returns (indices (...,), quantized (..., d)).
    Distances are exact squared differences so equal distances tie-break to
    the lowest entry index deterministically.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    flat = emb.reshape(-1, emb.shape[-1])
    if flat.shape[1] != entries.shape[1]:
        raise ShapeError(
            f"embedding dim {flat.shape[1]} does not match codebook dim {entries.shape[1]}"
        )
    d2 = pairwise_sq_dists(flat, entries)
    idx = np.argmin(d2, axis=1)
    quantized = entries[idx]
    return idx.reshape(emb.shape[:-1]), quantized.reshape(emb.shape)


def quantize(embedding: np.ndarray, codebook: Codebook) -> QuantResult:
    """Quantize one embedding to its nearest codebook entry."""
    if codebook.size < 1:
        raise ConfigError("cannot quantize against an empty codebook")
    emb = np.asarray(embedding, dtype=np.float64).reshape(-1)
    idx, quantized = nearest_entries(emb, codebook.entries)
    residual = float(np.linalg.norm(emb - quantized))
    return QuantResult(index=int(idx), quantized=quantized, residual_norm=residual)


@dataclass
class VqLosses:
    """Codebook/commitment loss values plus their routed gradients.

    The two losses share one value, ||z_q - z_e||^2; they differ only in where
    the gradient flows. grad_codebook_row updates the selected entry only;
    grad_embedding flows into the encoder only. Reconstruction gradients are
    routed separately (straight-through) by model.backward.
    """

    codebook_loss: float
    commitment_loss: float
    grad_codebook_row: np.ndarray
    grad_embedding: np.ndarray


def vq_losses(embedding: np.ndarray, quantized: np.ndarray,
              alpha: float, beta: float) -> VqLosses:
    z_e = np.asarray(embedding, dtype=np.float64)
    z_q = np.asarray(quantized, dtype=np.float64)
    if z_e.shape != z_q.shape:
        raise ShapeError(f"embedding/quantized shapes differ: {z_e.shape} vs {z_q.shape}")
    gap = z_q - z_e
    sq = float(np.sum(gap * gap))
    return VqLosses(
        codebook_loss=sq,
        commitment_loss=sq,
        grad_codebook_row=2.0 * alpha * gap,
        grad_embedding=2.0 * beta * (z_e - z_q),
    )


class ActivationSet:
    """Which (scale, entry) pairs training data quantized to, per scale."""

    def __init__(self, n_scales: int):
        self.per_scale: list[set[int]] = [set() for _ in range(n_scales)]

    def record(self, scale_index: int, entry_index: int):
        self.per_scale[scale_index].add(int(entry_index))

    def record_many(self, scale_index: int, entry_indices: np.ndarray):
        self.per_scale[scale_index].update(int(i) for i in np.unique(entry_indices))

    def contains(self, scale_index: int, entry_index: int) -> bool:
        return int(entry_index) in self.per_scale[scale_index]

    def membership(self, scale_index: int, entry_indices: np.ndarray) -> np.ndarray:
        """Vectorized membership test for an array of entry indices."""
        seen = self.per_scale[scale_index]
        return np.fromiter(
            (int(i) in seen for i in np.asarray(entry_indices).reshape(-1)),
            dtype=bool,
            count=np.asarray(entry_indices).size,
        ).reshape(np.asarray(entry_indices).shape)

    def sorted_indices(self, scale_index: int) -> np.ndarray:
        return np.array(sorted(self.per_scale[scale_index]), dtype=np.int64)

    def total(self) -> int:
        return sum(len(s) for s in self.per_scale)

    def __eq__(self, other) -> bool:
        return isinstance(other, ActivationSet) and self.per_scale == other.per_scale


def record_activation(result: QuantResult, activations: ActivationSet,
                      scale_index: int) -> ActivationSet:
    """Idempotent insertion of one quantization index."""
    activations.record(scale_index, result.index)
    return activations


@dataclass
class BankScale:
    """Activated entries of one scale with their local density scales."""

    entry_ids: np.ndarray   # (n_k,) sorted codebook indices
    vectors: np.ndarray     # (n_k, d)
    local_scales: np.ndarray  # (n_k,)


@dataclass
class MemoryBank:
    scales: list[BankScale]
    n_density: int

    def total_entries(self) -> int:
        return sum(bs.entry_ids.size for bs in self.scales)


def local_scales_for(vectors: np.ndarray, n_density: int) -> np.ndarray:
    """Median squared distance to the n_density nearest neighbors, self excluded.

    With fewer than n_density other entries, all others are used; a lone entry
    gets scale 0.
    """
    n = vectors.shape[0]
    if n <= 1:
        return np.zeros(n)
    d2 = pairwise_sq_dists(vectors, vectors)
    np.fill_diagonal(d2, np.inf)
    k = min(n_density, n - 1)
    nearest = np.sort(d2, axis=1)[:, :k]
    return np.median(nearest, axis=1)


def build_memory_bank(codebooks: list[Codebook], activations: ActivationSet,
                      n_density: int) -> MemoryBank:
    """Collect activated entries per scale and compute their local scales."""
    scales = []
    for k, cb in enumerate(codebooks):
        ids = activations.sorted_indices(k)
        if ids.size == 0:
            raise DegenerateModelError(
                f"scale {k} has no activated codebook entries; the model never "
                f"quantized training data at this scale"
            )
        vectors = cb.entries[ids].copy()
        scales.append(
            BankScale(
                entry_ids=ids,
                vectors=vectors,
                local_scales=local_scales_for(vectors, n_density),
            )
        )
    return MemoryBank(scales=scales, n_density=n_density)
