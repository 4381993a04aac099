"""Per-scale patch encoder/decoder: forward pass and hand-derived backward pass.

The encoder at one scale is purely affine and has three stages:

1. a per-variable series encoder mapping each patch of length p to d/2 features,
2. a core encoder shared across variables, mapping the concatenation of all
   variables' patches at one patch index to d_c features,
3. a fusion layer mapping the concatenated (d/2 + d_c) features to the final
   d-dimensional embedding.

The decoder is one affine layer per scale, shared by all variables, mapping a
d-vector back to a patch of length p. There are deliberately no activation
functions anywhere.

backward() computes analytic gradients of these composed affine maps given
upstream gradients with respect to the embeddings and the reconstructions.
Reconstruction gradients reach the encoder by the straight-through copy: the
gradient at the decoder input is applied to the embedding unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .config import RunConfig
from .errors import ShapeError
from .ndmath import Rng
from .patching import PatchSet, ScaleSpec
from .vq import Codebook, init_codebook


@dataclass
class ScaleParams:
    """Learnable arrays of one scale.

    w_series: (n_vars, d/2, p)   per-variable series-encoder weights
    b_series: (n_vars, d/2)
    w_core:   (d_c, n_vars * p)  shared cross-variable encoder
    b_core:   (d_c,)
    w_fuse:   (d, d/2 + d_c)
    b_fuse:   (d,)
    w_dec:    (p, d)             shared decoder
    b_dec:    (p,)
    """

    w_series: np.ndarray
    b_series: np.ndarray
    w_core: np.ndarray
    b_core: np.ndarray
    w_fuse: np.ndarray
    b_fuse: np.ndarray
    w_dec: np.ndarray
    b_dec: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def copy(self) -> "ScaleParams":
        return ScaleParams(**{k: v.copy() for k, v in self.arrays().items()})


def init_scale_params(scale: ScaleSpec, n_vars: int, embed_dim: int,
                      core_dim: int, rng: Rng) -> ScaleParams:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases."""
    p = scale.patch_size
    dh = embed_dim // 2

    def u(fan_in, shape):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, shape)

    return ScaleParams(
        w_series=u(p, (n_vars, dh, p)),
        b_series=np.zeros((n_vars, dh)),
        w_core=u(n_vars * p, (core_dim, n_vars * p)),
        b_core=np.zeros(core_dim),
        w_fuse=u(dh + core_dim, (embed_dim, dh + core_dim)),
        b_fuse=np.zeros(embed_dim),
        w_dec=u(embed_dim, (p, embed_dim)),
        b_dec=np.zeros(p),
    )


@dataclass
class ForwardCache:
    """Exactly the tensors backward() needs: inputs and pre-fusion features."""

    patches: np.ndarray       # (n_vars, n_patches, p)
    concat: np.ndarray        # (n_patches, n_vars * p) variable-major concatenation
    fused_input: np.ndarray   # (n_vars, n_patches, d/2 + d_c)


def encode(patches: PatchSet, params: ScaleParams) -> tuple[np.ndarray, ForwardCache]:
    """Embed every patch of a window: returns (n_vars, n_patches, d) plus cache."""
    pv = patches.values
    n_vars, n_patches, p = pv.shape
    if params.w_series.shape[0] != n_vars or params.w_series.shape[2] != p:
        raise ShapeError(
            f"params built for {params.w_series.shape[0]} vars / patch {params.w_series.shape[2]}, "
            f"got {n_vars} vars / patch {p}"
        )
    dh = params.w_series.shape[1]
    # per-variable features: (n_vars, n_patches, d/2)
    h_series = np.einsum("idp,inp->ind", params.w_series, pv) + params.b_series[:, None, :]
    # variable-major concatenation per patch index: (n_patches, n_vars * p)
    concat = pv.transpose(1, 0, 2).reshape(n_patches, n_vars * p)
    h_core = concat @ params.w_core.T + params.b_core  # (n_patches, d_c)
    fused_input = np.concatenate(
        [h_series, np.broadcast_to(h_core, (n_vars,) + h_core.shape)], axis=2
    )
    embeddings = fused_input @ params.w_fuse.T + params.b_fuse
    cache = ForwardCache(patches=pv, concat=concat, fused_input=fused_input)
    return embeddings, cache


def decode(quantized: np.ndarray, params: ScaleParams) -> np.ndarray:
    """Affine reconstruction of patches from embeddings, (..., d) -> (..., p)."""
    q = np.asarray(quantized, dtype=np.float64)
    if q.shape[-1] != params.w_dec.shape[1]:
        raise ShapeError(
            f"embedding dim {q.shape[-1]} does not match decoder input {params.w_dec.shape[1]}"
        )
    return q @ params.w_dec.T + params.b_dec


@dataclass
class ScaleGrads:
    """Gradient arrays mirroring ScaleParams field by field."""

    w_series: np.ndarray
    b_series: np.ndarray
    w_core: np.ndarray
    b_core: np.ndarray
    w_fuse: np.ndarray
    b_fuse: np.ndarray
    w_dec: np.ndarray
    b_dec: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def zeros_like(cls, params: ScaleParams) -> "ScaleGrads":
        return cls(**{k: np.zeros_like(v) for k, v in params.arrays().items()})

    def add_(self, other: "ScaleGrads"):
        for k, v in self.arrays().items():
            v += getattr(other, k)


def backward(cache: ForwardCache, params: ScaleParams,
             d_embeddings: np.ndarray, d_recon: np.ndarray,
             decoder_input: np.ndarray) -> ScaleGrads:
    """Gradients of all scale parameters from upstream gradients.

    d_embeddings: (n_vars, n_patches, d) gradient w.r.t. the encoder output
        from terms acting on the embedding directly (commitment, contrastive).
    d_recon: (n_vars, n_patches, p) gradient w.r.t. the reconstructed patches.
    decoder_input: (n_vars, n_patches, d) the quantized embeddings fed to the
        decoder when the reconstructions were produced.

    The reconstruction gradient is backed through the decoder and then copied
    straight through quantization onto the embedding gradient. The shared core
    encoder accumulates contributions from every variable.
    """
    n_vars, n_patches, _ = cache.patches.shape
    if d_embeddings.shape[:2] != (n_vars, n_patches) or d_recon.shape[:2] != (n_vars, n_patches):
        raise ShapeError("upstream gradients do not match the cached forward pass")
    dh = params.w_series.shape[1]

    g_w_dec = np.einsum("inp,ind->pd", d_recon, decoder_input)
    g_b_dec = d_recon.sum(axis=(0, 1))
    d_emb = d_embeddings + d_recon @ params.w_dec  # straight-through copy

    g_w_fuse = np.einsum("ind,inu->du", d_emb, cache.fused_input)
    g_b_fuse = d_emb.sum(axis=(0, 1))
    d_fused_in = d_emb @ params.w_fuse  # (n_vars, n_patches, d/2 + d_c)

    d_h_series = d_fused_in[:, :, :dh]
    d_h_core = d_fused_in[:, :, dh:].sum(axis=0)  # shared across variables

    g_w_series = np.einsum("ind,inp->idp", d_h_series, cache.patches)
    g_b_series = d_h_series.sum(axis=1)
    g_w_core = d_h_core.T @ cache.concat
    g_b_core = d_h_core.sum(axis=0)

    return ScaleGrads(
        w_series=g_w_series,
        b_series=g_b_series,
        w_core=g_w_core,
        b_core=g_b_core,
        w_fuse=g_w_fuse,
        b_fuse=g_b_fuse,
        w_dec=g_w_dec,
        b_dec=g_b_dec,
    )


@dataclass
class ModelState:
    """All learnable state: per-scale parameters plus per-scale codebooks."""

    n_vars: int
    params: list[ScaleParams]
    codebooks: list[Codebook]

    def copy(self) -> "ModelState":
        return ModelState(
            n_vars=self.n_vars,
            params=[p.copy() for p in self.params],
            codebooks=[Codebook(c.scale_index, c.entries.copy()) for c in self.codebooks],
        )

    def named_arrays(self) -> dict[str, np.ndarray]:
        """Flat {name: array} view used by the optimizer and the checkpoint."""
        out: dict[str, np.ndarray] = {}
        for k, p in enumerate(self.params):
            for name, arr in p.arrays().items():
                out[f"scale{k}.{name}"] = arr
        for k, cb in enumerate(self.codebooks):
            out[f"scale{k}.codebook"] = cb.entries
        return out

    def load_named_arrays(self, arrays: dict[str, np.ndarray]):
        for k, p in enumerate(self.params):
            for name in p.arrays():
                setattr(p, name, arrays[f"scale{k}.{name}"])
        for k, cb in enumerate(self.codebooks):
            cb.entries = arrays[f"scale{k}.codebook"]


def init_model_state(config: RunConfig, n_vars: int, rng: Rng) -> ModelState:
    """Seeded initialization; scale by scale, parameters then codebook."""
    params, codebooks = [], []
    for k, scale in enumerate(config.scales):
        params.append(
            init_scale_params(scale, n_vars, config.embed_dim, config.core_dim, rng)
        )
        codebooks.append(init_codebook(k, config.codebook_size, config.embed_dim, rng))
    return ModelState(n_vars=n_vars, params=params, codebooks=codebooks)
