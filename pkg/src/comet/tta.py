"""Online codebook adaptation on streaming test data.

Each test batch is scored with the current model state first and only then
used for adaptation (inference-then-train), so a batch's scores never depend
on its own adaptation. Patch embeddings whose quantization index was
activated during training are pseudo-labeled normal; the total training loss
is applied to normal patches only, while a supervised contrastive loss over
cosine similarities separates normal from abnormal embeddings across the
whole batch. After each update the memory bank is refreshed index-wise from
the updated codebooks. The activation set is frozen: test data never extends
it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .errors import DataError, ShapeError
from .model import ModelState, ScaleGrads, backward, decode, encode
from .ndmath import AdamW
from .patching import extract_patches
from .scoring import ScoreSeries, Scorer, WindowScores, merge_window_scores
from .vq import (ActivationSet, BankScale, MemoryBank, local_scales_for,
                 nearest_entries)


def pseudo_label(scale_index: int, quant_indices: np.ndarray,
                 activations: ActivationSet) -> np.ndarray:
    """0 where the quantization index was activated in training, else 1."""
    seen = activations.membership(scale_index, quant_indices)
    return (~seen).astype(np.int64)


def contrastive_loss(embeddings: np.ndarray, labels: np.ndarray,
                     temperature: float) -> tuple[float, np.ndarray]:
    """Supervised contrastive loss over cosine similarities, with gradients.

    Positives of an anchor are the other batch members sharing its label;
    anchors without positives contribute zero. A batch of fewer than two
    embeddings has loss 0 by convention. Returns (loss, dloss/dembeddings).
    """
    z = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels).reshape(-1)
    if z.ndim != 2:
        raise ShapeError("embeddings must be 2-D (batch, dim)")
    if z.shape[0] != y.size:
        raise ShapeError(f"{z.shape[0]} embeddings but {y.size} labels")
    n = z.shape[0]
    if n < 2:
        return 0.0, np.zeros_like(z)

    norms = np.maximum(np.linalg.norm(z, axis=1, keepdims=True), 1e-12)
    unit = z / norms
    sims = unit @ unit.T
    logits = sims / temperature
    np.fill_diagonal(logits, -np.inf)

    same = y[:, None] == y[None, :]
    np.fill_diagonal(same, False)
    n_pos = same.sum(axis=1)

    row_max = logits.max(axis=1, keepdims=True)
    exp = np.exp(logits - row_max)
    denom = exp.sum(axis=1, keepdims=True)
    log_prob = (logits - row_max) - np.log(denom)

    active = n_pos > 0
    loss = 0.0
    if np.any(active):
        per_anchor = -(np.where(same, log_prob, 0.0).sum(axis=1)[active]
                       / n_pos[active])
        loss = float(per_anchor.sum())

    # d loss / d logits, rows with no positives contribute nothing
    softmax = exp / denom
    g_logits = np.zeros_like(sims)
    g_logits[active] = softmax[active] - same[active] / n_pos[active, None]
    g_sims = g_logits / temperature

    g_unit = (g_sims + g_sims.T) @ unit
    # through the normalization: project out the radial component
    radial = (g_unit * unit).sum(axis=1, keepdims=True)
    g_z = (g_unit - radial * unit) / norms
    return loss, g_z


@dataclass
class TtaReport:
    normal_loss: float
    contrastive: float
    n_normal: int
    n_patches: int
    stepped: bool

    @property
    def total(self) -> float:
        return self.normal_loss + self.contrastive


def adaptation_loss_and_grads(state: ModelState, windows: list[np.ndarray],
                              activations: ActivationSet, config: RunConfig
                              ) -> tuple[TtaReport, dict[str, np.ndarray] | None]:
    """Adaptation objective over one test batch, flat over patch embeddings.

    Returns (report, grads); grads is None when the objective is vacuous — no
    pseudo-normal patches and no usable contrastive term — in which case no
    optimizer step should be taken.
    """
    cfg = config
    gamma = cfg.tta.contrastive_weight
    n_scales = len(cfg.scales)

    # forward all windows/scales once, collecting flat embedding batch
    per_scale: list[list] = [[] for _ in range(n_scales)]
    flat_emb, flat_lab = [], []
    for window in windows:
        for k, scale in enumerate(cfg.scales):
            patches = extract_patches(window, scale)
            embeddings, cache = encode(patches, state.params[k])
            idx, quantized = nearest_entries(embeddings, state.codebooks[k].entries)
            labels = pseudo_label(k, idx, activations)
            per_scale[k].append((patches, embeddings, cache, idx, quantized, labels))
            flat_emb.append(embeddings.reshape(-1, embeddings.shape[-1]))
            flat_lab.append(labels.reshape(-1))
    flat_emb = np.concatenate(flat_emb, axis=0)
    flat_lab = np.concatenate(flat_lab, axis=0)
    n_total = flat_emb.shape[0]
    n_normal = int((flat_lab == 0).sum())

    con_loss, con_grad = 0.0, None
    if gamma > 0.0 and n_total >= 2:
        loss, grad = contrastive_loss(flat_emb, flat_lab, cfg.tta.temperature)
        if np.any(grad) or loss != 0.0:
            con_loss, con_grad = loss, grad

    if n_normal == 0 and con_grad is None:
        return TtaReport(0.0, 0.0, 0, n_total, stepped=False), None

    grads = {name: np.zeros_like(arr) for name, arr in state.named_arrays().items()}
    scale_grads = [ScaleGrads.zeros_like(p) for p in state.params]
    normal_loss = 0.0
    cursor = 0
    for window_i in range(len(windows)):
        for k in range(n_scales):
            patches, embeddings, cache, idx, quantized, labels = per_scale[k][window_i]
            n_vars, n_patches, _ = patches.values.shape
            count = n_vars * n_patches

            d_emb = np.zeros_like(embeddings)
            if con_grad is not None:
                d_emb += gamma * con_grad[cursor : cursor + count].reshape(embeddings.shape)
            cursor += count

            d_recon = np.zeros_like(patches.values)
            if n_normal > 0:
                mask = (labels == 0).astype(np.float64)[:, :, None]
                weight = 1.0 / n_normal
                recon = decode(quantized, state.params[k])
                residual = recon - patches.values
                gap = quantized - embeddings
                normal_loss += weight * float(
                    np.sum(mask * (residual * residual)))
                normal_loss += weight * (cfg.alpha + cfg.beta) * float(
                    np.sum(mask * (gap * gap)))
                d_recon = (2.0 * weight) * residual * mask
                d_emb += (2.0 * cfg.beta * weight) * (embeddings - quantized) * mask
                cb_updates = (2.0 * cfg.alpha * weight) * gap * mask
                np.add.at(
                    grads[f"scale{k}.codebook"],
                    idx.reshape(-1),
                    cb_updates.reshape(-1, cb_updates.shape[-1]),
                )
            scale_grads[k].add_(
                backward(cache, state.params[k], d_emb, d_recon, quantized)
            )

    for k, sg in enumerate(scale_grads):
        for name, arr in sg.arrays().items():
            grads[f"scale{k}.{name}"] = arr
    report = TtaReport(
        normal_loss=normal_loss,
        contrastive=gamma * con_loss,
        n_normal=n_normal,
        n_patches=n_total,
        stepped=True,
    )
    return report, grads


def tta_step(state: ModelState, optimizer: AdamW, windows: list[np.ndarray],
             activations: ActivationSet, config: RunConfig) -> TtaReport:
    """Run the configured number of adaptation steps on one scored batch."""
    if not config.tta.enabled:
        return TtaReport(0.0, 0.0, 0, 0, stepped=False)
    last = TtaReport(0.0, 0.0, 0, 0, stepped=False)
    for _ in range(config.tta.steps_per_batch):
        report, grads = adaptation_loss_and_grads(state, windows, activations, config)
        last = report
        if grads is None:
            break
        state.load_named_arrays(optimizer.step(state.named_arrays(), grads))
    return last


def refresh_coreset(bank: MemoryBank, state: ModelState) -> MemoryBank:
    """Index-wise bank refresh: same entry ids, vectors re-read from codebooks.

    Cardinality is preserved exactly; local scales are recomputed from the
    updated vectors.
    """
    scales = []
    for k, bs in enumerate(bank.scales):
        vectors = state.codebooks[k].entries[bs.entry_ids].copy()
        scales.append(
            BankScale(
                entry_ids=bs.entry_ids.copy(),
                vectors=vectors,
                local_scales=local_scales_for(vectors, bank.n_density),
            )
        )
    return MemoryBank(scales=scales, n_density=bank.n_density)


def stream_windows(windows: list[np.ndarray], offsets: list[int],
                   state: ModelState, bank: MemoryBank,
                   activations: ActivationSet, config: RunConfig
                   ) -> list[WindowScores]:
    """Score a window stream in order, adapting between batches.

    Each batch is scored with the state produced by the previous batches'
    adaptation, then (when adaptation is enabled) used to update the model and
    refresh the coreset. Mutates the given state; pass a copy to keep the
    original. Returns per-window finalized scores.
    """
    if len(windows) != len(offsets):
        raise ShapeError("windows and offsets differ in length")
    if any(b <= a for a, b in zip(offsets, offsets[1:])):
        raise DataError("stream windows must arrive in increasing time order")
    scorer = Scorer(state, bank, config)
    lr = config.tta.learning_rate
    if lr is None:
        lr = config.train.learning_rate
    optimizer = AdamW(lr=lr, weight_decay=config.train.weight_decay)

    out: list[WindowScores] = []
    group = config.tta.windows_per_batch
    for start in range(0, len(windows), group):
        batch = windows[start : start + group]
        batch_offsets = offsets[start : start + group]
        raws = [scorer.raw_window_scores(w) for w in batch]
        out.extend(
            scorer.finalize_window(off, mem, quant)
            for off, (mem, quant) in zip(batch_offsets, raws)
        )
        if config.tta.enabled:
            tta_step(state, optimizer, batch, activations, config)
            bank = refresh_coreset(bank, state)
            scorer.set_model(state, bank)
    return out


def stream_series(series: np.ndarray, state: ModelState, bank: MemoryBank,
                  activations: ActivationSet, config: RunConfig,
                  labels: np.ndarray | None = None) -> ScoreSeries:
    """Adaptive scoring of a full series, windows in temporal order."""
    from .data import window_offsets

    s = np.asarray(series, dtype=np.float64)
    offs = window_offsets(s.shape[0], config.window_length, config.window_stride)
    wins = [s[o : o + config.window_length] for o in offs]
    per_window = stream_windows(wins, list(offs), state, bank, activations, config)
    return merge_window_scores(per_window, s.shape[0], labels)
