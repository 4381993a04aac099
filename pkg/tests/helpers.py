"""Shared oracles for gradient checking the training objective.

The training objective contains stop-gradient operators: the codebook term
treats the embedding as a constant, the commitment term treats the quantized
embedding as a constant, and reconstruction gradients reach the encoder by the
straight-through copy (the decoder input moves one-to-one with the embedding
while the quantization gap stays frozen). Differentiating that objective
therefore means differentiating the loss with those quantities held at their
base-point values, which is exactly what the closure built here evaluates.
The quantization indices are captured at the base point as well, matching the
piecewise-constant assignment for small perturbations.
"""

import numpy as np

from comet.config import RunConfig
from comet.model import ModelState, decode, encode
from comet.patching import extract_patches
from comet.train import batch_loss_and_grads
from comet.vq import nearest_entries


def st_loss_closure(state: ModelState, windows, config: RunConfig):
    """(loss_fn, params, analytic_grads) for ndmath.finite_diff_check.

    loss_fn evaluates the total training loss in straight-through form with
    stop-gradient quantities frozen at the given state; params and
    analytic_grads are parallel lists over every learnable array.
    """
    n_scales = len(config.scales)
    frozen = []  # (window_i, scale_k) -> (patches, base_emb, idx, base_quant)
    for window in windows:
        for k, scale in enumerate(config.scales):
            patches = extract_patches(window, scale)
            emb, _ = encode(patches, state.params[k])
            idx, quant = nearest_entries(emb, state.codebooks[k].entries)
            frozen.append((patches, emb, idx, quant))

    names = sorted(state.named_arrays())
    base = state.named_arrays()

    def loss_fn(param_list):
        arrays = dict(zip(names, [np.asarray(p) for p in param_list]))
        trial = state.copy()
        trial.load_named_arrays({n: arrays[n].copy() for n in names})
        total = 0.0
        pos = 0
        for window in windows:
            for k in range(n_scales):
                patches, base_emb, idx, base_quant = frozen[pos]
                pos += 1
                emb, _ = encode(patches, trial.params[k])
                n_vars, n_patches, _ = patches.values.shape
                w = 1.0 / (len(windows) * n_scales * n_vars * n_patches)
                # straight-through decoder input: embedding + frozen gap
                dec_in = emb + (base_quant - base_emb)
                recon = decode(dec_in, trial.params[k])
                rec = np.sum((recon - patches.values) ** 2)
                rows = trial.codebooks[k].entries[idx]
                cb = np.sum((rows - base_emb) ** 2)
                cm = np.sum((base_quant - emb) ** 2)
                total += w * (rec + config.alpha * cb + config.beta * cm)
        return float(total)

    _, grads = batch_loss_and_grads(state, windows, config)
    return loss_fn, [base[n] for n in names], [grads[n] for n in names]
