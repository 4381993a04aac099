"""Per-timestep anomaly scores from a frozen model and memory bank.

Two complementary streams are computed per window:

* memory score — mean local-scaling distance from each quantized embedding to
  its nearest same-scale bank entries, averaged over scales. The local-scaling
  distance divides the squared Euclidean distance by the mean of the two
  endpoints' local density scales, so dense regions stay sensitive to small
  deviations while sparse regions tolerate larger ones.
* quantization score — plain (unsquared) Euclidean norm of the encoder-output
  to nearest-entry residual, averaged over scales.

Patch-level scores spread uniformly over each patch's timestep span (means
over overlapping patches); per-variable score matrices then pass through
deviation-based variable selection, EMA min-max normalization (a strictly
ordered fold over windows), and the final weighted mix. Scores of overlapping
inference windows merge by arithmetic mean.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import RunConfig, SelectionConfig
from .errors import DataError, ShapeError
from .model import ModelState, encode
from .patching import CoverageMap, coverage, extract_patches
from .ndmath import pairwise_sq_dists
from .vq import BankScale, MemoryBank, nearest_entries


def local_scaling_distance(query: np.ndarray, entry: np.ndarray,
                           query_scale: float, entry_scale: float,
                           eps: float = 1e-8) -> float:
    """Squared distance normalized by the averaged local scales of both ends."""
    diff = np.asarray(query, dtype=np.float64) - np.asarray(entry, dtype=np.float64)
    return float(diff @ diff) / ((query_scale + entry_scale) / 2.0 + eps)


def query_local_scale(sq_dists_to_bank: np.ndarray, n_density: int) -> float:
    """Median squared distance to the nearest bank entries (all, if fewer)."""
    d = np.sort(np.asarray(sq_dists_to_bank, dtype=np.float64))
    k = min(n_density, d.size)
    return float(np.median(d[:k]))


def memory_scores_for_queries(queries: np.ndarray, bank_scale: BankScale,
                              n_neighbors: int, n_density: int, eps: float,
                              use_local_scaling: bool = True) -> np.ndarray:
    """Memory score of each query against one scale's bank entries.

    queries: (Q, d). Returns (Q,). For every query the n_neighbors nearest
    bank entries contribute either their local-scaling distance or, with
    use_local_scaling off, their raw squared distance.
    """
    q = np.asarray(queries, dtype=np.float64)
    if q.ndim != 2:
        raise ShapeError("queries must be 2-D (n_queries, dim)")
    n_bank = bank_scale.vectors.shape[0]
    d2 = pairwise_sq_dists(q, bank_scale.vectors)
    order = np.argsort(d2, axis=1, kind="stable")
    sorted_d2 = np.take_along_axis(d2, order, axis=1)
    n_use = min(n_neighbors, n_bank)
    if not use_local_scaling:
        return sorted_d2[:, :n_use].mean(axis=1)
    k_dens = min(n_density, n_bank)
    sigma_q = np.median(sorted_d2[:, :k_dens], axis=1)
    neighbor_scales = bank_scale.local_scales[order[:, :n_use]]
    d_local = sorted_d2[:, :n_use] / ((sigma_q[:, None] + neighbor_scales) / 2.0 + eps)
    return d_local.mean(axis=1)


def select_variables(scores: np.ndarray, cfg: SelectionConfig,
                     eps: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    """Deviation-based variable selection over a (n_vars, T) score matrix.

    Standardizes each variable's scores over time and, per position, keeps the
    variables with the smallest absolute deviations: either those at or below
    the configured percentile of the position's deviations, or a fixed budget
    of the most stable ones. Variable 0 is always kept. Returns the selected
    mean per position and the boolean selection mask.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2:
        raise ShapeError("scores must be 2-D (n_vars, n_positions)")
    n_vars, n_pos = s.shape
    mask = np.zeros_like(s, dtype=bool)
    if n_vars == 1:
        mask[:] = True
        return s[0].copy(), mask
    mu = s.mean(axis=1, keepdims=True)
    sd = s.std(axis=1, keepdims=True)
    dev = np.abs((s - mu) / (sd + eps))
    if cfg.mode == "percentile":
        tau = np.percentile(dev, cfg.percentile, axis=0)
        mask = dev <= tau[None, :]
    else:
        keep = min(cfg.budget, n_vars)
        if keep > 1:
            order = np.argsort(dev[1:], axis=0, kind="stable")[: keep - 1] + 1
            np.put_along_axis(mask, order, True, axis=0)
    mask[0, :] = True
    agg = np.where(mask, s, 0.0).sum(axis=0) / mask.sum(axis=0)
    return agg, mask


@dataclass
class EmaState:
    """Running min/max for one score stream, seeded by the first window."""

    momentum: float
    mu_min: float = 0.0
    mu_max: float = 0.0
    initialized: bool = False

    def copy(self) -> "EmaState":
        return EmaState(self.momentum, self.mu_min, self.mu_max, self.initialized)


def ema_normalize(scores: np.ndarray, state: EmaState, eps: float = 1e-8) -> np.ndarray:
    """Normalize one window's scores by EMA-tracked min/max; updates state."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise DataError("cannot normalize an empty window")
    lo, hi = float(s.min()), float(s.max())
    if not state.initialized:
        state.mu_min, state.mu_max = lo, hi
        state.initialized = True
    else:
        state.mu_min = state.momentum * state.mu_min + (1.0 - state.momentum) * lo
        state.mu_max = state.momentum * state.mu_max + (1.0 - state.momentum) * hi
    return (s - state.mu_min) / (state.mu_max - state.mu_min + eps)


def aggregate(mem_scores: np.ndarray, quant_scores: np.ndarray, mix: float) -> np.ndarray:
    """Weighted mix of the normalized streams: (1-mix)*memory + mix*quantization."""
    m = np.asarray(mem_scores, dtype=np.float64)
    q = np.asarray(quant_scores, dtype=np.float64)
    if m.shape != q.shape:
        raise ShapeError(f"score streams differ in shape: {m.shape} vs {q.shape}")
    return (1.0 - mix) * m + mix * q


@dataclass
class WindowScores:
    """Finalized scores of one window (length W each)."""

    offset: int
    mem: np.ndarray
    quant: np.ndarray
    combined: np.ndarray


@dataclass
class ScoreSeries:
    """Per-timestep scores aligned to the scored series."""

    mem: np.ndarray
    quant: np.ndarray
    score: np.ndarray
    labels: np.ndarray | None = None


class Scorer:
    """Stateful window-by-window scoring pipeline.

    Raw per-window scores are pure functions of (model, bank, window) and may
    be computed in parallel; finalization (selection, EMA fold, mix) is a
    strictly ordered fold and must see windows in temporal order. The model
    state and bank may be swapped between windows (test-time adaptation);
    swapping invalidates the per-entry memory-score cache.
    """

    def __init__(self, state: ModelState, bank: MemoryBank, config: RunConfig):
        self.state = state
        self.bank = bank
        self.config = config
        self.coverages: list[CoverageMap] = [
            coverage(sc, config.window_length) for sc in config.scales
        ]
        self.ema_mem = EmaState(momentum=config.ema_momentum)
        self.ema_quant = EmaState(momentum=config.ema_momentum)
        self._entry_scores: list[np.ndarray] | None = None

    def set_model(self, state: ModelState, bank: MemoryBank):
        self.state = state
        self.bank = bank
        self._entry_scores = None

    def _entry_score_tables(self) -> list[np.ndarray]:
        # memory score of every codebook entry, per scale; queries are always
        # codebook rows, so scores depend only on the quantization index
        if self._entry_scores is None:
            cfg = self.config
            self._entry_scores = [
                memory_scores_for_queries(
                    cb.entries, self.bank.scales[k], cfg.n_neighbors,
                    cfg.n_density, cfg.eps, cfg.use_local_scaling,
                )
                for k, cb in enumerate(self.state.codebooks)
            ]
        return self._entry_scores

    def raw_window_scores(self, window: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-variable raw score matrices (n_vars, W) for both streams."""
        cfg = self.config
        w = np.asarray(window, dtype=np.float64)
        if w.shape[0] != cfg.window_length:
            raise ShapeError(
                f"window length {w.shape[0]} != configured {cfg.window_length}"
            )
        tables = self._entry_score_tables()
        mem_acc = np.zeros((w.shape[1], cfg.window_length))
        quant_acc = np.zeros_like(mem_acc)
        for k, scale in enumerate(cfg.scales):
            patches = extract_patches(w, scale)
            embeddings, _ = encode(patches, self.state.params[k])
            idx, quantized = nearest_entries(embeddings, self.state.codebooks[k].entries)
            residual = np.linalg.norm(embeddings - quantized, axis=2)  # (n_vars, N)
            mem_patch = tables[k][idx]                                 # (n_vars, N)
            cov = self.coverages[k]
            mem_acc += cov.spread(mem_patch)
            quant_acc += cov.spread(residual)
        n_scales = len(cfg.scales)
        return mem_acc / n_scales, quant_acc / n_scales

    def finalize_window(self, offset: int, mem_raw: np.ndarray,
                        quant_raw: np.ndarray) -> WindowScores:
        """Selection, normalization, and mixing; advances the EMA fold."""
        cfg = self.config
        if cfg.use_variable_selection:
            mem_t, _ = select_variables(mem_raw, cfg.selection, cfg.eps)
            quant_t, _ = select_variables(quant_raw, cfg.selection, cfg.eps)
        else:
            mem_t = mem_raw.mean(axis=0)
            quant_t = quant_raw.mean(axis=0)
        if cfg.use_normalization:
            mem_n = ema_normalize(mem_t, self.ema_mem, cfg.eps)
            quant_n = ema_normalize(quant_t, self.ema_quant, cfg.eps)
        else:
            mem_n, quant_n = mem_t, quant_t
        return WindowScores(
            offset=offset,
            mem=mem_n,
            quant=quant_n,
            combined=aggregate(mem_n, quant_n, cfg.score_mix),
        )

    def score_windows(self, windows: list[np.ndarray],
                      offsets: list[int]) -> list[WindowScores]:
        """Score windows in order: raw scores (parallel-safe), then the fold."""
        if len(windows) != len(offsets):
            raise ShapeError("windows and offsets differ in length")
        if any(b <= a for a, b in zip(offsets, offsets[1:])):
            raise DataError("window offsets must be strictly increasing")
        self._entry_score_tables()  # build once before any fan-out
        if self.config.threads > 1 and len(windows) > 1:
            with ThreadPoolExecutor(max_workers=self.config.threads) as pool:
                raws = list(pool.map(self.raw_window_scores, windows))
        else:
            raws = [self.raw_window_scores(w) for w in windows]
        return [
            self.finalize_window(off, mem, quant)
            for off, (mem, quant) in zip(offsets, raws)
        ]


def merge_window_scores(window_scores: list[WindowScores], total_length: int,
                        labels: np.ndarray | None = None) -> ScoreSeries:
    """Average overlapping windows' scores into one per-timestep series."""
    acc = np.zeros((3, total_length))
    counts = np.zeros(total_length)
    for ws in window_scores:
        span = slice(ws.offset, ws.offset + ws.combined.size)
        acc[0, span] += ws.mem
        acc[1, span] += ws.quant
        acc[2, span] += ws.combined
        counts[span] += 1.0
    if np.any(counts == 0):
        raise DataError("window set does not cover every timestep")
    acc /= counts
    return ScoreSeries(mem=acc[0], quant=acc[1], score=acc[2], labels=labels)


def score_series(state: ModelState, bank: MemoryBank, series: np.ndarray,
                 config: RunConfig, labels: np.ndarray | None = None) -> ScoreSeries:
    """Frozen-model batch scoring of a full series."""
    from .data import window_offsets  # local import: data also stands alone

    s = np.asarray(series, dtype=np.float64)
    offsets = window_offsets(s.shape[0], config.window_length, config.window_stride)
    windows = [s[o : o + config.window_length] for o in offsets]
    scorer = Scorer(state, bank, config)
    per_window = scorer.score_windows(windows, list(offsets))
    return merge_window_scores(per_window, s.shape[0], labels)
