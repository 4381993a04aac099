"""Dense float64 math kernels: matrices, seeded RNG, AdamW, gradient checking.

Everything in the package runs on 64-bit floats so that central-difference
gradient validation is meaningful. Matrix storage is plain C-contiguous
``numpy.ndarray``; the helpers here add the shape/finiteness checking the
rest of the package relies on.

The RNG is pinned to numpy's PCG64 counter-based generator: a given integer
seed yields the same draw sequence on every platform and run, which makes
training checkpoints reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError


def as_matrix(values, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Coerce to a C-contiguous float64 2-D array, validating shape and finiteness."""
    m = np.ascontiguousarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={m.ndim}")
    if rows is not None and m.shape[0] != rows:
        raise ShapeError(f"expected {rows} rows, got {m.shape[0]}")
    if cols is not None and m.shape[1] != cols:
        raise ShapeError(f"expected {cols} cols, got {m.shape[1]}")
    if not np.all(np.isfinite(m)):
        raise NumericError("matrix contains NaN or Inf")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with explicit shape validation and finite output."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul requires 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise NumericError("matmul produced non-finite values")
    return out


class Rng:
    """Seeded random source (PCG64). Identical seed, identical sequence."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low: float, high: float, size) -> np.ndarray:
        return self._gen.uniform(low, high, size=size)

    def normal(self, scale: float, size) -> np.ndarray:
        return self._gen.normal(0.0, scale, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)


@dataclass
class AdamWState:
    """Per-parameter AdamW state: running moments plus the shared hyperparameters.

    ``weight decay`` is decoupled: it scales the parameter directly and never
    enters the moment estimates.
    """

    lr: float = 1e-4
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None


def adamw_step(state: AdamWState, param: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """One decoupled-weight-decay Adam update. Returns the new parameter array.

    Moments are lazily allocated to the parameter's shape on the first call and
    mutated in place; the input parameter array is left untouched.
    """
    if param.shape != grad.shape:
        raise ShapeError(f"param/grad shape mismatch: {param.shape} vs {grad.shape}")
    if state.m is None:
        state.m = np.zeros_like(param)
        state.v = np.zeros_like(param)
    if state.m.shape != param.shape:
        raise ShapeError(f"state moments shaped {state.m.shape}, param {param.shape}")

    state.step_count += 1
    t = state.step_count
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grad
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**t)
    v_hat = state.v / (1.0 - state.beta2**t)

    out = param * (1.0 - state.lr * state.weight_decay)
    out -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return out


class AdamW:
    """Optimizer over a named collection of parameter arrays.

    Keeps one AdamWState per name so callers can update parameters as a
    {name: array} dict without tracking moment buffers themselves.
    """

    def __init__(self, lr: float = 1e-4, weight_decay: float = 5e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._states: dict[str, AdamWState] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        out = {}
        for name, p in params.items():
            st = self._states.get(name)
            if st is None:
                st = AdamWState(self.lr, self.weight_decay, self.beta1, self.beta2, self.eps)
                self._states[name] = st
            out[name] = adamw_step(st, p, grads[name])
        return out


def finite_diff_check(loss_fn, params: list[np.ndarray],
                      analytic_grads: list[np.ndarray], h: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central differences.

    ``loss_fn`` takes the parameter list and returns a scalar; it must be
    deterministic. Error per coordinate is |analytic - fd| / (|fd| + 1e-8).
    Intended for toy problem sizes only — cost is two loss evaluations per
    scalar parameter.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    worst = 0.0
    work = [p.copy() for p in params]
    for k, p in enumerate(work):
        flat = p.reshape(-1)
        g_flat = analytic_grads[k].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lo_hi = loss_fn(work)
            flat[i] = orig - h
            lo_lo = loss_fn(work)
            flat[i] = orig
            if not (np.isfinite(lo_hi) and np.isfinite(lo_lo)):
                raise NumericError("loss_fn returned a non-finite value during checking")
            fd = (lo_hi - lo_lo) / (2.0 * h)
            err = abs(g_flat[i] - fd) / (abs(fd) + 1e-8)
            worst = max(worst, err)
    return worst


def pairwise_sq_dists(queries: np.ndarray, points: np.ndarray,
                      chunk: int = 512) -> np.ndarray:
    """Exact squared Euclidean distances, (Q, P) for (Q, d) x (P, d) inputs.

    Computed as direct squared differences (not the norm expansion) so that
    mathematically equal distances compare equal in floating point; argmin
    tie-breaking then deterministically favors the lowest index. Chunked over
    queries to bound the temporary (chunk, P, d) allocation.
    """
    q = np.asarray(queries, dtype=np.float64)
    p = np.asarray(points, dtype=np.float64)
    if q.ndim != 2 or p.ndim != 2 or q.shape[1] != p.shape[1]:
        raise ShapeError(f"incompatible shapes for distances: {q.shape} vs {p.shape}")
    out = np.empty((q.shape[0], p.shape[0]), dtype=np.float64)
    for s in range(0, q.shape[0], chunk):
        e = min(s + chunk, q.shape[0])
        diff = q[s:e, None, :] - p[None, :, :]
        out[s:e] = (diff * diff).sum(axis=-1)
    return out
