"""Gradient refinement of the output layer with the binary kernels frozen.

Minimises softmax cross-entropy with Adam over shuffled mini-batches.
Features are computed once; when they would exceed ``memory_budget`` bytes
they are spilled to a temporary memory-mapped file and read back per batch.
"""

from __future__ import annotations

import logging
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, one_hot
from .errors import RefineError, ShapeError
from .model import LBCNN, as_float_images

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RefineConfig:
    epochs: int = 10
    batch_size: int = 128
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    memory_budget: int = 1 << 30

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


def softmax_xent_loss_grad(outW, H_batch, Y_batch):
    """Mean softmax cross-entropy of ``outW^T h`` and its gradient in ``outW``.

    H_batch is (n_features, b) and Y_batch the one-hot (n_classes, b) targets.
    """
    outW = np.asarray(outW, dtype=np.float64)
    H = np.asarray(H_batch, dtype=np.float64)
    Y = np.asarray(Y_batch, dtype=np.float64)
    if H.shape[0] != outW.shape[0] or Y.shape != (outW.shape[1], H.shape[1]):
        raise ShapeError("inconsistent shapes for loss/gradient")
    b = H.shape[1]
    z = outW.T @ H
    z -= z.max(axis=0, keepdims=True)
    e = np.exp(z)
    norm = e.sum(axis=0, keepdims=True)
    P = e / norm
    loss = float(np.mean(np.log(norm[0]) - (z * Y).sum(axis=0)))
    grad = H @ (P - Y).T / b
    return loss, grad


class FeatureStore:
    """Row-major (n_samples, n_features) float32 features, in RAM or on disk."""

    def __init__(self, model: LBCNN, images, memory_budget: int):
        n = images.shape[0]
        nbytes = n * model.arch.n_features * 4
        self._path = None
        if nbytes > memory_budget:
            fd, self._path = tempfile.mkstemp(prefix="lbcnn-features-", suffix=".f32")
            os.close(fd)
            self.rows = np.memmap(self._path, dtype=np.float32, mode="w+",
                                  shape=(n, model.arch.n_features))
            log.info("spilling %.1f MB of features to %s", nbytes / 1e6, self._path)
        else:
            self.rows = np.empty((n, model.arch.n_features), dtype=np.float32)
        for start, rows in model.iter_features(images):
            self.rows[start:start + rows.shape[0]] = rows

    def close(self):
        if self._path is not None:
            del self.rows
            os.unlink(self._path)
            self._path = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class RefineResult:
    weights: np.ndarray
    epoch_losses: list[float] = field(default_factory=list)


def refine_output(model: LBCNN, train: Dataset, cfg: RefineConfig = RefineConfig()) -> RefineResult:
    """Adam refinement of the model's output weights on ``train``.

    The model is not modified.  Quantized models start from their dequantized
    weights.  Raises RefineError (carrying the last finite weights) if the
    loss stops being finite.
    """
    W = np.array(model.float_weights(), dtype=np.float64)
    if cfg.epochs == 0:
        return RefineResult(W)
    n = len(train)
    if cfg.batch_size > n:
        raise ValueError(f"batch_size {cfg.batch_size} exceeds {n} training samples")
    Y = one_hot(train.labels, model.arch.n_classes)
    rng = np.random.default_rng(cfg.seed)
    m = np.zeros_like(W)
    v = np.zeros_like(W)
    step = 0
    losses = []
    with FeatureStore(model, as_float_images(train.images), cfg.memory_budget) as store:
        for epoch in range(cfg.epochs):
            order = rng.permutation(n)
            total = 0.0
            for b0 in range(0, n, cfg.batch_size):
                idx = np.sort(order[b0:b0 + cfg.batch_size])
                with np.errstate(over="ignore", invalid="ignore"):  # checked just below
                    loss, grad = softmax_xent_loss_grad(W, store.rows[idx].T, Y[:, idx])
                if not (np.isfinite(loss) and np.isfinite(grad).all()):
                    raise RefineError(f"non-finite loss in epoch {epoch}", last_weights=W.copy())
                total += loss * idx.size
                step += 1
                with np.errstate(over="ignore", invalid="ignore"):
                    m = cfg.beta1 * m + (1 - cfg.beta1) * grad
                    v = cfg.beta2 * v + (1 - cfg.beta2) * grad * grad
                    m_hat = m / (1 - cfg.beta1 ** step)
                    v_hat = v / (1 - cfg.beta2 ** step)
                    W_next = W - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
                if not np.isfinite(W_next).all():
                    raise RefineError(f"weights diverged in epoch {epoch}", last_weights=W.copy())
                W = W_next
            losses.append(total / n)
            log.info("epoch %d: mean loss %.6f", epoch, losses[-1])
    return RefineResult(W, losses)
