"""Symmetric per-tensor fixed-point quantization of the output layer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, ShapeError


@dataclass
class QuantizedWeights:
    """Integer weights ``q`` (n_features x n_classes) sharing one positive ``scale``."""

    q: np.ndarray
    scale: float
    bits: int

    def __post_init__(self):
        if not 2 <= self.bits <= 8:
            raise ValueError(f"bits must be in [2, 8], got {self.bits}")
        if not (self.scale > 0 and np.isfinite(self.scale)):
            raise ValueError(f"scale must be positive and finite, got {self.scale}")
        q = np.asarray(self.q)
        qmax = qmax_for(self.bits)
        if q.ndim != 2:
            raise ShapeError(f"quantized weights must be 2-D, got {q.shape}")
        if q.size and (q.min() < -qmax or q.max() > qmax):
            raise ValueError(f"quantized values exceed +/-{qmax}")
        self.q = q.astype(np.int8)
        self.scale = float(self.scale)
        self.bits = int(self.bits)

    def dequantize(self) -> np.ndarray:
        return self.q.astype(np.float64) * self.scale

    @property
    def n_bits(self) -> int:
        """Weight storage in bits (scale excluded)."""
        return self.q.size * self.bits


def qmax_for(bits: int) -> int:
    return (1 << (bits - 1)) - 1


def quantize(outW, bits: int = 8) -> QuantizedWeights:
    """Round ``outW / scale`` to the nearest even integer, saturating at +/-(2^(bits-1) - 1).

    ``scale = max|outW| / (2^(bits-1) - 1)``; an all-zero matrix gets scale 1.
    """
    if not 2 <= bits <= 8:
        raise ValueError(f"bits must be in [2, 8], got {bits}")
    w = np.asarray(outW, dtype=np.float64)
    if not np.isfinite(w).all():
        raise InputError("cannot quantize non-finite weights")
    qmax = qmax_for(bits)
    peak = np.abs(w).max(initial=0.0)
    if peak == 0.0:
        return QuantizedWeights(np.zeros(w.shape, dtype=np.int8), 1.0, bits)
    scale = peak / qmax
    q = np.clip(np.rint(w / scale), -qmax, qmax)
    return QuantizedWeights(q.astype(np.int8), scale, bits)


def quantized_scores(qw: QuantizedWeights, H) -> np.ndarray:
    """Unscaled class scores ``q^T H``; multiplying by ``scale`` never changes the argmax."""
    H = np.asarray(H)
    if H.shape[0] != qw.q.shape[0]:
        raise ShapeError(f"{H.shape[0]} features but weights expect {qw.q.shape[0]}")
    return qw.q.T.astype(H.dtype if np.issubdtype(H.dtype, np.floating) else np.float64) @ H


def quantized_predict(qw: QuantizedWeights, H) -> np.ndarray:
    return np.argmax(quantized_scores(qw, H), axis=0)
