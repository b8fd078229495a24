"""A trained light binary CNN: frozen binary kernels plus a linear output layer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import elm
from .errors import ShapeError
from .quantize import QuantizedWeights, quantized_scores
from .tensor_ops import Architecture, KernelSet, default_batch_size, iter_feature_batches, param_bits

NORMALIZATION = "divide_255"


def as_float_images(images, dtype=np.float32):
    """8-bit images are scaled into [0, 1]; real-valued ones pass through."""
    images = np.asarray(images)
    if images.dtype == np.uint8:
        return images.astype(dtype) / dtype(255)
    return images


@dataclass
class LBCNN:
    arch: Architecture
    kernels: KernelSet
    out_weights: np.ndarray | QuantizedWeights
    class_names: list[str] | None = None
    normalization: str = NORMALIZATION
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kernels.check(self.arch)
        shape = (self.arch.n_features, self.arch.n_classes)
        w = self.out_weights.q if self.is_quantized else np.asarray(self.out_weights)
        if w.shape != shape:
            raise ShapeError(f"output weights {w.shape} do not match {shape}")
        if not self.is_quantized:
            self.out_weights = np.asarray(self.out_weights, dtype=np.float64)

    @property
    def is_quantized(self) -> bool:
        return isinstance(self.out_weights, QuantizedWeights)

    def float_weights(self) -> np.ndarray:
        return self.out_weights.dequantize() if self.is_quantized else self.out_weights

    def param_bits(self) -> tuple[int, int]:
        return param_bits(self.arch)

    def batch_size(self) -> int:
        return default_batch_size(self.arch)

    def iter_features(self, images, batch_size=None):
        """(start, rows) blocks of features; rows has shape (b, n_features)."""
        yield from iter_feature_batches(
            as_float_images(images), self.arch, self.kernels, batch_size or self.batch_size()
        )

    def features(self, images) -> np.ndarray:
        """Feature matrix (n_features, N) for a batch of images."""
        blocks = [rows for _, rows in self.iter_features(images)]
        return np.concatenate(blocks, axis=0).T

    def scores_from_features(self, H) -> np.ndarray:
        if self.is_quantized:
            return quantized_scores(self.out_weights, H)
        return elm.scores(self.out_weights, H)

    def predict(self, images) -> np.ndarray:
        """Class index per image; ties go to the lowest index.

        Features are produced in fixed-size blocks, so the same images always
        yield the same predictions bit for bit.
        """
        out = []
        for _, rows in self.iter_features(images):
            out.append(np.argmax(self.scores_from_features(rows.T), axis=0))
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)

    def evaluate(self, images, labels) -> float:
        return elm.accuracy(self.predict(images), labels)
