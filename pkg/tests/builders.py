"""Small random models and datasets shared by several test modules."""

import numpy as np

from lbcnn.data import Dataset
from lbcnn.model import LBCNN
from lbcnn.quantize import quantize
from lbcnn.search import generate_kernels
from lbcnn.tensor_ops import Architecture, KernelLayer, KernelSet


def random_arch(rng, max_layers=3):
    h, w = rng.integers(3, 14, size=2)
    c = int(rng.choice([1, 3]))
    mults = tuple(int(m) for m in rng.integers(1, 4, size=rng.integers(1, max_layers + 1)))
    return Architecture((int(h), int(w), c), mults, int(rng.integers(2, 6)))


def random_model(rng, arch=None, quantized=False, biases=False, bits=8):
    arch = arch or random_arch(rng)
    layers = []
    for m, c in zip(arch.multipliers, arch.in_channels()):
        w = rng.choice(np.array([-1, 1], dtype=np.int8), size=(m, c, 3, 3))
        b = rng.standard_normal(m * c) if biases else None
        layers.append(KernelLayer(w, b))
    W = rng.standard_normal((arch.n_features, arch.n_classes))
    out = quantize(W, bits) if quantized else W
    names = [f"class{k}" for k in range(arch.n_classes)]
    return LBCNN(arch, KernelSet(layers), out, class_names=names,
                 provenance={"master_seed": int(rng.integers(0, 2**63)), "note": "random"})


def blob_dataset(n_per_class, n_classes=3, shape=(8, 8, 1), seed=0, noise=40):
    """Class k is a bright square at a class-specific spot plus pixel noise."""
    rng = np.random.default_rng(seed)
    h, w, c = shape
    images, labels = [], []
    for k in range(n_classes):
        base = np.zeros(shape)
        r0 = (2 * k) % max(1, h - 2)
        base[r0:r0 + 3, (3 * k) % max(1, w - 3):(3 * k) % max(1, w - 3) + 3] = 200
        for _ in range(n_per_class):
            img = base + rng.integers(0, noise, shape)
            images.append(np.clip(img, 0, 255).astype(np.uint8))
            labels.append(k)
    return Dataset(np.stack(images), np.array(labels), n_classes)


def constant_dataset(values, shape=(6, 6, 1)):
    """One constant image per class."""
    images = np.stack([np.full(shape, v, dtype=np.uint8) for v in values])
    return Dataset(images, np.arange(len(values)), len(values))


def kernels_for(arch, seed=0):
    return generate_kernels(arch, seed)
