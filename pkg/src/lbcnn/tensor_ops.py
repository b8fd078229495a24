"""Forward-path primitives of a light binary CNN.

Images are channels-last ``(N, H, W, C)`` arrays.  Each macro-layer is a 3x3
depthwise convolution with +/-1 weights (pad 1, stride 1) followed by a 4x4
cover-all max pool (stride 2, pad 1).  The only nonlinearity is the pool.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArchitectureError, ShapeError

KERNEL_SIZE = 3
CONV_PAD = 1
CONV_STRIDE = 1
POOL_SIZE = 4
POOL_STRIDE = 2
POOL_PAD = 1
MAX_LAYERS = 3

# bounds the largest per-batch intermediate of feature_expand (elements)
_BATCH_ELEMENTS = 1 << 23


def pool_out_size(in_size: int, k: int = POOL_SIZE, s: int = POOL_STRIDE, p: int = POOL_PAD) -> int:
    """Output length of a cover-all pooling along one axis.

    A trailing partial window is emitted, so the result is
    ``ceil((in_size + 2p - k) / s) + 1``.
    """
    if in_size + 2 * p < 1:
        raise InvalidArchitectureError(f"padded size {in_size + 2 * p} < 1")
    out = -(-(in_size + 2 * p - k) // s) + 1
    if out < 1:
        raise InvalidArchitectureError(
            f"pooling k={k}, s={s}, p={p} leaves no output for size {in_size}"
        )
    return out


@dataclass(frozen=True)
class Architecture:
    """Input geometry, per-layer channel multipliers and class count."""

    input_shape: tuple[int, int, int]
    multipliers: tuple[int, ...]
    n_classes: int

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "multipliers", tuple(int(m) for m in self.multipliers))
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise InvalidArchitectureError(f"bad input shape {self.input_shape}")
        if not 1 <= len(self.multipliers) <= MAX_LAYERS:
            raise InvalidArchitectureError(
                f"need 1..{MAX_LAYERS} layers, got {len(self.multipliers)}"
            )
        if min(self.multipliers) < 1:
            raise InvalidArchitectureError(f"multipliers must be positive: {self.multipliers}")
        if int(self.n_classes) < 1:
            raise InvalidArchitectureError(f"n_classes must be positive: {self.n_classes}")
        object.__setattr__(self, "n_classes", int(self.n_classes))
        self.layer_shapes()  # raises on architectures that pool away to nothing

    @property
    def n_layers(self) -> int:
        return len(self.multipliers)

    def in_channels(self) -> list[int]:
        """Input channel count seen by every layer."""
        chans = [self.input_shape[2]]
        for m in self.multipliers[:-1]:
            chans.append(chans[-1] * m)
        return chans

    def layer_shapes(self) -> list[tuple[int, int, int]]:
        """(H, W, C) after each conv+pool stage."""
        h, w, c = self.input_shape
        shapes = []
        for m in self.multipliers:
            h, w, c = pool_out_size(h), pool_out_size(w), c * m
            shapes.append((h, w, c))
        return shapes

    @property
    def output_shape(self) -> tuple[int, int, int]:
        return self.layer_shapes()[-1]

    @property
    def n_features(self) -> int:
        h, w, c = self.output_shape
        return h * w * c

    @property
    def expansion_factor(self) -> float:
        h, w, c = self.input_shape
        return self.n_features / (h * w * c)

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "multipliers": list(self.multipliers),
            "n_classes": self.n_classes,
            "kernel_size": KERNEL_SIZE,
            "conv_pad": CONV_PAD,
            "conv_stride": CONV_STRIDE,
            "pool_size": POOL_SIZE,
            "pool_stride": POOL_STRIDE,
            "pool_pad": POOL_PAD,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        fixed = {
            "kernel_size": KERNEL_SIZE,
            "conv_pad": CONV_PAD,
            "conv_stride": CONV_STRIDE,
            "pool_size": POOL_SIZE,
            "pool_stride": POOL_STRIDE,
            "pool_pad": POOL_PAD,
        }
        for key, val in fixed.items():
            if key in d and d[key] != val:
                raise InvalidArchitectureError(f"unsupported {key}={d[key]} (only {val})")
        return cls(tuple(d["input_shape"]), tuple(d["multipliers"]), d["n_classes"])


@dataclass
class KernelLayer:
    """Binary depthwise kernels of one layer.

    ``weights`` has shape (M, C, 3, 3) with entries in {-1, +1}; ``biases`` has
    length M*C and is indexed by output channel ``c*M + m``.
    """

    weights: np.ndarray
    biases: np.ndarray = field(default=None)

    def __post_init__(self):
        w = np.asarray(self.weights)
        if w.ndim != 4 or w.shape[2:] != (KERNEL_SIZE, KERNEL_SIZE):
            raise ShapeError(f"kernel weights must be (M, C, 3, 3), got {w.shape}")
        if not np.all((w == 1) | (w == -1)):
            raise ValueError("binary kernel weights must be exactly -1 or +1")
        self.weights = w.astype(np.int8)
        n_out = w.shape[0] * w.shape[1]
        if self.biases is None:
            self.biases = np.zeros(n_out)
        else:
            b = np.asarray(self.biases, dtype=np.float64).reshape(-1)
            if b.shape != (n_out,):
                raise ShapeError(f"expected {n_out} biases, got {b.shape[0]}")
            self.biases = b

    @property
    def multiplier(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]


@dataclass
class KernelSet:
    layers: list[KernelLayer]

    def __len__(self):
        return len(self.layers)

    def __iter__(self):
        return iter(self.layers)

    def __getitem__(self, i):
        return self.layers[i]

    @property
    def n_weights(self) -> int:
        return sum(layer.weights.size for layer in self.layers)

    def equals(self, other: "KernelSet") -> bool:
        """Bit-level equality of weights and biases."""
        if len(self) != len(other):
            return False
        return all(
            np.array_equal(a.weights, b.weights) and np.array_equal(a.biases, b.biases)
            for a, b in zip(self.layers, other.layers)
        )

    def check(self, arch: Architecture) -> None:
        if len(self) != arch.n_layers:
            raise ShapeError(f"{len(self)} kernel layers for a {arch.n_layers}-layer architecture")
        for i, (layer, m, c) in enumerate(zip(self.layers, arch.multipliers, arch.in_channels())):
            if layer.weights.shape[:2] != (m, c):
                raise ShapeError(
                    f"layer {i}: kernels {layer.weights.shape[:2]} do not match (M={m}, C={c})"
                )


def _check_conv_input(x, layer):
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"expected (N, H, W, C) input, got shape {x.shape}")
    if x.shape[3] != layer.in_channels:
        raise ShapeError(f"input has {x.shape[3]} channels, kernels expect {layer.in_channels}")
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    return x


def _conv_signs(x, layer):
    n, h, w, c = x.shape
    m = layer.multiplier
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    positive = (layer.weights > 0).transpose(1, 0, 2, 3)  # (C, M, 3, 3)
    out = np.zeros((n, h, w, c, m), dtype=x.dtype)
    tmp = np.empty_like(out)
    for dy in range(KERNEL_SIZE):
        for dx in range(KERNEL_SIZE):
            tap = xp[:, dy:dy + h, dx:dx + w, :, None]
            mask = positive[:, :, dy, dx]
            if mask.all():
                out += tap
            elif not mask.any():
                out -= tap
            else:
                np.negative(tap, out=tmp)
                np.copyto(tmp, tap, where=mask)
                out += tmp
    return out.reshape(n, h, w, c * m)


def _conv_gemm(x, layer):
    n, h, w, c = x.shape
    m = layer.multiplier
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    patches = np.empty((c, n, h, w, KERNEL_SIZE * KERNEL_SIZE), dtype=x.dtype)
    for t in range(KERNEL_SIZE * KERNEL_SIZE):
        dy, dx = divmod(t, KERNEL_SIZE)
        patches[..., t] = xp[:, dy:dy + h, dx:dx + w, :].transpose(3, 0, 1, 2)
    signs = layer.weights.transpose(1, 2, 3, 0).reshape(c, KERNEL_SIZE * KERNEL_SIZE, m)
    out = np.matmul(patches.reshape(c, -1, KERNEL_SIZE * KERNEL_SIZE), signs.astype(x.dtype))
    return out.reshape(c, n, h, w, m).transpose(1, 2, 3, 0, 4).reshape(n, h, w, c * m)


_ENGINES = {"signs": _conv_signs, "gemm": _conv_gemm}


def depthwise_conv3x3(x: np.ndarray, layer: KernelLayer, engine: str = "signs") -> np.ndarray:
    """Binary depthwise convolution, pad 1, stride 1.

    Output channel ``c*M + m`` holds input channel c filtered by kernel m, and
    the bias is added after all nine taps.

    engine="signs" is multiply-free: every tap adds either the shifted input
    or its negation, in row-major (dy, dx) order.  engine="gemm" contracts
    the 3x3 patches against the +/-1 matrix with one batched matmul, which is
    several times faster under numpy; on integer-valued inputs both engines
    agree bit for bit.
    """
    x = _check_conv_input(x, layer)
    try:
        fn = _ENGINES[engine]
    except KeyError:
        raise ValueError(f"unknown engine {engine!r}; choose from {sorted(_ENGINES)}") from None
    out = fn(x, layer)
    if np.any(layer.biases):
        out += layer.biases.astype(x.dtype)
    return out


def depthwise_conv3x3_reference(x: np.ndarray, layer: KernelLayer) -> np.ndarray:
    """Same convolution computed with explicit weight multiplications."""
    x = _check_conv_input(x, layer)
    n, h, w, c = x.shape
    m = layer.multiplier
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    wts = layer.weights.transpose(1, 0, 2, 3).astype(x.dtype)
    out = np.zeros((n, h, w, c, m), dtype=x.dtype)
    for dy in range(KERNEL_SIZE):
        for dx in range(KERNEL_SIZE):
            out += xp[:, dy:dy + h, dx:dx + w, :, None] * wts[:, :, dy, dx]
    out = out.reshape(n, h, w, c * m)
    if np.any(layer.biases):
        out += layer.biases.astype(x.dtype)
    return out


def _pool_axis(x, axis, k, s, p):
    size = x.shape[axis]
    out = pool_out_size(size, k, s, p)
    if k - 1 - p < 0 or (out - 1) * s - p > size - 1:
        raise InvalidArchitectureError(
            f"pooling k={k}, s={s}, p={p} on size {size} yields a window with no real cell"
        )
    span = (out - 1) * s + k
    right = span - p - size
    pad = [(0, 0)] * x.ndim
    pad[axis] = (p, max(right, 0))
    if np.issubdtype(x.dtype, np.floating):
        fill = -np.inf
    else:
        fill = np.iinfo(x.dtype).min
    xp = np.pad(x, pad, constant_values=fill)
    idx = [slice(None)] * x.ndim
    result = None
    for j in range(k):
        idx[axis] = slice(j, j + (out - 1) * s + 1, s)
        window = xp[tuple(idx)]
        result = window.copy() if result is None else np.maximum(result, window, out=result)
    return result


def maxpool_coverall(x: np.ndarray, k: int = POOL_SIZE, s: int = POOL_STRIDE, p: int = POOL_PAD) -> np.ndarray:
    """Cover-all max pooling over H and W; padding never wins a window."""
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"expected (N, H, W, C) input, got shape {x.shape}")
    # max is separable, so pool rows then columns
    return _pool_axis(_pool_axis(x, 1, k, s, p), 2, k, s, p)


def forward_layers(x: np.ndarray, kernels: KernelSet, engine: str = "gemm") -> np.ndarray:
    """Apply every conv+pool macro-layer; returns the final (N, H, W, C) map."""
    for layer in kernels:
        x = maxpool_coverall(depthwise_conv3x3(x, layer, engine))
    return x


def default_batch_size(arch: Architecture) -> int:
    h, w, c = arch.input_shape
    widest = max([h * w * c * arch.multipliers[0]] + [
        sh * sw * sc * m for (sh, sw, sc), m in zip(arch.layer_shapes(), arch.multipliers[1:])
    ])
    return max(1, _BATCH_ELEMENTS // widest)


def iter_feature_batches(x, arch, kernels, batch_size=None, dtype=np.float32, engine="gemm"):
    """Yield ``(start, block)`` with block = features of x[start:start+b], shape (b, n_features).

    Rows are samples; the transpose is the (n_features, b) slice of the
    feature matrix.
    """
    x = np.asarray(x)
    if x.ndim != 4 or x.shape[1:] != arch.input_shape:
        raise ShapeError(f"input shape {x.shape[1:]} does not match architecture {arch.input_shape}")
    kernels.check(arch)
    bs = batch_size or default_batch_size(arch)
    for start in range(0, x.shape[0], bs):
        xb = x[start:start + bs].astype(dtype, copy=False)
        feats = forward_layers(xb, kernels, engine)
        yield start, feats.reshape(feats.shape[0], -1)


def feature_expand(
    x: np.ndarray,
    arch: Architecture,
    kernels: KernelSet,
    batch_size: int | None = None,
    dtype=np.float32,
    workers: int = 1,
    engine: str = "gemm",
) -> np.ndarray:
    """Expand images into the feature matrix, shape (n_features, n_samples).

    Samples are flattened in row-major (H, W, C) order.  The returned array is
    the transpose of a C-ordered (n_samples, n_features) buffer.
    """
    x = np.asarray(x)
    if x.ndim != 4 or x.shape[1:] != arch.input_shape:
        raise ShapeError(f"input shape {x.shape[1:]} does not match architecture {arch.input_shape}")
    kernels.check(arch)
    n = x.shape[0]
    rows = np.empty((n, arch.n_features), dtype=dtype)
    bs = batch_size or default_batch_size(arch)

    def work(start):
        feats = forward_layers(x[start:start + bs].astype(dtype, copy=False), kernels, engine)
        rows[start:start + feats.shape[0]] = feats.reshape(feats.shape[0], -1)

    starts = range(0, n, bs)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, starts))
    else:
        for start in starts:
            work(start)
    return rows.T


def param_bits(arch: Architecture) -> tuple[int, int]:
    """Weight storage in bits: (binary conv weights, 8-bit output layer)."""
    conv = sum(
        KERNEL_SIZE * KERNEL_SIZE * m * c for m, c in zip(arch.multipliers, arch.in_channels())
    )
    return conv, arch.n_features * arch.n_classes * 8
