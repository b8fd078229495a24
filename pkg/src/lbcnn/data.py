"""Dataset ingestion: IDX files, binary netpbm trees, splits and encodings."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EncodingError, FormatError, SplitError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
PNM_SUFFIXES = (".pgm", ".ppm", ".pnm")


@dataclass
class Dataset:
    """Channels-last images with integer class labels."""

    images: np.ndarray
    labels: np.ndarray
    n_classes: int
    class_names: list[str] | None = field(default=None)

    def __post_init__(self):
        self.images = np.asarray(self.images)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise FormatError(f"images must be (N, H, W, C), got {self.images.shape}")
        if self.images.shape[0] != self.labels.shape[0]:
            raise FormatError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise EncodingError(f"labels outside [0, {self.n_classes})")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices)
        return Dataset(self.images[idx], self.labels[idx], self.n_classes, self.class_names)

    def head(self, m: int | None) -> "Dataset":
        """The first m samples in load order (all of them when m is None)."""
        if m is None or m >= len(self):
            return self
        return Dataset(self.images[:m], self.labels[:m], self.n_classes, self.class_names)

    def summary(self) -> dict:
        return {"N": len(self), "shape": list(self.shape), "n_classes": self.n_classes}


def _open(path):
    path = os.fspath(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def _read_idx(path, expected_magic, ndim):
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack(">" + "I" * ndim, raw[4:head])
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) - head < count:
        raise FormatError(f"{path}: expected {count} data bytes, found {len(raw) - head}")
    if len(raw) - head > count:
        raise FormatError(f"{path}: {len(raw) - head - count} trailing bytes")
    return np.frombuffer(raw, dtype=np.uint8, offset=head).reshape(dims)


def load_idx(images_path, labels_path, n_classes: int | None = None) -> Dataset:
    """Read an IDX image file (magic 0x803, N x H x W bytes) and its label file (0x801).

    ``n_classes`` defaults to ``max(label) + 1``.
    """
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 1
    return Dataset(images[..., None], labels.astype(np.int64), n_classes)


def write_idx(ds: Dataset, images_path, labels_path) -> None:
    """Write single-channel 8-bit images and labels as IDX files."""
    if ds.images.dtype != np.uint8 or ds.images.shape[3] != 1:
        raise FormatError("IDX output needs uint8 single-channel images")
    if ds.labels.size and ds.labels.max() > 255:
        raise FormatError("IDX labels must fit in one byte")
    n, h, w, _ = ds.images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w))
        fh.write(np.ascontiguousarray(ds.images[..., 0]).tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        fh.write(ds.labels.astype(np.uint8).tobytes())


def _pnm_tokens(raw, count, path):
    """Parse ``count`` whitespace-separated header integers after the magic."""
    pos = 2
    values = []
    while len(values) < count:
        while pos < len(raw) and (raw[pos:pos + 1].isspace() or raw[pos:pos + 1] == b"#"):
            if raw[pos:pos + 1] == b"#":
                end = raw.find(b"\n", pos)
                pos = len(raw) if end < 0 else end + 1
            else:
                pos += 1
        start = pos
        while pos < len(raw) and raw[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: malformed netpbm header")
        values.append(int(raw[start:pos]))
    if pos >= len(raw) or not raw[pos:pos + 1].isspace():
        raise FormatError(f"{path}: missing whitespace after netpbm header")
    return values, pos + 1


def read_pnm(path) -> np.ndarray:
    """Decode a binary PGM (P5) or PPM (P6) file into an (H, W, C) uint8 array."""
    with open(path, "rb") as fh:
        raw = fh.read()
    magic = raw[:2]
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise FormatError(f"{path}: unsupported netpbm magic {magic!r}")
    (width, height, maxval), offset = _pnm_tokens(raw, 3, path)
    if not 0 < maxval <= 255:
        raise FormatError(f"{path}: maxval {maxval} not in 1..255")
    if width < 1 or height < 1:
        raise FormatError(f"{path}: empty image")
    size = width * height * channels
    if len(raw) - offset < size:
        raise FormatError(f"{path}: truncated pixel data")
    data = np.frombuffer(raw, dtype=np.uint8, count=size, offset=offset)
    return data.reshape(height, width, channels)


def write_pnm(path, image: np.ndarray) -> None:
    """Write an (H, W) / (H, W, 1) array as P5 or an (H, W, 3) array as P6, maxval 255."""
    img = np.asarray(image)
    if img.dtype != np.uint8:
        raise FormatError("netpbm output needs uint8 pixels")
    if img.ndim == 2:
        img = img[..., None]
    h, w, c = img.shape
    if c not in (1, 3):
        raise FormatError(f"cannot write {c}-channel image as netpbm")
    magic = "P5" if c == 1 else "P6"
    with open(path, "wb") as fh:
        fh.write(f"{magic}\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def load_pnm_dir(root_dir) -> Dataset:
    """Load ``root/<class>/<image>.pgm|ppm`` with classes and files in lexicographic order."""
    root = Path(root_dir)
    if not root.is_dir():
        raise FormatError(f"{root} is not a directory")
    class_dirs = sorted((p for p in root.iterdir() if p.is_dir()), key=lambda p: p.name)
    if not class_dirs:
        raise FormatError(f"{root} has no class subdirectories")
    images, labels = [], []
    shape = None
    for k, cdir in enumerate(class_dirs):
        files = sorted(
            (p for p in cdir.iterdir() if p.is_file() and p.suffix.lower() in PNM_SUFFIXES),
            key=lambda p: p.name,
        )
        for f in files:
            img = read_pnm(f)
            if shape is None:
                shape = img.shape
            elif img.shape != shape:
                raise FormatError(f"{f}: shape {img.shape} differs from {shape}")
            images.append(img)
            labels.append(k)
    if not images:
        raise FormatError(f"{root} contains no netpbm images")
    return Dataset(np.stack(images), np.array(labels), len(class_dirs), [p.name for p in class_dirs])


def split_stratified(ds: Dataset, train_fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Per-class seeded split: floor(fraction * count) samples (at least 1) go to train.

    Both halves keep the original sample order.
    """
    if not 0 < train_fraction < 1:
        raise SplitError(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    train_idx = []
    for k in range(ds.n_classes):
        members = np.flatnonzero(ds.labels == k)
        if members.size == 0:
            continue
        if members.size < 2:
            raise SplitError(f"class {k} has {members.size} sample(s); need at least 2")
        n_train = max(1, int(np.floor(train_fraction * members.size)))
        train_idx.append(rng.permutation(members)[:n_train])
    train = np.sort(np.concatenate(train_idx))
    test = np.setdiff1d(np.arange(len(ds)), train)
    return ds.subset(train), ds.subset(test)


def normalize(ds: Dataset, dtype=np.float32) -> Dataset:
    """Scale 8-bit pixels into [0, 1] by dividing by 255."""
    if ds.images.dtype != np.uint8:
        raise EncodingError(f"normalize expects uint8 pixels, got {ds.images.dtype}")
    return Dataset(ds.images.astype(dtype) / dtype(255), ds.labels, ds.n_classes, ds.class_names)


def one_hot(labels, n_classes: int) -> np.ndarray:
    """Targets of shape (n_classes, N) with a single 1 per column."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise EncodingError(f"labels outside [0, {n_classes})")
    Y = np.zeros((n_classes, labels.size))
    Y[labels, np.arange(labels.size)] = 1.0
    return Y
