"""Portable binary container for trained models.

Layout (all multi-byte fields little-endian)::

    b"LBCN"                     magic
    uint32                      format version (1)
    uint32                      header length L
    L bytes                     UTF-8 JSON header
    kernels                     per layer: (M, C, 3, 3) signs, row-major,
                                1 bit each (1 -> +1, 0 -> -1), LSB first,
                                zero-padded to a whole byte
    biases                      float64 per layer, only if header
                                "biases_present" is true
    output weights              "float64": n_features*n_classes float64,
                                row-major; "quantized": float64 scale then
                                b-bit two's complement values, LSB first,
                                zero-padded to a whole byte
    uint32                      CRC-32 of every preceding byte

Every payload size follows from the header alone.
"""

from __future__ import annotations

import json
import os
import struct
import zlib

import numpy as np

from .errors import (
    BadMagicError,
    ChecksumError,
    ModelFormatError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from .model import LBCNN
from .quantize import QuantizedWeights
from .tensor_ops import Architecture, KernelLayer, KernelSet, param_bits

MAGIC = b"LBCN"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<4sII")


def pack_signs(weights: np.ndarray) -> bytes:
    return np.packbits(np.asarray(weights).reshape(-1) > 0, bitorder="little").tobytes()


def unpack_signs(buf: bytes, shape) -> np.ndarray:
    count = int(np.prod(shape))
    bits = np.unpackbits(np.frombuffer(buf, dtype=np.uint8), count=count, bitorder="little")
    return (2 * bits.astype(np.int8) - 1).reshape(shape)


def pack_ints(values: np.ndarray, bits: int) -> bytes:
    """Two's complement ``bits``-bit fields, concatenated LSB first."""
    u = np.asarray(values).reshape(-1).astype(np.int64) & ((1 << bits) - 1)
    stream = ((u[:, None] >> np.arange(bits)) & 1).astype(np.uint8)
    return np.packbits(stream.reshape(-1), bitorder="little").tobytes()


def unpack_ints(buf: bytes, count: int, bits: int) -> np.ndarray:
    stream = np.unpackbits(np.frombuffer(buf, dtype=np.uint8), count=count * bits, bitorder="little")
    u = (stream.reshape(count, bits).astype(np.int64) << np.arange(bits)).sum(axis=1)
    return u - ((u >> (bits - 1)) & 1) * (1 << bits)


def _kernel_bytes(arch: Architecture) -> list[int]:
    return [-(-9 * m * c // 8) for m, c in zip(arch.multipliers, arch.in_channels())]


def _section_sizes(header: dict) -> dict:
    arch = Architecture.from_dict(header["architecture"])
    n_out = arch.n_features * arch.n_classes
    out = header["output"]
    if out["kind"] == "float64":
        out_bytes = 8 * n_out
    elif out["kind"] == "quantized":
        out_bytes = 8 + -(-n_out * int(out["bits"]) // 8)
    else:
        raise ModelFormatError(f"unknown output kind {out['kind']!r}")
    bias_bytes = 0
    if header["biases_present"]:
        bias_bytes = 8 * sum(m * c for m, c in zip(arch.multipliers, arch.in_channels()))
    return {"arch": arch, "kernels": _kernel_bytes(arch), "biases": bias_bytes, "output": out_bytes}


def _header(model: LBCNN) -> dict:
    biases_present = any(np.any(layer.biases) for layer in model.kernels)
    if model.is_quantized:
        output = {"kind": "quantized", "bits": model.out_weights.bits, "scale": model.out_weights.scale}
    else:
        output = {"kind": "float64"}
    return {
        "architecture": model.arch.to_dict(),
        "n_classes": model.arch.n_classes,
        "class_names": model.class_names,
        "normalization": model.normalization,
        "biases_present": bool(biases_present),
        "output": output,
        "provenance": model.provenance,
    }


def dumps(model: LBCNN) -> bytes:
    header = json.dumps(_header(model), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [_PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(header)), header]
    parts += [pack_signs(layer.weights) for layer in model.kernels]
    if any(np.any(layer.biases) for layer in model.kernels):
        parts += [layer.biases.astype("<f8").tobytes() for layer in model.kernels]
    if model.is_quantized:
        qw = model.out_weights
        parts.append(struct.pack("<d", qw.scale))
        parts.append(pack_ints(qw.q, qw.bits))
    else:
        parts.append(np.ascontiguousarray(model.out_weights, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_model(model: LBCNN, path) -> None:
    data = dumps(model)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _parse(raw: bytes):
    """Validate framing and checksum; return (header, sizes, payload offset)."""
    if len(raw) < _PREAMBLE.size + 4:
        raise TruncatedFileError(f"file is only {len(raw)} bytes")
    magic, version, hlen = _PREAMBLE.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"format version {version} (supported: {FORMAT_VERSION})")
    start = _PREAMBLE.size
    if start + hlen + 4 > len(raw):
        raise TruncatedFileError("file ends inside the header")
    try:
        header = json.loads(raw[start:start + hlen].decode("utf-8"))
        sizes = _section_sizes(header)
    except (ValueError, KeyError, TypeError, ModelFormatError) as exc:
        header, sizes, problem = None, None, exc
    expected = None
    if sizes is not None:
        expected = start + hlen + sum(sizes["kernels"]) + sizes["biases"] + sizes["output"] + 4
        if len(raw) < expected:
            raise TruncatedFileError(f"expected {expected} bytes, file has {len(raw)}")
    (stored,) = struct.unpack_from("<I", raw, len(raw) - 4)
    if zlib.crc32(raw[:-4]) != stored:
        raise ChecksumError("CRC-32 mismatch")
    if header is None:
        raise ModelFormatError(f"unreadable header: {problem}")
    if len(raw) != expected:
        raise ModelFormatError(f"{len(raw) - expected} unexpected trailing bytes")
    return header, sizes, start + hlen


def loads(raw: bytes) -> LBCNN:
    header, sizes, pos = _parse(raw)
    arch = sizes["arch"]
    layers_w = []
    for nbytes, m, c in zip(sizes["kernels"], arch.multipliers, arch.in_channels()):
        layers_w.append(unpack_signs(raw[pos:pos + nbytes], (m, c, 3, 3)))
        pos += nbytes
    biases = [None] * len(layers_w)
    if header["biases_present"]:
        for i, (m, c) in enumerate(zip(arch.multipliers, arch.in_channels())):
            biases[i] = np.frombuffer(raw, dtype="<f8", count=m * c, offset=pos).astype(np.float64)
            pos += 8 * m * c
    kernels = KernelSet([KernelLayer(w, b) for w, b in zip(layers_w, biases)])
    shape = (arch.n_features, arch.n_classes)
    out = header["output"]
    if out["kind"] == "float64":
        weights = np.frombuffer(raw, dtype="<f8", count=shape[0] * shape[1], offset=pos)
        weights = weights.astype(np.float64).reshape(shape)
    else:
        (scale,) = struct.unpack_from("<d", raw, pos)
        bits = int(out["bits"])
        q = unpack_ints(raw[pos + 8:pos + sizes["output"]], shape[0] * shape[1], bits)
        try:
            weights = QuantizedWeights(q.reshape(shape), scale, bits)
        except ValueError as exc:
            raise ModelFormatError(str(exc)) from None
    return LBCNN(
        arch,
        kernels,
        weights,
        class_names=header.get("class_names"),
        normalization=header.get("normalization", "divide_255"),
        provenance=header.get("provenance") or {},
    )


def load_model(path) -> LBCNN:
    with open(path, "rb") as fh:
        return loads(fh.read())


def inspect(path) -> dict:
    """Header plus derived sizes; payload sections are validated but not decoded."""
    with open(path, "rb") as fh:
        raw = fh.read()
    header, sizes, _ = _parse(raw)
    arch = sizes["arch"]
    conv_bits, elm_bits = param_bits(arch)
    out = header["output"]
    stored_out_bits = arch.n_features * arch.n_classes * (
        int(out["bits"]) if out["kind"] == "quantized" else 64
    )
    summary = f"conv {conv_bits / 1000:g} kbit, output {elm_bits / 1000:g} kbit"
    if out["kind"] == "quantized":
        summary += f"; quantized to {out['bits']} bits, scale {out['scale']:.6g}"
    return {
        "header": header,
        "format_version": FORMAT_VERSION,
        "file_bytes": len(raw),
        "n_features": arch.n_features,
        "expansion_factor": arch.expansion_factor,
        "param_bits": {"conv_bits": conv_bits, "elm_bits": elm_bits},
        "stored_output_bits": stored_out_bits,
        "kernel_section_bytes": sizes["kernels"],
        "summary": summary,
    }
