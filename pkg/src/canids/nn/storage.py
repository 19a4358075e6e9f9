"""Model file format: self-describing binary with a checksum trailer.

Layout: magic 'CAEM' | u32 version | u32 header length | header JSON
(sorted keys, utf-8) | parameter payload (little-endian float32, kernel
then bias per parameterised layer, in order) | u32 crc32 of everything
before the trailer.  All integers little-endian, so files load
identically on any host.
"""

import json
import struct
import zlib

import numpy as np

from ..errors import ChecksumMismatch, ModelFormatError, VersionMismatch
from .model import Activation, CaeModel, LayerKind, LayerSpec

MAGIC = b"CAEM"
FORMAT_VERSION = 1

__all__ = ["load_model", "save_model"]


def _header(model: CaeModel) -> dict:
    layers = []
    for spec in model.specs:
        layers.append(
            {
                "kind": spec.kind.value,
                "filters": spec.filters,
                "kernel": spec.kernel,
                "activation": spec.activation.value,
            }
        )
    shapes = [list(k.shape) for k in model.kernels if k is not None]
    return {"input_shape": list(model.input_shape), "layers": layers, "kernel_shapes": shapes}


def model_bytes(model: CaeModel) -> bytes:
    header = json.dumps(_header(model), sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(header)), header]
    for k, b in zip(model.kernels, model.biases):
        if k is not None:
            parts.append(np.ascontiguousarray(k, dtype="<f4").tobytes())
            parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_model(model: CaeModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(model_bytes(model))


def _take(buf: bytes, offset: int, count: int, what: str) -> tuple[bytes, int]:
    if offset + count > len(buf):
        raise ChecksumMismatch(f"file truncated inside {what}")
    return buf[offset : offset + count], offset + count


def load_model(path) -> CaeModel:
    with open(path, "rb") as fh:
        buf = fh.read()
    raw, off = _take(buf, 0, 4, "magic")
    if raw != MAGIC:
        raise ModelFormatError(f"bad magic {raw!r}")
    raw, off = _take(buf, off, 8, "version")
    version, header_len = struct.unpack("<II", raw)
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"format version {version}, expected {FORMAT_VERSION}")
    raw, off = _take(buf, off, header_len, "header")
    try:
        header = json.loads(raw.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"unreadable header: {exc}") from None
    specs = tuple(
        LayerSpec(
            LayerKind(layer["kind"]),
            layer["filters"],
            layer["kernel"],
            Activation(layer["activation"]),
        )
        for layer in header["layers"]
    )
    kernels: list = []
    biases: list = []
    shapes = iter(header["kernel_shapes"])
    for spec in specs:
        if not spec.has_params():
            kernels.append(None)
            biases.append(None)
            continue
        shape = tuple(next(shapes))
        count = int(np.prod(shape))
        raw, off = _take(buf, off, 4 * count, "kernel payload")
        kernels.append(np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32))
        raw, off = _take(buf, off, 4 * shape[-1], "bias payload")
        biases.append(np.frombuffer(raw, dtype="<f4").astype(np.float32))
    raw, off = _take(buf, off, 4, "checksum")
    if off != len(buf):
        raise ModelFormatError(f"{len(buf) - off} trailing bytes")
    (stored,) = struct.unpack("<I", raw)
    if zlib.crc32(buf[: off - 4]) != stored:
        raise ChecksumMismatch("crc32 mismatch")
    return CaeModel(specs, tuple(header["input_shape"]), kernels, biases)
