"""Post-training int8 quantization and the integer inference path.

Per-tensor symmetric scales, every scale an exact power of two stored as
an exponent.  A tensor with max-abs m gets the smallest exponent e with
m <= 128 * 2^e, so the one value that would round to 128 clamps to 127.
Weights quantize against their own max-abs, activations against maxima
observed over a calibration set.  Inputs are binary, so they enter the
integer domain unchanged at exponent 0.

The integer forward pass accumulates convolutions exactly.  When the
sum of |weight| * 128 over any output channel's taps stays within 2^24,
every partial sum a float32 GEMM can form is an integer float32
represents exactly, so the fast float convolution cores give the exact
integer result regardless of accumulation order.  Kernels that exceed
the bound (possible only with pathological weights) fall back to one
GEMM per tap, each bounded by 128 * 128 * 128 = 2^21, summed in
float64.  Either way the result is cast to int64 before bias add, relu,
and the requantizing shift, so inference is bit-exact across runs and
platforms until the final dequantized sigmoid.
"""

import json
import logging
import math
import struct
import zlib
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import expit

from .errors import (
    AccumulatorOverflow,
    ChecksumMismatch,
    EmptyCalibrationSet,
    ModelFormatError,
    ShapeMismatch,
    VersionMismatch,
)
from .nn import layers as L
from .nn.model import Activation, CaeModel, LayerKind, LayerSpec

logger = logging.getLogger(__name__)

QMAGIC = b"QCAE"
QFORMAT_VERSION = 1
DEGENERATE_EXPONENT = -15
_ACC_LIMIT = 1 << 31
_EXACT_F32_LIMIT = 1 << 24

__all__ = [
    "CalibrationStats",
    "QuantLayer",
    "QuantModel",
    "calibrate",
    "forward_quant",
    "load_qmodel",
    "quantize",
    "save_qmodel",
    "scale_exponent",
]


def scale_exponent(max_abs: float) -> int:
    """Smallest e with max_abs <= 128 * 2^e; -15 for an all-zero tensor."""
    if max_abs < 0 or not math.isfinite(max_abs):
        raise ShapeMismatch(f"max_abs must be finite and non-negative, got {max_abs}")
    if max_abs == 0.0:
        logger.warning("degenerate scale: max_abs 0, falling back to exponent %d",
                       DEGENERATE_EXPONENT)
        return DEGENERATE_EXPONENT
    mantissa, exp = math.frexp(max_abs)
    return exp - 8 if mantissa == 0.5 else exp - 7


def _round_half_away(v: np.ndarray) -> np.ndarray:
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def _quantize_tensor(values: np.ndarray, exponent: int, bits: int) -> np.ndarray:
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    q = np.clip(_round_half_away(values.astype(np.float64) * 2.0**-exponent), lo, hi)
    return q.astype(np.int8 if bits == 8 else np.int32)


@dataclass(frozen=True)
class CalibrationStats:
    """Max-abs of every layer's post-activation output over the calibration set."""

    layer_max_abs: tuple[float, ...]
    block_count: int

    def __post_init__(self):
        if self.block_count < 1:
            raise EmptyCalibrationSet("calibration needs at least one block")
        if any(m < 0 or not math.isfinite(m) for m in self.layer_max_abs):
            raise ShapeMismatch("calibration maxima must be finite and non-negative")


def calibrate(model: CaeModel, x: np.ndarray, chunk: int = 256) -> CalibrationStats:
    """Track per-layer output maxima of the float model over blocks x."""
    if x is None or x.ndim != 4 or x.shape[0] == 0:
        raise EmptyCalibrationSet("calibration needs at least one block")
    maxima = [0.0] * len(model.specs)
    for start in range(0, x.shape[0], chunk):
        a = x[start : start + chunk]
        for i, spec in enumerate(model.specs):
            if spec.kind is LayerKind.POOL:
                a, _ = L.maxpool2x2_forward(a)
            elif spec.kind is LayerKind.CONV:
                a = model._activate(spec, L.conv2d_forward(a, model.kernels[i], model.biases[i]))
            else:
                a = model._activate(spec, L.tconv2d_forward(a, model.kernels[i], model.biases[i]))
            maxima[i] = max(maxima[i], float(np.abs(a).max()))
    return CalibrationStats(tuple(maxima), x.shape[0])


@dataclass(frozen=True)
class QuantLayer:
    kernel: np.ndarray
    bias: np.ndarray
    weight_exp: int
    input_exp: int
    output_exp: int | None

    @cached_property
    def gemm_exact(self) -> bool:
        """Whether any-order f32 tap accumulation provably yields exact sums."""
        per_out = int(np.abs(self.kernel.astype(np.int64)).sum(axis=(0, 1, 2)).max())
        return per_out * 128 <= _EXACT_F32_LIMIT


class QuantModel:
    """Int8 model mirror; layers aligned with specs, None at pools."""

    def __init__(
        self,
        specs: tuple[LayerSpec, ...],
        input_shape: tuple[int, int, int],
        layers: list,
    ):
        if len(layers) != len(specs):
            raise ShapeMismatch("one quant layer slot per spec required")
        self.specs = specs
        self.input_shape = input_shape
        self.layers = layers

    def forward(self, x: np.ndarray) -> np.ndarray:
        return forward_quant(self, x)


def quantize(model: CaeModel, stats: CalibrationStats) -> QuantModel:
    """Freeze the float model into int8 weights and power-of-two exponents."""
    if len(stats.layer_max_abs) != len(model.specs):
        raise ShapeMismatch("calibration stats do not cover every layer")
    layers: list = []
    in_exp = 0
    for i, spec in enumerate(model.specs):
        if not spec.has_params():
            layers.append(None)
            continue
        w = model.kernels[i]
        w_exp = scale_exponent(float(np.abs(w).max()))
        out_exp = None
        if spec.activation is not Activation.SIGMOID:
            out_exp = scale_exponent(stats.layer_max_abs[i])
        layers.append(
            QuantLayer(
                kernel=_quantize_tensor(w, w_exp, bits=8),
                bias=_quantize_tensor(model.biases[i], w_exp + in_exp, bits=32),
                weight_exp=w_exp,
                input_exp=in_exp,
                output_exp=out_exp,
            )
        )
        if out_exp is not None:
            in_exp = out_exp
    return QuantModel(model.specs, model.input_shape, layers)


def _int_conv_same(x8: np.ndarray, w8: np.ndarray, exact: bool) -> np.ndarray:
    """Exact stride-1 same convolution of int8 tensors, returned as int64."""
    b, h, w, ci = x8.shape
    kh, kw, _, co = w8.shape
    _, (pt, pb), (pl, pr) = L._same_pads_2d(h, w, kh, kw, (1, 1))
    pads = ((pt, pb), (pl, pr))
    if exact:
        acc = L._conv_fwd_core(x8.astype(np.float32), w8.astype(np.float32), (1, 1), pads)
        return acc.astype(np.int64)
    xp = np.pad(x8.astype(np.float32), ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    wf = w8.astype(np.float32)
    acc = np.zeros((b * h * w, co), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            acc += xp[:, i : i + h, j : j + w, :].reshape(-1, ci) @ wf[i, j]
    return acc.astype(np.int64).reshape(b, h, w, co)


def _int_tconv(x8: np.ndarray, w8: np.ndarray, exact: bool) -> np.ndarray:
    """Exact stride-2 same transpose convolution of int8 tensors, as int64."""
    b, h, w, ci = x8.shape
    kh, kw, _, co = w8.shape
    oh, ow = 2 * h, 2 * w
    _, (pt, pb), (pl, pr) = L._same_pads_2d(oh, ow, kh, kw, (2, 2))
    kv = w8.transpose(0, 1, 3, 2)
    if exact:
        y = L._conv_grad_input_core(
            x8.astype(np.float32),
            np.ascontiguousarray(kv, dtype=np.float32),
            (2, 2),
            ((pt, pb), (pl, pr)),
            (oh, ow),
        )
        return y.astype(np.int64)
    kvf = kv.astype(np.float32)
    xf = x8.astype(np.float32).reshape(-1, ci)
    accp = np.zeros((b, oh + pt + pb, ow + pl + pr, co), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            contrib = (xf @ kvf[i, j].T).reshape(b, h, w, co)
            accp[:, i : i + 2 * (h - 1) + 1 : 2, j : j + 2 * (w - 1) + 1 : 2, :] += contrib
    return accp[:, pt : pt + oh, pl : pl + ow, :].astype(np.int64)


def _int_maxpool(x8: np.ndarray) -> np.ndarray:
    b, h, w, c = x8.shape
    xr = x8.reshape(b, h // 2, 2, w // 2, 2, c)
    return np.maximum(
        np.maximum(xr[:, :, 0, :, 0, :], xr[:, :, 0, :, 1, :]),
        np.maximum(xr[:, :, 1, :, 0, :], xr[:, :, 1, :, 1, :]),
    )


def _requant_shift(acc: np.ndarray, shift: int) -> np.ndarray:
    """acc * 2^-shift with round-half-away-from-zero, clamped to int8 range."""
    if shift > 0:
        rounding = 1 << (shift - 1)
        if acc.min(initial=0) >= 0:
            # post-relu values: half-up equals half-away, one shift suffices
            q = acc + rounding
            q >>= shift
        else:
            q = np.sign(acc) * ((np.abs(acc) + rounding) >> shift)
    elif shift < 0:
        q = acc << -shift
    else:
        q = acc.copy()
    np.minimum(q, 127, out=q)
    np.maximum(q, -128, out=q)
    return q.astype(np.int8)


def forward_quant(qmodel: QuantModel, x: np.ndarray) -> np.ndarray:
    """Integer forward pass; float only at the final dequantized sigmoid."""
    if x.ndim != 4 or x.shape[1:] != qmodel.input_shape:
        raise ShapeMismatch(
            f"expected (batch, {', '.join(map(str, qmodel.input_shape))}), got {x.shape}"
        )
    a = np.rint(x).astype(np.int8)
    for i, spec in enumerate(qmodel.specs):
        if spec.kind is LayerKind.POOL:
            a = _int_maxpool(a)
            continue
        ql = qmodel.layers[i]
        if spec.kind is LayerKind.CONV:
            acc = _int_conv_same(a, ql.kernel, ql.gemm_exact)
        else:
            acc = _int_tconv(a, ql.kernel, ql.gemm_exact)
        acc += ql.bias
        peak = max(int(acc.max(initial=0)), -int(acc.min(initial=0)))
        if peak >= _ACC_LIMIT:
            raise AccumulatorOverflow(f"layer {i}: |accumulator| {peak} >= 2^31")
        acc_exp = ql.weight_exp + ql.input_exp
        if spec.activation is Activation.SIGMOID:
            return expit(acc.astype(np.float64) * 2.0**acc_exp).astype(np.float32)
        np.maximum(acc, 0, out=acc)
        a = _requant_shift(acc, ql.output_exp - acc_exp)
    return a


def _qheader(qmodel: QuantModel) -> dict:
    layers = []
    for spec, ql in zip(qmodel.specs, qmodel.layers):
        entry = {
            "kind": spec.kind.value,
            "filters": spec.filters,
            "kernel": spec.kernel,
            "activation": spec.activation.value,
        }
        if ql is not None:
            entry.update(
                kernel_shape=list(ql.kernel.shape),
                weight_exp=ql.weight_exp,
                input_exp=ql.input_exp,
                output_exp=ql.output_exp,
            )
        layers.append(entry)
    return {"input_shape": list(qmodel.input_shape), "layers": layers}


def save_qmodel(qmodel: QuantModel, path) -> None:
    header = json.dumps(_qheader(qmodel), sort_keys=True, separators=(",", ":")).encode()
    parts = [QMAGIC, struct.pack("<II", QFORMAT_VERSION, len(header)), header]
    for ql in qmodel.layers:
        if ql is not None:
            parts.append(np.ascontiguousarray(ql.kernel, dtype=np.int8).tobytes())
            parts.append(np.ascontiguousarray(ql.bias, dtype="<i4").tobytes())
    body = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(body + struct.pack("<I", zlib.crc32(body)))


def _take(buf: bytes, offset: int, count: int, what: str) -> tuple[bytes, int]:
    if offset + count > len(buf):
        raise ChecksumMismatch(f"file truncated inside {what}")
    return buf[offset : offset + count], offset + count


def load_qmodel(path) -> QuantModel:
    with open(path, "rb") as fh:
        buf = fh.read()
    raw, off = _take(buf, 0, 4, "magic")
    if raw != QMAGIC:
        raise ModelFormatError(f"bad magic {raw!r}")
    raw, off = _take(buf, off, 8, "version")
    version, header_len = struct.unpack("<II", raw)
    if version != QFORMAT_VERSION:
        raise VersionMismatch(f"format version {version}, expected {QFORMAT_VERSION}")
    raw, off = _take(buf, off, header_len, "header")
    try:
        header = json.loads(raw.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"unreadable header: {exc}") from None
    specs = []
    layers: list = []
    for entry in header["layers"]:
        spec = LayerSpec(
            LayerKind(entry["kind"]),
            entry["filters"],
            entry["kernel"],
            Activation(entry["activation"]),
        )
        specs.append(spec)
        if not spec.has_params():
            layers.append(None)
            continue
        shape = tuple(entry["kernel_shape"])
        count = int(np.prod(shape))
        raw, off = _take(buf, off, count, "kernel payload")
        kernel = np.frombuffer(raw, dtype=np.int8).reshape(shape).copy()
        raw, off = _take(buf, off, 4 * shape[-1], "bias payload")
        bias = np.frombuffer(raw, dtype="<i4").astype(np.int32)
        layers.append(
            QuantLayer(kernel, bias, entry["weight_exp"], entry["input_exp"], entry["output_exp"])
        )
    raw, off = _take(buf, off, 4, "checksum")
    if off != len(buf):
        raise ModelFormatError(f"{len(buf) - off} trailing bytes")
    (stored,) = struct.unpack("<I", raw)
    if zlib.crc32(buf[: off - 4]) != stored:
        raise ChecksumMismatch("crc32 mismatch")
    return QuantModel(tuple(specs), tuple(header["input_shape"]), layers)
