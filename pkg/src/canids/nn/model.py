"""Convolutional autoencoder over CAN-ID blocks, assembled from the layer cores.

The fixed topology is conv(f0) -> pool -> conv(f1) -> pool -> tconv(f1)
-> tconv(f0) -> conv(1, sigmoid), all kernels 3x3, relu in between.  With
f = (128, 64) on a (100, 12, 1) input this is the detector model; smaller
filter pairs and inputs are used by the gradient checks.
"""

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..errors import MissingIntermediates, ShapeMismatch
from . import layers as L

logger = logging.getLogger(__name__)

DEFAULT_FILTERS = (128, 64)
DEFAULT_INPUT_SHAPE = (100, 12, 1)

# Total reported for the original build of the detector topology.  Summing
# the stated layers gives 187,009, which is 70 short and cannot be closed
# from the layer shapes alone, so the difference is logged rather than
# padded away.
REFERENCE_PARAM_COUNT = 187_079


class LayerKind(Enum):
    CONV = "conv"
    TCONV = "tconv"
    POOL = "pool"


class Activation(Enum):
    RELU = "relu"
    SIGMOID = "sigmoid"
    NONE = "none"


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    filters: int = 0
    kernel: int = 0
    activation: Activation = Activation.NONE

    def has_params(self) -> bool:
        return self.kind is not LayerKind.POOL


def cae_topology(filters: tuple[int, int], out_channels: int) -> tuple[LayerSpec, ...]:
    """Encoder/decoder layer list for a two-level autoencoder."""
    f0, f1 = filters
    return (
        LayerSpec(LayerKind.CONV, f0, 3, Activation.RELU),
        LayerSpec(LayerKind.POOL),
        LayerSpec(LayerKind.CONV, f1, 3, Activation.RELU),
        LayerSpec(LayerKind.POOL),
        LayerSpec(LayerKind.TCONV, f1, 3, Activation.RELU),
        LayerSpec(LayerKind.TCONV, f0, 3, Activation.RELU),
        LayerSpec(LayerKind.CONV, out_channels, 3, Activation.SIGMOID),
    )


class CaeModel:
    """Parameter container plus forward/backward over the layer list.

    kernels[i] / biases[i] are None for pool layers.  Weights live in
    float32 for training; astype() produces a higher-precision copy for
    numeric checks.
    """

    def __init__(
        self,
        specs: tuple[LayerSpec, ...],
        input_shape: tuple[int, int, int],
        kernels: list,
        biases: list,
    ):
        if len(kernels) != len(specs) or len(biases) != len(specs):
            raise ShapeMismatch("one kernel/bias slot per layer spec required")
        self.specs = specs
        self.input_shape = input_shape
        self.kernels = kernels
        self.biases = biases

    def astype(self, dtype) -> "CaeModel":
        ks = [None if k is None else k.astype(dtype) for k in self.kernels]
        bs = [None if b is None else b.astype(dtype) for b in self.biases]
        return CaeModel(self.specs, self.input_shape, ks, bs)

    def _check_input(self, x: np.ndarray) -> None:
        if x.ndim != 4 or x.shape[1:] != self.input_shape:
            raise ShapeMismatch(
                f"expected (batch, {', '.join(map(str, self.input_shape))}), got {x.shape}"
            )

    def _activate(self, spec: LayerSpec, z: np.ndarray) -> np.ndarray:
        if spec.activation is Activation.RELU:
            return L.relu(z)
        if spec.activation is Activation.SIGMOID:
            return L.sigmoid(z)
        return z

    def forward(self, x: np.ndarray, record: bool = False):
        """Run the net; with record=True also return the backward tape."""
        self._check_input(x)
        tape = [] if record else None
        for i, spec in enumerate(self.specs):
            if spec.kind is LayerKind.POOL:
                y, idx = L.maxpool2x2_forward(x)
                if record:
                    tape.append({"idx": idx, "x_shape": x.shape})
                x = y
                continue
            if spec.kind is LayerKind.CONV:
                z = L.conv2d_forward(x, self.kernels[i], self.biases[i])
            else:
                z = L.tconv2d_forward(x, self.kernels[i], self.biases[i])
            y = self._activate(spec, z)
            if record:
                entry = {"x": x}
                if spec.activation is Activation.RELU:
                    entry["z"] = z
                elif spec.activation is Activation.SIGMOID:
                    entry["y"] = y
                tape.append(entry)
            x = y
        return (x, tape) if record else x

    def backward(self, tape, grad_out: np.ndarray) -> tuple[list, list]:
        """Walk the tape backwards; returns per-layer kernel and bias grads."""
        if tape is None or len(tape) != len(self.specs):
            raise MissingIntermediates("backward needs the tape from forward(record=True)")
        gk_all = [None] * len(self.specs)
        gb_all = [None] * len(self.specs)
        g = grad_out
        for i in range(len(self.specs) - 1, -1, -1):
            spec, entry = self.specs[i], tape[i]
            if spec.kind is LayerKind.POOL:
                g = L.maxpool2x2_backward(entry["idx"], entry["x_shape"], g)
                continue
            if spec.activation is Activation.RELU:
                g = g * L.relu_grad_mask(entry["z"])
            elif spec.activation is Activation.SIGMOID:
                y = entry["y"]
                g = g * y * (1.0 - y)
            if spec.kind is LayerKind.CONV:
                g, gk, gb = L.conv2d_backward(entry["x"], self.kernels[i], g)
            else:
                g, gk, gb = L.tconv2d_backward(entry["x"], self.kernels[i], g)
            gk_all[i], gb_all[i] = gk, gb
        return gk_all, gb_all


def count_params(model: CaeModel) -> int:
    total = 0
    for k, b in zip(model.kernels, model.biases):
        if k is not None:
            total += k.size + b.size
    return total


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all elements and its gradient wrt pred."""
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {target.shape}")
    diff = pred - target
    loss = float(np.mean(np.square(diff)))
    return loss, (2.0 / diff.size) * diff


def _glorot_uniform(rng: np.random.Generator, kh: int, kw: int, ci: int, co: int) -> np.ndarray:
    fan_in = kh * kw * ci
    fan_out = kh * kw * co
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(kh, kw, ci, co)).astype(np.float32)


def build_cae(
    seed: int,
    filters: tuple[int, int] = DEFAULT_FILTERS,
    input_shape: tuple[int, int, int] = DEFAULT_INPUT_SHAPE,
) -> CaeModel:
    """Fresh model with Glorot-uniform kernels and zero biases.

    Spatial dims must survive two 2x2 pools, i.e. be multiples of 4.
    """
    h, w, c = input_shape
    if h % 4 or w % 4:
        raise ShapeMismatch(f"input spatial dims must be multiples of 4, got {(h, w)}")
    rng = np.random.default_rng(seed)
    specs = cae_topology(filters, c)
    kernels: list = []
    biases: list = []
    ci = c
    for spec in specs:
        if not spec.has_params():
            kernels.append(None)
            biases.append(None)
            continue
        k = _glorot_uniform(rng, spec.kernel, spec.kernel, ci, spec.filters)
        kernels.append(k)
        biases.append(np.zeros(spec.filters, dtype=np.float32))
        ci = spec.filters
    model = CaeModel(specs, input_shape, kernels, biases)
    total = count_params(model)
    if (
        filters == DEFAULT_FILTERS
        and input_shape == DEFAULT_INPUT_SHAPE
        and total != REFERENCE_PARAM_COUNT
    ):
        logger.info(
            "parameter count %d differs from the reference total %d by %d",
            total,
            REFERENCE_PARAM_COUNT,
            total - REFERENCE_PARAM_COUNT,
        )
    logger.debug("built model: %d parameters", total)
    return model
