"""Convolution, pooling and activation primitives on NHWC numpy arrays.

All convolutions are cross-correlations with 'same' padding semantics:
output spatial size is ceil(input / stride) and the total pad of
max((out - 1) * stride + k - in, 0) is split with the smaller half in
front.  Kernels are stored (kh, kw, c_in, c_out); transpose convolutions
keep (kh, kw, c_in, c_out) of the *forward* mapping, i.e. c_in is the
small side.

A stride-2 transpose convolution here is defined as the exact adjoint of
the stride-2 'same' convolution that maps (2h, 2w) down to (h, w).  Its
forward pass is that convolution's input gradient and vice versa, which
keeps the pair adjoint by construction instead of by bookkeeping.

The three private cores take explicit pads and are shared between the
forward and backward passes.  They are dtype-agnostic so gradient checks
can run in float64.
"""

import numpy as np
from scipy.special import expit

from ..errors import ShapeMismatch

__all__ = [
    "conv2d_backward",
    "conv2d_forward",
    "maxpool2x2_backward",
    "maxpool2x2_forward",
    "relu",
    "relu_grad_mask",
    "sigmoid",
    "tconv2d_backward",
    "tconv2d_forward",
]


def _pads_same(size: int, k: int, stride: int) -> tuple[int, int, int]:
    """Return (out_size, pad_begin, pad_end) for 'same' padding."""
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    beg = total // 2
    return out, beg, total - beg


def _check_conv_shapes(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None) -> None:
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeMismatch(f"need 4-d input and kernel, got {x.shape} and {kernel.shape}")
    if x.shape[3] != kernel.shape[2]:
        raise ShapeMismatch(
            f"input has {x.shape[3]} channels but kernel expects {kernel.shape[2]}"
        )
    if bias is not None and bias.shape != (kernel.shape[3],):
        raise ShapeMismatch(f"bias shape {bias.shape} does not match {kernel.shape[3]} filters")


def _im2col(
    x: np.ndarray,
    kernel_hw: tuple[int, int],
    stride: tuple[int, int],
    pads: tuple[tuple[int, int], tuple[int, int]],
) -> tuple[np.ndarray, tuple[int, int]]:
    """Patch matrix (b*oh*ow, kh*kw*ci) of x under the given geometry.

    Column blocks follow tap order (kh, kw) with channels innermost, the
    same flattening as kernel.reshape(-1, co).
    """
    b, h, w, ci = x.shape
    kh, kw = kernel_hw
    (pt, pb), (pl, pr) = pads
    sh, sw = stride
    oh = (h + pt + pb - kh) // sh + 1
    ow = (w + pl + pr - kw) // sw + 1
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    cols = np.empty((b * oh * ow, kh * kw * ci), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, i : i + sh * (oh - 1) + 1 : sh, j : j + sw * (ow - 1) + 1 : sw, :]
            tap = i * kw + j
            cols[:, tap * ci : (tap + 1) * ci] = xs.reshape(-1, ci)
    return cols, (oh, ow)


def _conv_fwd_shift(
    x: np.ndarray,
    kernel: np.ndarray,
    pads: tuple[tuple[int, int], tuple[int, int]],
) -> np.ndarray:
    """Stride-1 convolution by contracting channels first, then shift-adding.

    One GEMM (b*h*w, ci) @ (ci, kh*kw*co) reads x a single time; the
    per-tap planes are then summed under the pad-implied shifts.  Cheaper
    than im2col when ci greatly exceeds co.
    """
    b, h, w, ci = x.shape
    kh, kw, _, co = kernel.shape
    (pt, pb), (pl, pr) = pads
    oh = h + pt + pb - kh + 1
    ow = w + pl + pr - kw + 1
    z = x.reshape(-1, ci) @ kernel.transpose(2, 0, 1, 3).reshape(ci, -1)
    zp = np.pad(z.reshape(b, h, w, kh * kw, co), ((0, 0), (pt, pb), (pl, pr), (0, 0), (0, 0)))
    acc = np.zeros((b, oh, ow, co), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            acc += zp[:, i : i + oh, j : j + ow, i * kw + j, :]
    return acc


def _conv_fwd_core(
    x: np.ndarray,
    kernel: np.ndarray,
    stride: tuple[int, int],
    pads: tuple[tuple[int, int], tuple[int, int]],
) -> np.ndarray:
    """Cross-correlate x (b, h, w, ci) with kernel (kh, kw, ci, co).

    Two equivalent strategies, picked by channel geometry: im2col plus a
    single GEMM, or channel contraction followed by shift-adds.  Both
    accumulate each output in one pass, so results are deterministic.
    """
    b = x.shape[0]
    kh, kw, ci, co = kernel.shape
    if stride == (1, 1) and ci >= 8 * co:
        return _conv_fwd_shift(x, kernel, pads)
    cols, (oh, ow) = _im2col(x, (kh, kw), stride, pads)
    return (cols @ kernel.reshape(-1, co)).reshape(b, oh, ow, co)


def _flip_pads(
    kernel_hw: tuple[int, int], pads: tuple[tuple[int, int], tuple[int, int]]
) -> tuple[tuple[int, int], tuple[int, int]]:
    (pt, pb), (pl, pr) = pads
    kh, kw = kernel_hw
    return ((kh - 1 - pt, kh - 1 - pb), (kw - 1 - pl, kw - 1 - pr))


def _conv_grad_input_core(
    gy: np.ndarray,
    kernel: np.ndarray,
    stride: tuple[int, int],
    pads: tuple[tuple[int, int], tuple[int, int]],
    in_hw: tuple[int, int],
) -> np.ndarray:
    """Adjoint of _conv_fwd_core with respect to its input.

    At stride 1 this is itself a convolution of gy with the spatially
    flipped, channel-swapped kernel under complementary pads, so it
    reuses the forward core.  Strided cases scatter one GEMM per tap
    back onto the padded grid; a single tap's destinations never overlap.
    """
    b, oh, ow, co = gy.shape
    kh, kw, ci, _ = kernel.shape
    if stride == (1, 1):
        kflip = np.ascontiguousarray(kernel[::-1, ::-1].transpose(0, 1, 3, 2))
        return _conv_fwd_core(gy, kflip, (1, 1), _flip_pads((kh, kw), pads))
    (pt, pb), (pl, pr) = pads
    sh, sw = stride
    h, w = in_hw
    gxp = np.zeros((b, h + pt + pb, w + pl + pr, ci), dtype=gy.dtype)
    g2 = gy.reshape(-1, co)
    for i in range(kh):
        for j in range(kw):
            contrib = (g2 @ kernel[i, j].T).reshape(b, oh, ow, ci)
            gxp[:, i : i + sh * (oh - 1) + 1 : sh, j : j + sw * (ow - 1) + 1 : sw, :] += contrib
    return gxp[:, pt : pt + h, pl : pl + w, :]


def _conv_grad_kernel_core(
    x: np.ndarray,
    gy: np.ndarray,
    stride: tuple[int, int],
    pads: tuple[tuple[int, int], tuple[int, int]],
    kernel_hw: tuple[int, int],
) -> np.ndarray:
    """Adjoint of _conv_fwd_core with respect to its kernel.

    Contracts batch and spatial dims via whichever patch matrix is
    smaller: patches of x (always valid) or, at stride 1, patches of gy
    under the complementary pads, which flips the tap order.
    """
    ci = x.shape[3]
    co = gy.shape[3]
    kh, kw = kernel_hw
    if stride == (1, 1) and co < ci:
        gcols, _ = _im2col(gy, kernel_hw, (1, 1), _flip_pads(kernel_hw, pads))
        gk = (x.reshape(-1, ci).T @ gcols).reshape(ci, kh, kw, co)
        return np.ascontiguousarray(gk[:, ::-1, ::-1, :].transpose(1, 2, 0, 3))
    cols, _ = _im2col(x, kernel_hw, stride, pads)
    return (cols.T @ gy.reshape(-1, co)).reshape(kh, kw, ci, co)


def _same_pads_2d(
    h: int, w: int, kh: int, kw: int, stride: tuple[int, int]
) -> tuple[tuple[int, int], tuple[int, int], tuple[int, int]]:
    oh, pt, pb = _pads_same(h, kh, stride[0])
    ow, pl, pr = _pads_same(w, kw, stride[1])
    return (oh, ow), (pt, pb), (pl, pr)


def conv2d_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None) -> np.ndarray:
    """Stride-1 'same' convolution: (b, h, w, ci) -> (b, h, w, co)."""
    _check_conv_shapes(x, kernel, bias)
    kh, kw = kernel.shape[:2]
    _, ph, pw = _same_pads_2d(x.shape[1], x.shape[2], kh, kw, (1, 1))
    y = _conv_fwd_core(x, kernel, (1, 1), (ph, pw))
    if bias is not None:
        y += bias
    return y


def conv2d_backward(
    x: np.ndarray, kernel: np.ndarray, grad_y: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv2d_forward: returns (grad_x, grad_kernel, grad_bias)."""
    kh, kw = kernel.shape[:2]
    _, ph, pw = _same_pads_2d(x.shape[1], x.shape[2], kh, kw, (1, 1))
    gx = _conv_grad_input_core(grad_y, kernel, (1, 1), (ph, pw), x.shape[1:3])
    gk = _conv_grad_kernel_core(x, grad_y, (1, 1), (ph, pw), (kh, kw))
    gb = grad_y.sum(axis=(0, 1, 2))
    return gx, gk, gb


def _tconv_geometry(kernel: np.ndarray, out_hw: tuple[int, int]):
    """Pads and swapped-channel kernel of the virtual downsampling conv."""
    kh, kw = kernel.shape[:2]
    (oh, ow), ph, pw = _same_pads_2d(out_hw[0], out_hw[1], kh, kw, (2, 2))
    return kernel.transpose(0, 1, 3, 2), (ph, pw), (oh, ow)


def tconv2d_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None) -> np.ndarray:
    """Stride-2 'same' transpose convolution: (b, h, w, ci) -> (b, 2h, 2w, co).

    kernel is (kh, kw, ci, co); bias is per output channel.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeMismatch(f"need 4-d input and kernel, got {x.shape} and {kernel.shape}")
    if x.shape[3] != kernel.shape[2]:
        raise ShapeMismatch(
            f"input has {x.shape[3]} channels but kernel expects {kernel.shape[2]}"
        )
    if bias is not None and bias.shape != (kernel.shape[3],):
        raise ShapeMismatch(f"bias shape {bias.shape} does not match {kernel.shape[3]} filters")
    out_hw = (2 * x.shape[1], 2 * x.shape[2])
    kv, pads, down_hw = _tconv_geometry(kernel, out_hw)
    if down_hw != x.shape[1:3]:
        raise ShapeMismatch(f"stride-2 geometry maps {out_hw} to {down_hw}, not {x.shape[1:3]}")
    y = _conv_grad_input_core(x, kv, (2, 2), pads, out_hw)
    if bias is not None:
        y += bias
    return y


def tconv2d_backward(
    x: np.ndarray, kernel: np.ndarray, grad_y: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of tconv2d_forward: returns (grad_x, grad_kernel, grad_bias)."""
    out_hw = grad_y.shape[1:3]
    kv, pads, _ = _tconv_geometry(kernel, out_hw)
    gx = _conv_fwd_core(grad_y, kv, (2, 2), pads)
    gk = _conv_grad_kernel_core(grad_y, x, (2, 2), pads, kernel.shape[:2]).transpose(0, 1, 3, 2)
    gb = grad_y.sum(axis=(0, 1, 2))
    return gx, gk, gb


def maxpool2x2_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Non-overlapping 2x2 max pool; h and w must be even.

    Returns (pooled, argmax) where argmax holds the flat within-window
    index in row-major window order.  Ties go to the first occurrence,
    which pins the subgradient routing.
    """
    b, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeMismatch(f"2x2 pool needs even spatial dims, got {(h, w)}")
    xr = x.reshape(b, h // 2, 2, w // 2, 2, c)
    a00, a01 = xr[:, :, 0, :, 0, :], xr[:, :, 0, :, 1, :]
    a10, a11 = xr[:, :, 1, :, 0, :], xr[:, :, 1, :, 1, :]
    top = np.maximum(a00, a01)
    bot = np.maximum(a10, a11)
    y = np.maximum(top, bot)
    # >= at every stage resolves ties toward the lower window index
    idx = np.where(top >= bot, np.where(a00 >= a01, 0, 1), np.where(a10 >= a11, 2, 3))
    return y, idx.astype(np.int64)


def maxpool2x2_backward(idx: np.ndarray, x_shape: tuple, grad_y: np.ndarray) -> np.ndarray:
    """Route grad_y back to the argmax positions recorded by the forward pass."""
    b, h, w, c = x_shape
    gw = np.zeros((b, h // 2, w // 2, 4, c), dtype=grad_y.dtype)
    np.put_along_axis(gw, idx[:, :, :, None, :], grad_y[:, :, :, None, :], axis=3)
    return gw.reshape(b, h // 2, w // 2, 2, 2, c).transpose(0, 1, 3, 2, 4, 5).reshape(b, h, w, c)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_grad_mask(x: np.ndarray) -> np.ndarray:
    """Subgradient mask of relu; zero at the kink."""
    return (x > 0).astype(x.dtype)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)
