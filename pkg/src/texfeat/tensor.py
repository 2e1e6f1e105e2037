"""Dense rank-4 tensor substrate: 2-D convolution, average pooling, blob I/O.

All arrays are numpy float64 in (batch, channels, height, width) layout.
Operations here are pure functions: inputs are never mutated and outputs are
freshly allocated, so values can be shared freely across threads.

Convolution is implemented as cross-correlation (no kernel flip), the
deep-learning convention.  This matters for orientation-sensitive kernels
such as Sobel banks: the "0 degree" kernel responds to a dark-to-bright
step running left to right exactly as written.

Summation order is deterministic: the kernel taps are accumulated in a fixed
(row, column) loop and np.einsum is used without path optimization, so
repeated calls produce bitwise-identical results.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np


def as_tensor4(x, name: str = "tensor") -> np.ndarray:
    """Coerce to a float64 rank-4 array and validate basic shape invariants."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 4:
        raise ValueError(f"{name} must be rank-4 (batch, channels, height, width), got ndim={arr.ndim}")
    if min(arr.shape) < 1:
        raise ValueError(f"{name} has a zero-sized dimension: shape={arr.shape}")
    return arr


def check_finite(x: np.ndarray, name: str = "tensor") -> np.ndarray:
    if not np.isfinite(x).all():
        raise ValueError(f"{name} contains NaN or Inf values")
    return x


@dataclass(frozen=True)
class KernelBank:
    """A stack of convolution kernels plus their application geometry.

    weights has shape (out_channels, in_channels, kh, kw).  padding=None
    selects "same" padding for stride 1: pad = dilation*(k-1)//2 per side,
    which keeps odd-sized kernels resolution-preserving at any dilation.
    """

    weights: np.ndarray
    dilation: int = 1
    stride: int = 1
    padding: int | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 4:
            raise ValueError(f"kernel weights must be rank-4, got ndim={w.ndim}")
        object.__setattr__(self, "weights", w)
        if self.dilation < 1:
            raise ValueError(f"dilation must be >= 1, got {self.dilation}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.padding is not None and self.padding < 0:
            raise ValueError(f"padding must be >= 0, got {self.padding}")

    @property
    def pad(self) -> int:
        if self.padding is not None:
            return self.padding
        kh = self.weights.shape[2]
        return self.dilation * (kh - 1) // 2

    def with_weights(self, weights: np.ndarray) -> "KernelBank":
        return KernelBank(weights, dilation=self.dilation, stride=self.stride, padding=self.padding)


def _conv_geometry(x: np.ndarray, bank: KernelBank):
    out_ch, in_ch, kh, kw = bank.weights.shape
    batch, ch, h, w = x.shape
    if ch != in_ch:
        raise ValueError(f"channel mismatch: input has {ch} channels, kernels expect {in_ch}")
    d, s, p = bank.dilation, bank.stride, bank.pad
    eff_h = d * (kh - 1) + 1
    eff_w = d * (kw - 1) + 1
    hp, wp = h + 2 * p, w + 2 * p
    if eff_h > hp or eff_w > wp:
        raise ValueError(
            f"kernel receptive field {eff_h}x{eff_w} (dilation {d}) exceeds padded input {hp}x{wp}"
        )
    ho = (hp - eff_h) // s + 1
    wo = (wp - eff_w) // s + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"convolution produces empty output {ho}x{wo}")
    return d, s, p, kh, kw, ho, wo


def conv2d(x, bank: KernelBank) -> np.ndarray:
    """Cross-correlate a batch with a kernel bank (zero padding).

    output[b,o,r,c] = sum_{i,m,n} w[o,i,m,n] * x[b,i, r*stride + m*dilation - pad,
    c*stride + n*dilation - pad], out-of-range reads contributing 0.
    """
    x = as_tensor4(x, "input")
    d, s, p, kh, kw, ho, wo = _conv_geometry(x, bank)
    w = bank.weights
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    out = np.zeros((x.shape[0], w.shape[0], ho, wo))
    for m in range(kh):
        for n in range(kw):
            xs = xp[:, :, m * d : m * d + (ho - 1) * s + 1 : s, n * d : n * d + (wo - 1) * s + 1 : s]
            out += np.einsum("oi,bihw->bohw", w[:, :, m, n], xs)
    return out


def conv2d_backward(grad_out, x, bank: KernelBank):
    """Gradients of conv2d w.r.t. input and kernel weights.

    Returns (grad_x, grad_w) for upstream gradient grad_out of shape
    (batch, out_channels, ho, wo).
    """
    x = as_tensor4(x, "input")
    grad_out = as_tensor4(grad_out, "grad_out")
    d, s, p, kh, kw, ho, wo = _conv_geometry(x, bank)
    if grad_out.shape != (x.shape[0], bank.weights.shape[0], ho, wo):
        raise ValueError(
            f"grad_out shape {grad_out.shape} does not match conv output "
            f"{(x.shape[0], bank.weights.shape[0], ho, wo)}"
        )
    w = bank.weights
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    grad_xp = np.zeros_like(xp)
    grad_w = np.zeros_like(w)
    for m in range(kh):
        for n in range(kw):
            rows = slice(m * d, m * d + (ho - 1) * s + 1, s)
            cols = slice(n * d, n * d + (wo - 1) * s + 1, s)
            xs = xp[:, :, rows, cols]
            grad_w[:, :, m, n] = np.einsum("bohw,bihw->oi", grad_out, xs)
            grad_xp[:, :, rows, cols] += np.einsum("oi,bohw->bihw", w[:, :, m, n], grad_out)
    grad_x = grad_xp[:, :, p : p + x.shape[2], p : p + x.shape[3]] if p else grad_xp
    return grad_x, grad_w


def _pool_geometry(shape, window, stride, padding):
    s_h, s_t = window
    batch, ch, h, w = shape
    hp, wp = h + 2 * padding, w + 2 * padding
    if s_h > hp or s_t > wp:
        raise ValueError(f"pooling window {s_h}x{s_t} larger than padded input {hp}x{wp}")
    if s_h < 1 or s_t < 1 or stride < 1:
        raise ValueError(f"pooling window and stride must be >= 1, got {window}, stride {stride}")
    ho = (hp - s_h) // stride + 1
    wo = (wp - s_t) // stride + 1
    return s_h, s_t, ho, wo


def avg_pool(x, window, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Sliding-window mean over (height, width); window=(S, T)."""
    x = as_tensor4(x, "input")
    s_h, s_t, ho, wo = _pool_geometry(x.shape, window, stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    out = np.zeros((x.shape[0], x.shape[1], ho, wo))
    for u in range(s_h):
        for v in range(s_t):
            out += xp[:, :, u : u + (ho - 1) * stride + 1 : stride, v : v + (wo - 1) * stride + 1 : stride]
    out /= s_h * s_t
    return out


def avg_pool_backward(grad_out, in_shape, window, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Distribute pooled gradients back onto the input grid (transpose of avg_pool)."""
    grad_out = as_tensor4(grad_out, "grad_out")
    batch, ch, h, w = in_shape
    s_h, s_t, ho, wo = _pool_geometry(in_shape, window, stride, padding)
    if grad_out.shape != (batch, ch, ho, wo):
        raise ValueError(f"grad_out shape {grad_out.shape} does not match pooled output {(batch, ch, ho, wo)}")
    g = grad_out / (s_h * s_t)
    gxp = np.zeros((batch, ch, h + 2 * padding, w + 2 * padding))
    for u in range(s_h):
        for v in range(s_t):
            gxp[:, :, u : u + (ho - 1) * stride + 1 : stride, v : v + (wo - 1) * stride + 1 : stride] += g
    if padding:
        return gxp[:, :, padding : padding + h, padding : padding + w]
    return gxp


def dilate_kernel(weights: np.ndarray, dilation: int) -> np.ndarray:
    """Zero-upsample kernels so dilation-d application equals dilation-1 on the result."""
    if dilation == 1:
        return np.array(weights, dtype=np.float64)
    o, i, kh, kw = weights.shape
    out = np.zeros((o, i, dilation * (kh - 1) + 1, dilation * (kw - 1) + 1))
    out[:, :, ::dilation, ::dilation] = weights
    return out


# Blob format: four big-endian int32 dimension fields, then the row-major
# payload as little-endian float64.
_HEADER = struct.Struct(">iiii")


def save_tensor(x, path) -> None:
    x = as_tensor4(x, "tensor")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(*x.shape))
        fh.write(np.ascontiguousarray(x, dtype="<f8").tobytes())


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"tensor blob {path} is truncated: {len(raw)} bytes")
    dims = _HEADER.unpack_from(raw)
    if min(dims) < 1:
        raise ValueError(f"tensor blob {path} has invalid dimensions {dims}")
    count = int(np.prod(dims))
    payload = raw[_HEADER.size :]
    if len(payload) != 8 * count:
        raise ValueError(f"tensor blob {path} payload is {len(payload)} bytes, expected {8 * count}")
    data = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return data.reshape(dims)
