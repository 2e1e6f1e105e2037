"""Differentiable soft-binning histogram layer.

Each (bin b, channel k) pair carries a learnable center mu and width gamma.
The forward pass evaluates exp(-gamma^2 * (x - mu)^2) elementwise on channel
k and average-pools the result over an S x T window, producing one output
channel per pair in bin-major order (channel index = b * K + k).  Widths are
squared inside the kernel, so their sign is irrelevant and gamma = 0
collapses every response to 1.

Gradients are hand-derived: for u an input value under the window,

    d/dmu    (1/ST) sum exp(-g^2 (u-mu)^2)  =  (1/ST) sum  2 g^2 (u-mu) exp(...)
    d/dgamma                                 =  (1/ST) sum -2 g (u-mu)^2 exp(...)
    d/du                                     =  -(d/dmu term for that u)

Forward and backward are pure given (input, params); parameter updates
happen in the training loop, so concurrent evaluation against a frozen
parameter snapshot is safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .tensor import as_tensor4, avg_pool, avg_pool_backward

RECONSTRUCTION_WIDTH = 3.75  # narrow-bin width used by both reference-init recipes


@dataclass
class HistParams:
    """Learnable soft-binning parameters.

    centers and widths are (bins, channels) matrices.  stride=None pools
    with non-overlapping windows (stride = window), the classification
    default; reconstruction configs use stride 1 or a full-map window.
    per_channel documents the wiring contract: bins never mix input
    channels; any channel mixing happens in an explicit stage upstream.
    """

    centers: np.ndarray
    widths: np.ndarray
    window: tuple[int, int] = (5, 5)
    stride: int | None = None
    per_channel: bool = True

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64)
        self.widths = np.asarray(self.widths, dtype=np.float64)
        if self.centers.ndim != 2:
            raise ValueError(f"centers must be (bins, channels), got shape {self.centers.shape}")
        if self.widths.shape != self.centers.shape:
            raise ValueError(
                f"widths shape {self.widths.shape} must match centers shape {self.centers.shape}"
            )
        if not np.isfinite(self.widths).all() or not np.isfinite(self.centers).all():
            raise ValueError("centers and widths must be finite")
        s, t = self.window
        if min(self.centers.shape) < 1 or s < 1 or t < 1:
            raise ValueError("bins, channels and window sides must all be >= 1")

    @property
    def bins(self) -> int:
        return self.centers.shape[0]

    @property
    def channels(self) -> int:
        return self.centers.shape[1]

    @property
    def effective_stride(self) -> int:
        if self.stride is not None:
            return self.stride
        s, t = self.window
        if s != t:
            raise ValueError("stride=None (stride = window) needs a square window")
        return s

    def copy(self) -> "HistParams":
        return replace(self, centers=self.centers.copy(), widths=self.widths.copy())


@dataclass
class HistCache:
    x: np.ndarray
    delta: np.ndarray  # x - mu, (batch, bins, channels, H, W)
    rbf: np.ndarray  # (batch, bins, channels, H, W)
    params: HistParams
    out_shape: tuple


def hist_forward(x, params: HistParams):
    """Soft histogram maps: RBF membership per (bin, channel), then window mean.

    Returns (output, cache) where output has bins*channels feature channels
    in bin-major order.
    """
    x = as_tensor4(x, "input")
    if x.shape[1] != params.channels:
        raise ValueError(
            f"channel mismatch: input has {x.shape[1]} channels, params expect {params.channels}"
        )
    mu = params.centers[None, :, :, None, None]
    gamma = params.widths[None, :, :, None, None]
    delta = x[:, None, :, :, :] - mu
    rbf = np.exp(-(gamma**2) * delta**2)
    batch = x.shape[0]
    flat = rbf.reshape(batch, params.bins * params.channels, x.shape[2], x.shape[3])
    out = avg_pool(flat, params.window, stride=params.effective_stride)
    return out, HistCache(x=x, delta=delta, rbf=rbf, params=params, out_shape=out.shape)


def hist_backward(grad_out, cache: HistCache):
    """Gradients w.r.t. input, centers and widths for a matching forward pass."""
    grad_out = as_tensor4(grad_out, "grad_out")
    if grad_out.shape != cache.out_shape:
        raise ValueError(
            f"grad_out shape {grad_out.shape} does not match cached forward output {cache.out_shape}"
        )
    params = cache.params
    x = cache.x
    batch, _, h, w = x.shape
    spread = avg_pool_backward(
        grad_out,
        (batch, params.bins * params.channels, h, w),
        params.window,
        stride=params.effective_stride,
    )
    gz = spread.reshape(batch, params.bins, params.channels, h, w)
    delta = cache.delta
    weighted = gz * cache.rbf * delta  # shared factor of all three gradients
    grad_mu = 2.0 * params.widths**2 * weighted.sum(axis=(0, 3, 4))
    grad_gamma = -2.0 * params.widths * (weighted * delta).sum(axis=(0, 3, 4))
    gamma_sq2 = (2.0 * params.widths**2)[None, :, :, None, None]
    grad_x = -(gamma_sq2 * weighted).sum(axis=1)
    return grad_x, grad_mu, grad_gamma


def crossover_width(spacing: float) -> float:
    """Width at which adjacent RBFs intersect at 0.5 for the given center spacing."""
    return 2.0 * math.sqrt(math.log(2.0)) / spacing


INIT_MODES = ("lbp_reconstruct", "ehd_reconstruct", "linspace", "random")


def init_bins(
    mode: str,
    bins: int,
    channels: int,
    *,
    window: tuple[int, int] = (5, 5),
    stride: int | None = None,
    value_range: tuple[float, float] | None = None,
    max_responses=None,
    rng: np.random.Generator | None = None,
) -> HistParams:
    """Build HistParams under one of the named initialization recipes.

    lbp_reconstruct: 256 integer centers 0..255, width 3.75, single channel.
    ehd_reconstruct: one bin per channel, centered at that channel's maximum
    response (pass max_responses, e.g. 4 per edge orientation for
    unnormalized kernels on [0,1] inputs), width 3.75.
    linspace: centers evenly spaced over value_range with crossover widths.
    random: centers uniform over value_range, widths 1.
    """
    if mode not in INIT_MODES:
        raise ValueError(f"unknown init mode {mode!r}; valid: {', '.join(INIT_MODES)}")
    if mode == "lbp_reconstruct":
        if bins != 256 or channels != 1:
            raise ValueError(f"lbp_reconstruct requires bins=256, channels=1, got {bins}, {channels}")
        centers = np.arange(256.0)[:, None]
        widths = np.full((256, 1), RECONSTRUCTION_WIDTH)
    elif mode == "ehd_reconstruct":
        if bins != 1:
            raise ValueError(f"ehd_reconstruct pairs one bin with each channel, got bins={bins}")
        if max_responses is None:
            raise ValueError("ehd_reconstruct requires max_responses (one per channel)")
        resp = np.asarray(max_responses, dtype=np.float64).reshape(1, -1)
        if resp.shape[1] != channels:
            raise ValueError(f"max_responses has {resp.shape[1]} entries, expected {channels}")
        centers = resp
        widths = np.full((1, channels), RECONSTRUCTION_WIDTH)
    elif mode == "linspace":
        if value_range is None:
            raise ValueError("linspace requires value_range")
        lo, hi = value_range
        spacing = (hi - lo) / bins
        row = lo + (np.arange(bins) + 0.5) * spacing
        centers = np.tile(row[:, None], (1, channels))
        widths = np.full((bins, channels), crossover_width(spacing))
    else:
        if value_range is None:
            raise ValueError("random requires value_range")
        if rng is None:
            raise ValueError("random requires rng")
        lo, hi = value_range
        centers = rng.uniform(lo, hi, size=(bins, channels))
        widths = np.ones((bins, channels))
    return HistParams(centers=centers, widths=widths, window=window, stride=stride)
