"""Reference implementations of LBP (and variants) and the edge histogram descriptor.

These are the oracle-grade classical features the neural layers are checked
against.  Everything operates on [0,1]-normalized single-channel images in
(batch, 1, height, width) layout and is a pure function of its inputs.

LBP neighbor convention: P samples on a circle of the given radius, starting
at the top-left diagonal and proceeding clockwise (NW, N, NE, E, SE, S, SW, W
for P=8).  Non-integer sample positions use bilinear interpolation, applied
to neighbor-minus-center differences so a constant image yields exact zeros.
Pixels whose sampling circle exits the image are excluded from the map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .tensor import KernelBank, as_tensor4, check_finite, conv2d

LBP_VARIANTS = ("default", "ror", "uniform", "nri_uniform", "var")

# Maximum attainable neighbor-sample variance for inputs in [0,1]
# (balanced 0/1 samples); fixes the var-LBP histogram range.
VAR_MAX = 0.25


@dataclass(frozen=True)
class LBPConfig:
    radius: int = 1
    neighbors: int = 8
    variant: str = "default"

    def __post_init__(self):
        if self.radius < 1:
            raise ValueError(f"radius must be >= 1, got {self.radius}")
        if self.neighbors < 2:
            raise ValueError(f"neighbors must be >= 2, got {self.neighbors}")
        if self.variant not in LBP_VARIANTS:
            raise ValueError(f"unknown LBP variant {self.variant!r}; valid: {', '.join(LBP_VARIANTS)}")

    @property
    def bins(self) -> int:
        """Histogram length: 2^P for default/ror/var, P(P-1)+3 for the uniform pair."""
        if self.variant in ("uniform", "nri_uniform"):
            return self.neighbors * (self.neighbors - 1) + 3
        return 2 ** self.neighbors


def neighbor_offsets(radius: int, neighbors: int) -> np.ndarray:
    """(dr, dc) offsets of the circular samples, clockwise from the top-left diagonal."""
    out = np.empty((neighbors, 2))
    for i in range(neighbors):
        theta = 3.0 * math.pi / 4.0 - 2.0 * math.pi * i / neighbors
        out[i] = (-radius * math.sin(theta), radius * math.cos(theta))
    # snap near-integer coordinates so axis-aligned samples skip interpolation
    snapped = np.round(out)
    near = np.abs(out - snapped) < 1e-9
    out[near] = snapped[near]
    return out


def _require_single_channel(image, op: str) -> np.ndarray:
    image = as_tensor4(image, "image")
    if image.shape[1] != 1:
        raise ValueError(
            f"{op} expects a single-channel image, got {image.shape[1]} channels "
            "(apply a multichannel strategy first)"
        )
    return check_finite(image, "image")


def _neighbor_differences(plane: np.ndarray, radius: int, neighbors: int) -> np.ndarray:
    """Interpolated neighbor-minus-center differences over the interior grid.

    plane: (batch, H, W).  Returns (P, batch, H-2R, W-2R).  The bilinear
    weights are applied to per-corner differences, which keeps constant
    regions at exactly zero.
    """
    batch, h, w = plane.shape
    r = radius
    if h <= 2 * r or w <= 2 * r:
        raise ValueError(f"image {h}x{w} too small for LBP radius {r}")
    center = plane[:, r : h - r, r : w - r]
    hh, ww = center.shape[1], center.shape[2]
    offsets = neighbor_offsets(r, neighbors)
    diffs = np.empty((neighbors, batch, hh, ww))
    for i, (dr, dc) in enumerate(offsets):
        r1, r2 = math.floor(dr), math.ceil(dr)
        c1, c2 = math.floor(dc), math.ceil(dc)
        tr, tc = dr - r1, dc - c1
        acc = np.zeros((batch, hh, ww))
        for rr, wr in ((r1, 1.0 - tr), (r2, tr)):
            if wr == 0.0:
                continue
            for cc, wc in ((c1, 1.0 - tc), (c2, tc)):
                if wc == 0.0:
                    continue
                shifted = plane[:, r + rr : r + rr + hh, r + cc : r + cc + ww]
                acc += (wr * wc) * (shifted - center)
        diffs[i] = acc
    return diffs


def lbp_code_map(image, cfg: LBPConfig = LBPConfig()) -> np.ndarray:
    """Per-pixel LBP codes: sum of 2^i over neighbors whose difference is >= 0.

    Returns an int64 array of shape (batch, H-2R, W-2R); border pixels whose
    sampling circle leaves the image are excluded rather than padded.
    """
    image = _require_single_channel(image, "lbp_code_map")
    diffs = _neighbor_differences(image[:, 0], cfg.radius, cfg.neighbors)
    code = np.zeros(diffs.shape[1:], dtype=np.int64)
    for i in range(cfg.neighbors):
        code |= (diffs[i] >= 0).astype(np.int64) << i
    return code


def lbp_var_map(image, cfg: LBPConfig = LBPConfig()) -> np.ndarray:
    """Population variance of the P interpolated neighbor samples per pixel."""
    image = _require_single_channel(image, "lbp_var_map")
    diffs = _neighbor_differences(image[:, 0], cfg.radius, cfg.neighbors)
    # variance of samples equals variance of (sample - center) differences
    mean = diffs.mean(axis=0)
    return np.mean((diffs - mean) ** 2, axis=0)


def var_bin_map(var_map: np.ndarray, bins: int = 256, vmax: float = VAR_MAX) -> np.ndarray:
    """Quantize a variance map into equal-width bins over [0, vmax]."""
    idx = np.floor(np.asarray(var_map) / vmax * bins).astype(np.int64)
    return np.clip(idx, 0, bins - 1)


@lru_cache(maxsize=None)
def _rotation_table(neighbors: int) -> np.ndarray:
    full = (1 << neighbors) - 1
    table = np.empty(1 << neighbors, dtype=np.int64)
    for code in range(1 << neighbors):
        best = code
        for k in range(1, neighbors):
            rot = ((code >> k) | (code << (neighbors - k))) & full
            if rot < best:
                best = rot
        table[code] = best
    return table


def _transitions(code: int, neighbors: int) -> int:
    count = 0
    for i in range(neighbors):
        a = (code >> i) & 1
        b = (code >> ((i + 1) % neighbors)) & 1
        count += a != b
    return count


@lru_cache(maxsize=None)
def _uniform_codes(neighbors: int) -> tuple[int, ...]:
    return tuple(c for c in range(1 << neighbors) if _transitions(c, neighbors) <= 2)


@lru_cache(maxsize=None)
def _variant_table(neighbors: int, variant: str) -> np.ndarray:
    n_codes = 1 << neighbors
    if variant == "ror":
        return _rotation_table(neighbors)
    if variant == "uniform":
        table = np.full(n_codes, neighbors + 1, dtype=np.int64)
        for c in _uniform_codes(neighbors):
            table[c] = bin(c).count("1")
        return table
    if variant == "nri_uniform":
        uniform = _uniform_codes(neighbors)
        table = np.full(n_codes, len(uniform), dtype=np.int64)
        for idx, c in enumerate(uniform):
            table[c] = idx
        return table
    return np.arange(n_codes, dtype=np.int64)


def lbp_variant_encode(code, neighbors: int, variant: str):
    """Map raw LBP codes to their variant labels.

    ror: minimum over all circular bit rotations.  uniform: codes with <= 2
    circular transitions map to their bit count (0..P), everything else to
    P+1.  nri_uniform: each uniform code keeps its own label (ascending code
    order, 0..P(P-1)+1), non-uniform codes share the last label.  default:
    identity.  Accepts scalars or integer arrays.
    """
    if variant not in LBP_VARIANTS or variant == "var":
        raise ValueError(f"unknown LBP code variant {variant!r}")
    codes = np.asarray(code, dtype=np.int64)
    if codes.size and (codes.min() < 0 or codes.max() >= (1 << neighbors)):
        raise ValueError(f"code out of range [0, 2^{neighbors})")
    table = _variant_table(neighbors, variant)
    out = table[codes]
    return out if isinstance(code, np.ndarray) else int(out)


def uniform_pattern_count(neighbors: int) -> int:
    """Number of distinct uniform patterns (P(P-1)+2; 58 for P=8)."""
    return len(_uniform_codes(neighbors))


def lbp_histogram(code_map, bins: int, normalize: bool = False) -> np.ndarray:
    """Tally integer codes per batch item into a length-`bins` histogram."""
    codes = np.asarray(code_map)
    if codes.ndim == 2:
        codes = codes[None]
    if codes.size and (codes.min() < 0 or codes.max() >= bins):
        raise ValueError(f"code map holds values outside [0, {bins})")
    batch = codes.shape[0]
    flat = codes.reshape(batch, -1)
    hist = np.zeros((batch, bins))
    for b in range(batch):
        hist[b] = np.bincount(flat[b], minlength=bins)
    if normalize:
        totals = hist.sum(axis=1, keepdims=True)
        np.divide(hist, totals, out=hist, where=totals > 0)
    return hist


def lbp_feature(image, cfg: LBPConfig, normalize: bool = False) -> np.ndarray:
    """Full classical pipeline: code map -> variant encoding -> histogram."""
    if cfg.variant == "var":
        labels = var_bin_map(lbp_var_map(image, cfg), bins=cfg.bins)
    else:
        codes = lbp_code_map(image, cfg)
        labels = lbp_variant_encode(codes, cfg.neighbors, cfg.variant)
    return lbp_histogram(labels, cfg.bins, normalize=normalize)


# --- Edge histogram descriptor -------------------------------------------

# Ring of the 0-degree kernel read clockwise from the top-left corner:
# [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]].  Successive orientations shift this
# ring one position, so 180..315 degrees are the negations of 0..135.
_SOBEL_RING = np.array([-1.0, 0.0, 1.0, 2.0, 1.0, 0.0, -1.0, -2.0])
_RING_POSITIONS = ((0, 0), (0, 1), (0, 2), (1, 2), (2, 2), (2, 1), (2, 0), (1, 0))

EHD_ORIENTATIONS = tuple(45 * k for k in range(8))


def sobel_bank(normalize: bool = False, dilation: int = 1, padding: int | None = None) -> KernelBank:
    """Eight 3x3 oriented edge kernels at 45-degree increments."""
    weights = np.zeros((8, 1, 3, 3))
    for k in range(8):
        for pos, (r, c) in enumerate(_RING_POSITIONS):
            weights[k, 0, r, c] = _SOBEL_RING[(pos + k) % 8]
    if normalize:
        norms = np.abs(weights).sum(axis=(1, 2, 3), keepdims=True)
        weights = weights / norms
    return KernelBank(weights, dilation=dilation, padding=padding)


@dataclass(frozen=True)
class EHDConfig:
    """Oriented-edge voting setup: 8 signed orientations plus a no-edge bin.

    threshold applies to raw responses of whatever kernels the config holds;
    note that L1-normalized Sobel kernels bound responses by 0.5 on [0,1]
    inputs, so the 0.9 default only votes with unnormalized kernels.

    Responses default to valid convolution (padding=0): padding a constant
    image would fabricate border edges out of the zero pad, breaking the
    all-no-edge behavior on flat inputs.
    """

    threshold: float = 0.9
    normalize_kernels: bool = False
    dilation: int = 1
    padding: int | None = 0
    exclude_border: bool = False

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValueError(f"threshold must be > 0, got {self.threshold}")

    @property
    def kernels(self) -> KernelBank:
        return sobel_bank(normalize=self.normalize_kernels, dilation=self.dilation, padding=self.padding)

    @property
    def bins(self) -> int:
        return 9


def ehd(image, cfg: EHDConfig = EHDConfig(), normalize: bool = False):
    """Edge histogram descriptor: per-pixel one-hot votes and their histogram.

    A pixel votes for orientation k when response R_k clears the threshold
    and no other orientation strictly exceeds it (lowest index wins exact
    ties); it votes no-edge when every response is below the threshold.
    Returns (vote_maps, histogram) with vote_maps shaped (batch, 9, H', W')
    and histogram (batch, 9), optionally normalized by pixel count.
    """
    image = _require_single_channel(image, "ehd")
    responses = conv2d(image, cfg.kernels)
    batch, k, h, w = responses.shape
    winner = responses.argmax(axis=1)
    strongest = responses.max(axis=1)
    edge = strongest >= cfg.threshold
    one_hot = np.eye(k + 1)[np.where(edge, winner, k)]
    votes = np.transpose(one_hot, (0, 3, 1, 2))
    tally = votes[:, :, 1:-1, 1:-1] if cfg.exclude_border else votes
    hist = tally.sum(axis=(2, 3))
    if normalize:
        hist = hist / tally.shape[2] / tally.shape[3]
    return votes, hist
