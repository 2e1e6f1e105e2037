"""Independent brute-force reference implementations used by several suites.

These deliberately re-derive behavior with plain per-pixel loops and their
own interpolation code; they must stay independent of the production paths
they are used to check.
"""

import math

import numpy as np

from texfeat.classic import sobel_bank
from texfeat.tensor import conv2d


def _neighbor_taps(radius, neighbors):
    """Per-neighbor bilinear corner offsets and weights, computed once."""
    taps = []
    for i in range(neighbors):
        theta = 3.0 * math.pi / 4.0 - 2.0 * math.pi * i / neighbors
        dr = -radius * math.sin(theta)
        dc = radius * math.cos(theta)
        if abs(dr - round(dr)) < 1e-9:
            dr = round(dr)
        if abs(dc - round(dc)) < 1e-9:
            dc = round(dc)
        r1, r2 = math.floor(dr), math.ceil(dr)
        c1, c2 = math.floor(dc), math.ceil(dc)
        tr, tc = dr - r1, dc - c1
        corners = []
        for rr, wr in ((r1, 1 - tr), (r2, tr)):
            for cc, wc in ((c1, 1 - tc), (c2, tc)):
                if wr != 0.0 and wc != 0.0:
                    corners.append((rr, cc, wr * wc))
        taps.append(corners)
    return taps


def lbp_oracle(plane, radius=1, neighbors=8):
    """Pixel-by-pixel neighbor walk producing raw LBP codes."""
    h, w = plane.shape
    taps = _neighbor_taps(radius, neighbors)
    codes = np.zeros((h - 2 * radius, w - 2 * radius), dtype=np.int64)
    for r in range(radius, h - radius):
        for c in range(radius, w - radius):
            center = plane[r, c]
            code = 0
            for i, corners in enumerate(taps):
                diff = 0.0
                for rr, cc, wgt in corners:
                    diff += wgt * (plane[r + rr, c + cc] - center)
                if diff >= 0:
                    code |= 1 << i
            codes[r - radius, c - radius] = code
    return codes


def lbp_var_oracle(plane, radius=1, neighbors=8):
    """Population variance of the interpolated neighbor samples per pixel."""
    h, w = plane.shape
    taps = _neighbor_taps(radius, neighbors)
    out = np.zeros((h - 2 * radius, w - 2 * radius))
    for r in range(radius, h - radius):
        for c in range(radius, w - radius):
            center = plane[r, c]
            samples = []
            for corners in taps:
                val = 0.0
                for rr, cc, wgt in corners:
                    val += wgt * (plane[r + rr, c + cc] - center)
                samples.append(val)
            samples = np.asarray(samples)
            out[r - radius, c - radius] = ((samples - samples.mean()) ** 2).mean()
    return out


def tally_oracle(codes, bins):
    out = np.zeros(bins)
    for value in np.asarray(codes).ravel():
        out[value] += 1
    return out


def ehd_oracle(image, threshold=0.9, normalize_kernels=False):
    """Per-pixel argmax-and-threshold walk over all orientations."""
    responses = conv2d(image, sobel_bank(normalize=normalize_kernels, padding=0))
    batch, k, h, w = responses.shape
    votes = np.zeros((batch, k + 1, h, w))
    for b in range(batch):
        for r in range(h):
            for c in range(w):
                best, best_val = None, None
                for o in range(k):
                    v = responses[b, o, r, c]
                    if best_val is None or v > best_val:
                        best, best_val = o, v
                if best_val >= threshold:
                    votes[b, best, r, c] = 1.0
                else:
                    votes[b, k, r, c] = 1.0
    return votes, votes.sum(axis=(2, 3))
