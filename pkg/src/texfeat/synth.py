"""Deterministic synthetic datasets for desk-scale experiments and tests.

make_garments_dataset renders 10 classes of jittered garment silhouettes at
28x28.  The classes were chosen so neighboring ones (top/shirt/pullover,
sneaker/sandal/boot) overlap in edge-orientation profile, leaving a linear
classifier on frozen features imperfect while keeping boundaries crisp and
bright.  Pixels are quantized to the 8-bit grid so writing the images
through the IDX format is lossless.
"""

from __future__ import annotations

import numpy as np

from .data import Dataset

GARMENT_CLASSES = [
    "top", "trouser", "pullover", "dress", "coat",
    "sandal", "shirt", "sneaker", "bag", "boot",
]


def _rect(xx, yy, cx, cy, hw, hh):
    return (np.abs(xx - cx) <= hw) & (np.abs(yy - cy) <= hh)


def _ellipse(xx, yy, cx, cy, a, b):
    return ((xx - cx) / a) ** 2 + ((yy - cy) / b) ** 2 <= 1.0


def _trapezoid(xx, yy, cx, top, bottom, hw_top, hw_bottom):
    frac = np.clip((yy - top) / max(bottom - top, 1e-9), 0.0, 1.0)
    hw = hw_top + (hw_bottom - hw_top) * frac
    return (yy >= top) & (yy <= bottom) & (np.abs(xx - cx) <= hw)


def _draw_garment(label, xx, yy, cx, cy, s):
    if label == 0:  # top: torso with short sleeves
        return _rect(xx, yy, cx, cy + 1.5 * s, 4.8 * s, 6.0 * s) | _rect(
            xx, yy, cx, cy - 3.5 * s, 8.5 * s, 1.8 * s
        )
    if label == 1:  # trouser: two legs and a waistband
        return (
            _rect(xx, yy, cx - 2.8 * s, cy + 1.0 * s, 1.9 * s, 7.0 * s)
            | _rect(xx, yy, cx + 2.8 * s, cy + 1.0 * s, 1.9 * s, 7.0 * s)
            | _rect(xx, yy, cx, cy - 5.5 * s, 4.7 * s, 1.3 * s)
        )
    if label == 2:  # pullover: torso with long sleeves
        return _rect(xx, yy, cx, cy + 1.0 * s, 5.2 * s, 6.5 * s) | _rect(
            xx, yy, cx, cy - 3.5 * s, 10.2 * s, 2.1 * s
        )
    if label == 3:  # dress: trapezoid widening downward
        return _trapezoid(xx, yy, cx, cy - 7.0 * s, cy + 7.0 * s, 2.6 * s, 6.8 * s)
    if label == 4:  # coat: tall torso with long sleeves
        return _rect(xx, yy, cx, cy, 5.0 * s, 7.2 * s) | _rect(
            xx, yy, cx, cy - 3.8 * s, 9.2 * s, 1.9 * s
        )
    if label == 5:  # sandal: two straps and a connector
        return (
            _rect(xx, yy, cx, cy + 2.5 * s, 7.0 * s, 1.6 * s)
            | _rect(xx, yy, cx, cy + 6.0 * s, 7.0 * s, 1.6 * s)
            | _rect(xx, yy, cx + 4.0 * s, cy + 4.0 * s, 1.2 * s, 3.3 * s)
        )
    if label == 6:  # shirt: torso with mid-length sleeves
        return _rect(xx, yy, cx, cy + 0.5 * s, 4.9 * s, 6.8 * s) | _rect(
            xx, yy, cx, cy - 3.8 * s, 9.3 * s, 1.9 * s
        )
    if label == 7:  # sneaker: low profile blob with a sole
        blob = _ellipse(xx, yy, cx, cy + 3.5 * s, 7.5 * s, 3.2 * s) & (yy <= cy + 5.0 * s)
        return blob | _rect(xx, yy, cx, cy + 5.2 * s, 7.6 * s, 1.1 * s)
    if label == 8:  # bag: body with a handle arc
        handle = (
            _ellipse(xx, yy, cx, cy - 2.0 * s, 4.4 * s, 3.6 * s)
            & ~_ellipse(xx, yy, cx, cy - 2.0 * s, 2.2 * s, 1.6 * s)
            & (yy <= cy - 2.0 * s)
        )
        return _rect(xx, yy, cx, cy + 2.5 * s, 6.5 * s, 4.5 * s) | handle
    if label == 9:  # boot: shaft plus foot
        return _rect(xx, yy, cx - 2.2 * s, cy - 1.5 * s, 2.4 * s, 5.5 * s) | _rect(
            xx, yy, cx + 0.5 * s, cy + 4.8 * s, 5.0 * s, 2.2 * s
        )
    raise ValueError(f"unknown garment label {label}")


def make_garments_dataset(per_class: int, seed: int = 0, size: int = 28) -> Dataset:
    """Class-balanced garment silhouettes, deterministic under the seed.

    Silhouettes are full contrast (garment 1.0 on background 0.0): soft-bin
    memberships then agree with hard votes at boundaries, so reconstruction
    comparisons measure the binning approximation rather than contrast.
    Intra-class variety comes from position/scale jitter, mirroring, and
    punched holes.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    n = per_class * len(GARMENT_CLASSES)
    images = np.zeros((n, 1, size, size))
    labels = np.empty(n, dtype=np.int64)
    half = (size - 1) / 2.0
    i = 0
    for label in range(len(GARMENT_CLASSES)):
        for _ in range(per_class):
            cx = half + rng.uniform(-2.0, 2.0)
            cy = half + rng.uniform(-2.0, 2.0)
            s = rng.uniform(0.82, 1.10) * size / 28.0
            mask = _draw_garment(label, xx, yy, cx, cy, s)
            if rng.random() < 0.5:
                mask = mask[:, ::-1]
            if rng.random() < 0.45:
                # one axis-aligned hole; straight punched boundaries keep
                # corner counts (the lossy part of soft binning) low
                hx = cx + rng.uniform(-3.5, 3.5)
                hy = cy + rng.uniform(-3.5, 3.5)
                mask = mask & ~_rect(xx, yy, hx, hy, rng.uniform(0.8, 2.0), rng.uniform(0.8, 2.0))
            images[i, 0] = mask.astype(np.float64)
            labels[i] = label
            i += 1
    order = rng.permutation(n)
    return Dataset(
        images=images[order],
        labels=labels[order],
        class_names=list(GARMENT_CLASSES),
        provenance=f"synthetic-garments(per_class={per_class}, seed={seed})",
    )


def make_separable_dataset(per_class: int, seed: int = 0, size: int = 16) -> Dataset:
    """Two trivially separable texture classes: vertical vs horizontal stripes."""
    rng = np.random.default_rng(seed)
    n = 2 * per_class
    images = np.empty((n, 1, size, size))
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        label = i % 2
        phase = rng.integers(0, 4)
        idx = np.arange(size)
        stripe = (((idx + phase) // 2) % 2).astype(np.float64) * 0.9
        base = np.tile(stripe, (size, 1)) if label == 0 else np.tile(stripe[:, None], (1, size))
        noise = rng.uniform(0.0, 0.05, size=(size, size))
        images[i, 0] = np.round(np.clip(base + noise, 0.0, 1.0) * 255.0) / 255.0
        labels[i] = label
    order = rng.permutation(n)
    return Dataset(
        images=images[order],
        labels=labels[order],
        class_names=["vertical", "horizontal"],
        provenance=f"synthetic-separable(per_class={per_class}, seed={seed})",
    )


def make_channel_signal_dataset(per_class: int, seed: int = 0, size: int = 16) -> Dataset:
    """Three-channel set whose class signal lives only in channel 2.

    Channels 0 and 1 carry class-independent noise; channel 2 carries a
    strong stripe pattern whose orientation encodes the label.
    """
    rng = np.random.default_rng(seed)
    n = 2 * per_class
    images = np.empty((n, 3, size, size))
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        label = i % 2
        images[i, 0] = rng.uniform(0.0, 1.0, size=(size, size))
        images[i, 1] = rng.uniform(0.0, 1.0, size=(size, size))
        idx = np.arange(size)
        stripe = ((idx // 4) % 2).astype(np.float64)
        images[i, 2] = np.tile(stripe, (size, 1)) if label == 0 else np.tile(stripe[:, None], (1, size))
        labels[i] = label
    images = np.round(images * 255.0) / 255.0
    order = rng.permutation(n)
    return Dataset(
        images=images[order],
        labels=labels[order],
        class_names=["vertical", "horizontal"],
        provenance=f"synthetic-channel-signal(per_class={per_class}, seed={seed})",
    )
