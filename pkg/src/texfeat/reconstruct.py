"""Side-by-side classic vs neural feature extraction at the published initialization recipes.

Both paths run valid (padding=0) convolution so the compared grids cover the
same pixels, and the histogram stage pools over the full response map with
stride 1, which makes the layer output the normalized soft histogram
directly.  Distances are relative L1: |neural - classic|_1 / |classic|_1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classic import EHDConfig, LBPConfig, ehd, lbp_code_map, lbp_histogram
from .neural import FeatureLayerConfig, nehd_config, nlbp_config, feature_forward
from .tensor import as_tensor4


def relative_l1(neural: np.ndarray, classic: np.ndarray) -> float:
    denom = np.abs(classic).sum()
    if denom == 0.0:
        return 0.0 if np.abs(neural).sum() == 0.0 else float("inf")
    return float(np.abs(neural - classic).sum() / denom)


def _full_window(image_hw: tuple[int, int]) -> tuple[int, int]:
    h, w = image_hw
    return (h - 2, w - 2)  # valid 3x3 response grid


def reconstruction_configs(image_hw: tuple[int, int]) -> dict[str, FeatureLayerConfig]:
    """Paper-initialized layers set up for histogram comparison on image_hw inputs."""
    window = _full_window(image_hw)
    return {
        "nehd": nehd_config(
            init="paper", no_edge_mode="threshold", padding=0, window=window, stride=1,
        ),
        "nlbp": nlbp_config(init="paper", bins=256, padding=0, window=window, stride=1),
    }


def map_configs(image_hw: tuple[int, int]) -> dict[str, FeatureLayerConfig]:
    """Same layers with a 1x1 window: the output is the raw per-bin membership maps."""
    return {
        "nehd": nehd_config(init="paper", no_edge_mode="threshold", padding=0, window=(1, 1), stride=1),
        "nlbp": nlbp_config(init="paper", bins=256, padding=0, window=(1, 1), stride=1),
    }


def classic_histograms(images, kind: str) -> np.ndarray:
    if kind == "nehd":
        _, hist = ehd(images, EHDConfig(padding=0), normalize=True)
        return hist
    codes = lbp_code_map(images, LBPConfig())
    return lbp_histogram(codes, 256, normalize=True)


def classic_maps(images, kind: str) -> np.ndarray:
    if kind == "nehd":
        votes, _ = ehd(images, EHDConfig(padding=0))
        return votes
    codes = lbp_code_map(images, LBPConfig())
    batch, h, w = codes.shape
    maps = np.zeros((batch, 256, h, w))
    one_hot = np.eye(256)[codes]
    return np.transpose(one_hot, (0, 3, 1, 2))


def neural_histograms(images, cfg: FeatureLayerConfig) -> np.ndarray:
    out, _ = feature_forward(images, cfg)
    if out.shape[2:] != (1, 1):
        raise ValueError("histogram comparison needs a full-map pooling window")
    return out[:, :, 0, 0]


@dataclass
class ReconstructionResult:
    kind: str
    distances: np.ndarray  # per-image relative L1 between histograms
    classic: np.ndarray  # (batch, bins)
    neural: np.ndarray  # (batch, bins)


def compare(images, kind: str) -> ReconstructionResult:
    """Per-image histogram distance between the classic feature and its
    reference-initialized neural counterpart."""
    images = as_tensor4(images, "images")
    cfg = reconstruction_configs(images.shape[2:])[kind]
    classic = classic_histograms(images, kind)
    neural = neural_histograms(images, cfg)
    distances = np.array([relative_l1(neural[i], classic[i]) for i in range(len(images))])
    return ReconstructionResult(kind=kind, distances=distances, classic=classic, neural=neural)
