"""End-to-end finite-difference verification of every learnable group.

Builds a small classifier around the requested feature layer, computes the
batch loss gradient analytically, and compares each parameter group against
central finite differences of the same loss.

Inputs for the pixel-difference kind are ramps with a small noise floor so
every neighbor difference stays well clear of zero: the modified ReLU has a
kink there, and finite differences are only meaningful with clearance
(the subgradient choice at the kink itself is covered by unit tests).
"""

from __future__ import annotations

import numpy as np

from .neural import FeatureSpec
from .training import ShallowClassifier, softmax_cross_entropy

FD_STEP = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = max(np.abs(numeric).max(), 1e-12)
    return float(np.abs(analytic - numeric).max() / denom)


def margin_ramp(rng: np.random.Generator, shape, slope_r=0.04, slope_c=0.07, noise=0.002):
    batch, _, h, w = shape
    base = np.arange(h)[:, None] * slope_r + np.arange(w)[None, :] * slope_c
    return base[None, None] + rng.uniform(-noise, noise, size=shape)


def end_to_end_errors(
    spec: FeatureSpec,
    seed: int = 0,
    batch: int = 4,
    image_hw: tuple[int, int] = (10, 10),
    n_classes: int = 3,
) -> dict[str, float]:
    """Max relative error per learnable group for one built instance."""
    rng = np.random.default_rng(seed)
    feature_cfg = spec.build(rng)
    model = ShallowClassifier(feature_cfg, n_classes, 1, image_hw, rng=rng)
    shape = (batch, 1, *image_hw)
    if spec.kind == "nlbp" and spec.activation in ("modified_relu", "relu"):
        x = margin_ramp(rng, shape)
    else:
        x = rng.uniform(0.0, 1.0, size=shape)
    labels = rng.integers(0, n_classes, size=batch)

    _, grads, _ = model.loss_and_grads(x, labels)
    params = model.parameters()

    def loss_value():
        logits, _ = model.forward(x)
        value, _ = softmax_cross_entropy(logits, labels)
        return float(value)

    errors = {}
    for name, analytic in grads.items():
        arr = params[name]
        numeric = np.zeros_like(arr)
        for idx in np.ndindex(*arr.shape):
            arr[idx] += FD_STEP
            up = loss_value()
            arr[idx] -= 2 * FD_STEP
            down = loss_value()
            arr[idx] += FD_STEP
            numeric[idx] = (up - down) / (2 * FD_STEP)
        errors[name] = relative_error(analytic, numeric)
    return errors


def run_gradcheck(spec: FeatureSpec, trials: int = 5, seed: int = 0) -> dict[str, float]:
    """Worst relative error per group across independently seeded instances."""
    worst: dict[str, float] = {}
    for t in range(trials):
        for name, err in end_to_end_errors(spec, seed=seed + t).items():
            worst[name] = max(worst.get(name, 0.0), err)
    return worst
