"""Shallow-network experiment engine.

Model shape: multichannel strategy -> feature layer -> flatten -> linear
classifier with softmax cross-entropy, trained with Adam.  A single
optimizer thread owns the parameters; batch gradients are reduced in a fixed
order so identical seeds give identical runs.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, center_crop, random_crop_batch, split
from .neural import (
    FeatureLayerConfig,
    FeatureSpec,
    feature_backward,
    feature_forward,
    learnable_groups,
    parameter_arrays,
)

MULTICHANNEL_STRATEGIES = ("independent", "one_by_one_conv", "grayscale")

GRAYSCALE_WEIGHTS = np.array([0.299, 0.587, 0.114])

# Published feature-layer totals this implementation is compared against.
PUBLISHED_FEATURE_TOTALS = {"nehd": 162, "nlbp": 112}


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - logsumexp
    n = logits.shape[0]
    loss = -log_probs[np.arange(n), labels].mean()
    grad = np.exp(log_probs)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def linear_head(features, weights, bias, labels):
    """logits = features @ weights.T + bias; returns (loss, logits, grads).

    grads holds exact gradients for "weights", "bias" and "features".
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != weights.shape[1]:
        raise ValueError(
            f"features {features.shape} incompatible with weights {weights.shape}"
        )
    logits = features @ weights.T + bias
    loss, grad_logits = softmax_cross_entropy(logits, labels)
    grads = {
        "weights": grad_logits.T @ features,
        "bias": grad_logits.sum(axis=0),
        "features": grad_logits @ weights,
    }
    return loss, logits, grads


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One Adam update, in place.  Groups absent from grads are skipped."""
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient in parameter group {name!r}")
        p = params[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def apply_multichannel(x, strategy: str, mix_weights=None) -> list[np.ndarray]:
    """Reduce a C-channel batch to one or more single-channel batches.

    independent: one tensor per channel (features are concatenated after
    extraction).  one_by_one_conv: learnable C->1 mix.  grayscale: fixed
    luminance combination, RGB only.
    """
    x = np.asarray(x, dtype=np.float64)
    channels = x.shape[1]
    if strategy == "independent":
        return [x[:, c : c + 1] for c in range(channels)]
    if strategy == "grayscale":
        if channels != 3:
            raise ValueError(f"grayscale strategy requires 3 channels, got {channels}")
        return [np.einsum("c,bchw->bhw", GRAYSCALE_WEIGHTS, x)[:, None]]
    if strategy == "one_by_one_conv":
        if mix_weights is None or len(mix_weights) != channels:
            raise ValueError("one_by_one_conv requires mix weights, one per channel")
        return [np.einsum("c,bchw->bhw", np.asarray(mix_weights, dtype=np.float64), x)[:, None]]
    raise ValueError(f"unknown multichannel strategy {strategy!r}; valid: {', '.join(MULTICHANNEL_STRATEGIES)}")


class ShallowClassifier:
    """Feature layer + flatten + linear head, with multichannel handling."""

    def __init__(self, feature_cfg: FeatureLayerConfig, n_classes: int, in_channels: int,
                 image_hw: tuple[int, int], multichannel: str = "independent",
                 rng: np.random.Generator | None = None):
        if multichannel not in MULTICHANNEL_STRATEGIES:
            raise ValueError(f"unknown multichannel strategy {multichannel!r}")
        if multichannel == "grayscale" and in_channels != 3:
            raise ValueError("grayscale strategy requires 3 input channels")
        rng = rng or np.random.default_rng(0)
        self.feature_cfg = feature_cfg
        self.n_classes = n_classes
        self.in_channels = in_channels
        self.image_hw = tuple(image_hw)
        self.multichannel = multichannel
        self.mix = np.full(in_channels, 1.0 / in_channels) if multichannel == "one_by_one_conv" else None

        probe = np.zeros((1, in_channels, *self.image_hw))
        self.feature_dim = self._features(probe)[0].reshape(1, -1).shape[1]
        bound = 1.0 / np.sqrt(self.feature_dim)
        self.head_weight = rng.uniform(-bound, bound, size=(n_classes, self.feature_dim))
        self.head_bias = np.zeros(n_classes)

    def _features(self, x):
        singles = apply_multichannel(x, self.multichannel, self.mix)
        outs, caches = [], []
        for single in singles:
            out, cache = feature_forward(single, self.feature_cfg)
            outs.append(out)
            caches.append(cache)
        return np.concatenate(outs, axis=1), (singles, caches, x)

    def forward(self, x):
        maps, cache = self._features(x)
        flat = maps.reshape(maps.shape[0], -1)
        logits = flat @ self.head_weight.T + self.head_bias
        return logits, (maps, flat, cache)

    def predict(self, x) -> np.ndarray:
        logits, _ = self.forward(x)
        return logits.argmax(axis=1)

    def loss_and_grads(self, x, labels):
        """Batch loss, gradient dict (learnable groups only), and #correct."""
        logits, (maps, flat, (singles, caches, raw)) = self.forward(x)
        loss, grad_logits = softmax_cross_entropy(logits, labels)
        n_correct = int((logits.argmax(axis=1) == np.asarray(labels)).sum())
        grads = {
            "head_weight": grad_logits.T @ flat,
            "head_bias": grad_logits.sum(axis=0),
        }
        gmaps = (grad_logits @ self.head_weight).reshape(maps.shape)
        flags = learnable_groups(self.feature_cfg)
        feature_learnable = any(flags.values())
        need_input_grad = self.multichannel == "one_by_one_conv"
        if feature_learnable or need_input_grad:
            width = self.feature_cfg.feature_channels
            mix_grad = np.zeros(self.in_channels) if need_input_grad else None
            for idx, cache in enumerate(caches):
                fgrads, ginput = feature_backward(gmaps[:, idx * width : (idx + 1) * width], cache, self.feature_cfg)
                for name, allowed in flags.items():
                    if not allowed:
                        continue
                    key = f"feature.{name}"
                    if key in grads:
                        grads[key] += fgrads[name]
                    else:
                        grads[key] = fgrads[name]
                if need_input_grad:
                    mix_grad += np.einsum("bhw,bchw->c", ginput[:, 0], raw)
            if need_input_grad:
                grads["mix"] = mix_grad
        return loss, grads, n_correct

    def parameters(self) -> dict[str, np.ndarray]:
        params = {f"feature.{k}": v for k, v in parameter_arrays(self.feature_cfg).items()}
        params["head_weight"] = self.head_weight
        params["head_bias"] = self.head_bias
        if self.mix is not None:
            params["mix"] = self.mix
        return params

    def save(self, path) -> None:
        from pathlib import Path

        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        meta = {
            "kind": self.feature_cfg.kind,
            "init": self.feature_cfg.init,
            "bins": self.feature_cfg.bins,
            "n_classes": self.n_classes,
            "in_channels": self.in_channels,
            "image_hw": list(self.image_hw),
            "multichannel": self.multichannel,
            "learn_statistical": self.feature_cfg.learn_statistical,
            "structural": {
                "nonlinearity": self.feature_cfg.structural.nonlinearity,
                "no_edge_mode": self.feature_cfg.structural.no_edge_mode,
                "threshold": self.feature_cfg.structural.threshold,
                "learn_structural": self.feature_cfg.structural.learn_structural,
                "fixed_base": self.feature_cfg.structural.fixed_base,
                "dilation": self.feature_cfg.structural.kernels.dilation,
                "stride": self.feature_cfg.structural.kernels.stride,
                "padding": self.feature_cfg.structural.kernels.padding,
            },
            "statistical": {
                "window": list(self.feature_cfg.statistical.window),
                "stride": self.feature_cfg.statistical.stride,
            },
        }
        (path / "model.json").write_text(json.dumps(meta, indent=2))
        arrays = {k.replace(".", "__"): v for k, v in self.parameters().items()}
        np.savez(path / "params.npz", **arrays)

    @classmethod
    def load(cls, path) -> "ShallowClassifier":
        from pathlib import Path

        from .histogram import HistParams
        from .neural import StructuralParams
        from .tensor import KernelBank

        path = Path(path)
        meta = json.loads((path / "model.json").read_text())
        arrays = dict(np.load(path / "params.npz"))
        params = {k.replace("__", "."): v for k, v in arrays.items()}
        st_meta = meta["structural"]
        kernels = KernelBank(
            params["feature.kernels"],
            dilation=st_meta["dilation"],
            stride=st_meta["stride"],
            padding=st_meta["padding"],
        )
        structural = StructuralParams(
            kernels=kernels,
            nonlinearity=st_meta["nonlinearity"],
            base=params.get("feature.base"),
            no_edge_mode=st_meta["no_edge_mode"],
            threshold=st_meta["threshold"],
            no_edge_weight=params.get("feature.no_edge_weight"),
            no_edge_bias=params.get("feature.no_edge_bias"),
            learn_structural=st_meta["learn_structural"],
            fixed_base=st_meta["fixed_base"],
        )
        statistical = HistParams(
            centers=params["feature.centers"],
            widths=params["feature.widths"],
            window=tuple(meta["statistical"]["window"]),
            stride=meta["statistical"]["stride"],
        )
        cfg = FeatureLayerConfig(
            kind=meta["kind"],
            structural=structural,
            statistical=statistical,
            learn_statistical=meta["learn_statistical"],
            init=meta["init"],
            bins=meta["bins"],
        )
        model = cls(
            cfg, meta["n_classes"], meta["in_channels"], tuple(meta["image_hw"]),
            multichannel=meta["multichannel"],
        )
        model.head_weight = params["head_weight"]
        model.head_bias = params["head_bias"]
        if "mix" in params:
            model.mix = params["mix"]
        return model


@dataclass(frozen=True)
class TrainConfig:
    feature: FeatureSpec
    multichannel: str = "independent"
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 0.01
    seed: int = 0
    val_fraction: float = 0.1
    runs: int = 1
    crop_size: int | None = None

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.epochs < 1 or self.batch_size < 1 or self.runs < 1:
            raise ValueError("epochs, batch_size and runs must be >= 1")


@dataclass
class RunMetrics:
    seed: int
    train_loss: list[float]
    train_acc: list[float]
    val_loss: list[float]
    val_acc: list[float]
    test_accuracy: float
    confusion: np.ndarray
    param_counts: dict
    wall_seconds: float
    failed: bool = False

    def same_results(self, other: "RunMetrics") -> bool:
        """Determinism comparison; wall_seconds is a measurement, not a result."""
        return (
            self.seed == other.seed
            and self.failed == other.failed
            and self.train_loss == other.train_loss
            and self.train_acc == other.train_acc
            and self.val_loss == other.val_loss
            and self.val_acc == other.val_acc
            and self.test_accuracy == other.test_accuracy
            and np.array_equal(self.confusion, other.confusion)
            and self.param_counts == other.param_counts
        )


@dataclass
class ExperimentResult:
    runs: list[RunMetrics]
    models: list = field(default_factory=list)  # trained models, parallel to runs

    def _accuracies(self):
        return [r.test_accuracy for r in self.runs if not r.failed]

    @property
    def n_failed(self) -> int:
        return sum(r.failed for r in self.runs)

    @property
    def mean_test_accuracy(self) -> float:
        acc = self._accuracies()
        return float(np.mean(acc)) if acc else float("nan")

    @property
    def std_test_accuracy(self) -> float:
        acc = self._accuracies()
        return float(np.std(acc)) if acc else float("nan")

    @property
    def median_test_accuracy(self) -> float:
        acc = self._accuracies()
        return float(np.median(acc)) if acc else float("nan")

    def summary(self) -> str:
        line = (
            f"test accuracy {self.mean_test_accuracy:.4f} +/- {self.std_test_accuracy:.4f} "
            f"(median {self.median_test_accuracy:.4f}, {len(self.runs)} run(s)"
        )
        if self.n_failed:
            line += f", {self.n_failed} FAILED"
        return line + ")"


def evaluate(model: ShallowClassifier, dataset: Dataset, batch_size: int = 256,
             crop_size: int | None = None):
    """Mean loss, accuracy and confusion matrix (rows true, columns predicted)."""
    n = len(dataset)
    confusion = np.zeros((dataset.n_classes, dataset.n_classes), dtype=np.int64)
    total_loss = 0.0
    total_correct = 0
    for start in range(0, n, batch_size):
        x = dataset.images[start : start + batch_size]
        y = dataset.labels[start : start + batch_size]
        if crop_size is not None:
            x = center_crop(x, crop_size)
        logits, _ = model.forward(x)
        loss, _ = softmax_cross_entropy(logits, y)
        pred = logits.argmax(axis=1)
        total_loss += loss * len(y)
        total_correct += int((pred == y).sum())
        np.add.at(confusion, (y, pred), 1)
    return total_loss / n, total_correct / n, confusion


def _single_run(cfg: TrainConfig, train_data: Dataset, test_data: Dataset, seed: int) -> RunMetrics:
    start_time = time.perf_counter()
    rng = np.random.default_rng(seed)
    train_split, val_split = split(train_data, cfg.val_fraction, seed)
    feature_cfg = cfg.feature.build(rng)
    hw = (cfg.crop_size, cfg.crop_size) if cfg.crop_size else train_data.images.shape[2:]
    model = ShallowClassifier(
        feature_cfg, train_data.n_classes, train_data.images.shape[1], hw,
        multichannel=cfg.multichannel, rng=rng,
    )
    counts = param_count(feature_cfg, image_hw=hw, in_channels=train_data.images.shape[1],
                         n_classes=train_data.n_classes, multichannel=cfg.multichannel)
    params = model.parameters()
    state = AdamState()
    train_loss, train_acc, val_loss, val_acc = [], [], [], []
    failed = False
    try:
        for _ in range(cfg.epochs):
            order = rng.permutation(len(train_split))
            epoch_loss = 0.0
            epoch_correct = 0
            for start in range(0, len(order), cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                x = train_split.images[idx]
                if cfg.crop_size is not None:
                    x = random_crop_batch(x, cfg.crop_size, rng)
                y = train_split.labels[idx]
                loss, grads, correct = model.loss_and_grads(x, y)
                if not np.isfinite(loss):
                    raise FloatingPointError("training loss diverged to NaN/Inf")
                adam_step(params, grads, state, cfg.learning_rate)
                epoch_loss += loss * len(idx)
                epoch_correct += correct
            train_loss.append(epoch_loss / len(order))
            train_acc.append(epoch_correct / len(order))
            v_loss, v_acc, _ = evaluate(model, val_split, cfg.batch_size, cfg.crop_size)
            val_loss.append(v_loss)
            val_acc.append(v_acc)
        t_loss, t_acc, confusion = evaluate(model, test_data, cfg.batch_size, cfg.crop_size)
    except FloatingPointError:
        failed = True
        t_acc = float("nan")
        confusion = np.zeros((train_data.n_classes, train_data.n_classes), dtype=np.int64)
    metrics = RunMetrics(
        seed=seed,
        train_loss=train_loss,
        train_acc=train_acc,
        val_loss=val_loss,
        val_acc=val_acc,
        test_accuracy=t_acc,
        confusion=confusion,
        param_counts=counts["flat"],
        wall_seconds=time.perf_counter() - start_time,
        failed=failed,
    )
    return metrics, model


def run_experiment(cfg: TrainConfig, train_data: Dataset, test_data: Dataset) -> ExperimentResult:
    """Train cfg.runs models under seeds cfg.seed, cfg.seed+1, ... and aggregate."""
    result = ExperimentResult([])
    for r in range(cfg.runs):
        metrics, model = _single_run(cfg, train_data, test_data, cfg.seed + r)
        result.runs.append(metrics)
        result.models.append(model)
    return result


def param_count(cfg: FeatureLayerConfig, *, image_hw=(28, 28), in_channels: int = 1,
                n_classes: int = 10, multichannel: str = "independent") -> dict:
    """Per-group learnable-capacity counts for the feature layer, the classifier
    count, and the comparison against the published feature-layer totals.

    Frozen groups are still counted (capacity) but flagged not-learnable.
    """
    flags = learnable_groups(cfg)
    groups = {
        name: {"count": int(np.asarray(arr).size), "learnable": flags[name]}
        for name, arr in parameter_arrays(cfg).items()
    }
    feature_total = sum(g["count"] for g in groups.values())

    probe_model = ShallowClassifier(cfg, n_classes, in_channels, image_hw, multichannel)
    classifier = n_classes * probe_model.feature_dim + n_classes
    mix_count = in_channels if multichannel == "one_by_one_conv" else 0

    target = PUBLISHED_FEATURE_TOTALS[cfg.kind]
    if cfg.kind == "nlbp":
        decomposition = " + ".join(f"{groups[k]['count']} {k}" for k in ("kernels", "base", "centers", "widths"))
        note = f"feature total {feature_total} = {decomposition}"
    else:
        note = (
            f"feature total {feature_total} under direct per-channel binning; the published 162 "
            "matches the two-1x1-convolution factoring of the binning stage: 72 kernel weights "
            "+ 81 (8->9 mixing conv: 72 weights + 9 biases, the ninth output acting as the "
            "learned no-edge bin) + 9 width weights = 162"
        )
    return {
        "groups": groups,
        "feature_total": feature_total,
        "classifier": classifier,
        "mix": mix_count,
        "published_target": target,
        "matches_published": feature_total == target,
        "note": note,
        "flat": {name: g["count"] for name, g in groups.items()}
        | {"feature_total": feature_total, "classifier": classifier},
    }
