"""Differentiable texture feature layers: oriented-edge and pixel-difference kinds.

Both layers share one shape: a structural convolution stage (8 kernels of
3x3, optionally dilated) followed by the soft-binning histogram stage.

The edge kind ("nehd") feeds the 8 signed edge responses plus a ninth
no-edge channel into one histogram bin per channel.  The no-edge channel is
either a hard indicator that every response sits below a threshold
(non-differentiable, concatenated as-is) or a learned 1x1 combination of the
responses squashed by a sigmoid.

The pixel-difference kind ("nlbp") applies an activation to the 8
neighbor-minus-center difference maps and recombines them with a 1x1 weight
vector (the "base", initialized to powers of two) into a single code map,
which the histogram stage bins.

Parameter groups are disjoint: kernels, base (or no-edge weights/bias),
centers, widths.  feature_backward returns a gradient per group, zeroed for
groups whose learn flag is off.  Forward/backward are pure given the
parameters; the training loop owns mutation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classic import sobel_bank
from .histogram import HistCache, HistParams, hist_backward, hist_forward, init_bins
from .tensor import KernelBank, as_tensor4, conv2d, conv2d_backward

KINDS = ("nehd", "nlbp")
ACTIVATIONS = ("modified_relu", "sigmoid", "relu", "none")
NO_EDGE_MODES = ("threshold", "learned")

# Peak edge response: max input value (1.0) times the positive ring mass (1+2+1).
SOBEL_MAX_RESPONSE = 4.0


def modified_relu(x) -> np.ndarray:
    """ReLU that emits 1 at exactly-zero input (mimics a >= 0 threshold)."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0, x, np.where(x == 0, 1.0, 0.0))


def modified_relu_grad(x) -> np.ndarray:
    """Derivative mask: 1 where x > 0, else 0 (the spike at 0 gets gradient 0)."""
    return (np.asarray(x) > 0).astype(np.float64)


def sigmoid(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _activation(name: str, x: np.ndarray) -> np.ndarray:
    if name == "modified_relu":
        return modified_relu(x)
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "sigmoid":
        return sigmoid(x)
    if name == "none":
        return np.asarray(x, dtype=np.float64)
    raise ValueError(f"unknown activation {name!r}; valid: {', '.join(ACTIVATIONS)}")


def _activation_grad(name: str, x: np.ndarray, activated: np.ndarray) -> np.ndarray:
    if name in ("modified_relu", "relu"):
        return modified_relu_grad(x)
    if name == "sigmoid":
        return activated * (1.0 - activated)
    return np.ones_like(x)


def make_difference_kernels(dilation: int = 1, padding: int | None = None) -> KernelBank:
    """Eight sparse 3x3 kernels: +1 at one ring position (clockwise from the
    top-left), -1 at the center, zeros elsewhere."""
    if dilation not in (1, 2, 3):
        raise ValueError(f"dilation must be in 1..3, got {dilation}")
    ring = ((0, 0), (0, 1), (0, 2), (1, 2), (2, 2), (2, 1), (2, 0), (1, 0))
    weights = np.zeros((8, 1, 3, 3))
    for k, (r, c) in enumerate(ring):
        weights[k, 0, r, c] = 1.0
        weights[k, 0, 1, 1] = -1.0
    return KernelBank(weights, dilation=dilation, padding=padding)


@dataclass
class StructuralParams:
    """Convolution-stage parameters and switches for one feature layer."""

    kernels: KernelBank
    nonlinearity: str = "none"
    base: np.ndarray | None = None  # (8,) code recombination, pixel-difference kind
    no_edge_mode: str | None = None  # edge kind: "threshold" or "learned"
    threshold: float = 0.9
    no_edge_weight: np.ndarray | None = None  # (8,) learned no-edge 1x1
    no_edge_bias: np.ndarray | None = None  # shape-(1,) array so updates are in place
    learn_structural: bool = True
    fixed_base: bool = False

    def __post_init__(self):
        if self.nonlinearity not in ACTIVATIONS:
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")
        if self.no_edge_mode is not None and self.no_edge_mode not in NO_EDGE_MODES:
            raise ValueError(f"unknown no_edge_mode {self.no_edge_mode!r}")
        if self.base is not None:
            self.base = np.asarray(self.base, dtype=np.float64)
        if self.no_edge_weight is not None:
            self.no_edge_weight = np.asarray(self.no_edge_weight, dtype=np.float64)
        if self.no_edge_bias is not None:
            self.no_edge_bias = np.asarray(self.no_edge_bias, dtype=np.float64).reshape(1)


@dataclass
class FeatureLayerConfig:
    kind: str
    structural: StructuralParams
    statistical: HistParams
    learn_statistical: bool = True
    init: str = "paper"
    bins: int = 9

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r}; valid: {', '.join(KINDS)}")
        total = self.statistical.bins * self.statistical.channels
        if self.bins != total:
            raise ValueError(
                f"bins={self.bins} inconsistent with histogram stage "
                f"({self.statistical.bins} bins x {self.statistical.channels} channels)"
            )
        if self.kind == "nehd" and self.bins != 9:
            raise ValueError(f"edge-kind feature layers use 9 bins, got {self.bins}")
        if self.kind == "nlbp" and self.bins not in (16, 256):
            raise ValueError(f"pixel-difference feature layers use 16 or 256 bins, got {self.bins}")

    @property
    def feature_channels(self) -> int:
        return self.bins


@dataclass
class FeatureCache:
    kind: str
    x: np.ndarray
    responses: np.ndarray  # conv-stage output (batch, 8, H, W)
    activated: np.ndarray | None  # post-activation maps (nlbp)
    no_edge: np.ndarray | None  # (batch, 1, H, W)
    hist_cache: HistCache
    cfg: FeatureLayerConfig


def nehd_forward(image, cfg: FeatureLayerConfig):
    """Edge responses -> no-edge channel -> per-channel soft bins."""
    if cfg.kind != "nehd":
        raise ValueError(f"nehd_forward called with kind {cfg.kind!r}")
    x = as_tensor4(image, "image")
    st = cfg.structural
    responses = conv2d(x, st.kernels)
    if st.no_edge_mode == "learned":
        pre = np.einsum("k,bkhw->bhw", st.no_edge_weight, responses) + st.no_edge_bias[0]
        no_edge = sigmoid(pre)[:, None]
    else:
        no_edge = (responses.max(axis=1, keepdims=True) < st.threshold).astype(np.float64)
    stacked = np.concatenate([responses, no_edge], axis=1)
    out, hcache = hist_forward(stacked, cfg.statistical)
    cache = FeatureCache(
        kind="nehd", x=x, responses=responses, activated=None, no_edge=no_edge,
        hist_cache=hcache, cfg=cfg,
    )
    return out, cache


def nlbp_forward(image, cfg: FeatureLayerConfig):
    """Difference maps -> activation -> weighted code map -> soft bins."""
    if cfg.kind != "nlbp":
        raise ValueError(f"nlbp_forward called with kind {cfg.kind!r}")
    x = as_tensor4(image, "image")
    st = cfg.structural
    responses = conv2d(x, st.kernels)
    activated = _activation(st.nonlinearity, responses)
    code = np.einsum("k,bkhw->bhw", st.base, activated)[:, None]
    out, hcache = hist_forward(code, cfg.statistical)
    cache = FeatureCache(
        kind="nlbp", x=x, responses=responses, activated=activated, no_edge=None,
        hist_cache=hcache, cfg=cfg,
    )
    return out, cache


def feature_forward(image, cfg: FeatureLayerConfig):
    return nehd_forward(image, cfg) if cfg.kind == "nehd" else nlbp_forward(image, cfg)


def learnable_groups(cfg: FeatureLayerConfig) -> dict[str, bool]:
    """Which parameter groups the optimizer may update, by group name."""
    st = cfg.structural
    groups = {
        "kernels": st.learn_structural,
        "centers": cfg.learn_statistical,
        "widths": cfg.learn_statistical,
    }
    if cfg.kind == "nlbp":
        groups["base"] = not st.fixed_base
    elif st.no_edge_mode == "learned":
        groups["no_edge_weight"] = st.learn_structural
        groups["no_edge_bias"] = st.learn_structural
    return groups


def parameter_arrays(cfg: FeatureLayerConfig) -> dict[str, np.ndarray]:
    """Live parameter storage per group (updates mutate these arrays in place)."""
    st = cfg.structural
    params = {
        "kernels": st.kernels.weights,
        "centers": cfg.statistical.centers,
        "widths": cfg.statistical.widths,
    }
    if cfg.kind == "nlbp":
        params["base"] = st.base
    elif st.no_edge_mode == "learned":
        params["no_edge_weight"] = st.no_edge_weight
        params["no_edge_bias"] = st.no_edge_bias
    return params


def feature_backward(grad_out, cache: FeatureCache, cfg: FeatureLayerConfig):
    """Chain grad_out through the feature layer.

    Returns (grads, grad_input): grads maps every parameter group of the
    layer to an array shaped like the parameter, zeroed where the group's
    learn flag is off.  The threshold no-edge channel passes no gradient.
    """
    if cache.cfg is not cfg:
        raise ValueError("cache does not belong to this feature configuration")
    st = cfg.structural
    gmaps, gmu, ggamma = hist_backward(grad_out, cache.hist_cache)
    if cfg.kind == "nehd":
        g_resp = gmaps[:, :8].copy()
        g_ne = gmaps[:, 8]
        grads = {}
        if st.no_edge_mode == "learned":
            ne = cache.no_edge[:, 0]
            gs = g_ne * ne * (1.0 - ne)
            grads["no_edge_weight"] = np.einsum("bhw,bkhw->k", gs, cache.responses)
            grads["no_edge_bias"] = np.array([gs.sum()])
            g_resp += gs[:, None] * st.no_edge_weight[None, :, None, None]
        grad_input, grad_kernels = conv2d_backward(g_resp, cache.x, st.kernels)
    else:
        g_code = gmaps[:, 0]
        grads = {"base": np.einsum("bhw,bkhw->k", g_code, cache.activated)}
        g_act = g_code[:, None] * st.base[None, :, None, None]
        g_resp = g_act * _activation_grad(st.nonlinearity, cache.responses, cache.activated)
        grad_input, grad_kernels = conv2d_backward(g_resp, cache.x, st.kernels)
    grads["kernels"] = grad_kernels
    grads["centers"] = gmu
    grads["widths"] = ggamma
    for name, allowed in learnable_groups(cfg).items():
        if not allowed:
            grads[name] = np.zeros_like(grads[name])
    return grads, grad_input


# --- Initialization recipes ------------------------------------------------


@dataclass(frozen=True)
class FeatureSpec:
    """Scalar recipe for building a feature layer (materialized per run seed)."""

    kind: str = "nlbp"
    init: str = "paper"
    bins: int = 0  # 0 means the kind's default (9 edge / 16 pixel-difference)
    learn_structural: bool = True
    learn_statistical: bool = True
    no_edge_mode: str = "threshold"
    fixed_base: bool = False
    activation: str = "modified_relu"
    dilation: int = 1
    window: int = 5
    stride: int | None = None
    padding: int | None = None
    threshold: float = 0.9
    normalize_kernels: bool = False

    def resolved_bins(self) -> int:
        if self.bins:
            return self.bins
        return 9 if self.kind == "nehd" else 16

    def build(self, rng: np.random.Generator | None = None) -> FeatureLayerConfig:
        if self.kind == "nehd":
            return nehd_config(
                init=self.init,
                no_edge_mode=self.no_edge_mode,
                learn_structural=self.learn_structural,
                learn_statistical=self.learn_statistical,
                dilation=self.dilation,
                window=(self.window, self.window),
                stride=self.stride,
                padding=self.padding,
                threshold=self.threshold,
                normalize_kernels=self.normalize_kernels,
                rng=rng,
            )
        return nlbp_config(
            init=self.init,
            bins=self.resolved_bins(),
            learn_structural=self.learn_structural,
            learn_statistical=self.learn_statistical,
            fixed_base=self.fixed_base,
            activation=self.activation,
            dilation=self.dilation,
            window=(self.window, self.window),
            stride=self.stride,
            padding=self.padding,
            rng=rng,
        )


def _need_rng(rng):
    if rng is None:
        raise ValueError("random initialization requires an rng")
    return rng


def nehd_config(
    init: str = "paper",
    no_edge_mode: str = "threshold",
    learn_structural: bool = True,
    learn_statistical: bool = True,
    dilation: int = 1,
    window: tuple[int, int] = (5, 5),
    stride: int | None = None,
    padding: int | None = None,
    threshold: float = 0.9,
    normalize_kernels: bool = False,
    rng: np.random.Generator | None = None,
) -> FeatureLayerConfig:
    """Edge-kind layer.  Reference init: oriented edge kernels, one bin per
    channel centered at that channel's peak response, width 3.75."""
    if no_edge_mode not in NO_EDGE_MODES:
        raise ValueError(f"unknown no_edge_mode {no_edge_mode!r}")
    if dilation not in (1, 2, 3):
        raise ValueError(f"dilation must be in 1..3, got {dilation}")
    peak = SOBEL_MAX_RESPONSE / 8.0 if normalize_kernels else SOBEL_MAX_RESPONSE
    if init == "paper":
        kernels = sobel_bank(normalize=normalize_kernels, dilation=dilation, padding=padding)
        stats = init_bins(
            "ehd_reconstruct", 1, 9,
            window=window, stride=stride,
            max_responses=[peak] * 8 + [1.0],  # no-edge channel peaks at 1
        )
    elif init == "random":
        r = _need_rng(rng)
        kernels = KernelBank(
            r.uniform(-1.0 / 3.0, 1.0 / 3.0, size=(8, 1, 3, 3)),
            dilation=dilation, padding=padding,
        )
        stats = init_bins(
            "random", 1, 9,
            window=window, stride=stride,
            value_range=(-peak, peak), rng=r,
        )
    else:
        raise ValueError(f"unknown init {init!r}; valid: paper, random")
    no_edge_weight = no_edge_bias = None
    if no_edge_mode == "learned":
        r = _need_rng(rng) if init == "random" else (rng or np.random.default_rng(0))
        no_edge_weight = r.uniform(-0.5, 0.5, size=8)
        no_edge_bias = np.zeros(1)
    structural = StructuralParams(
        kernels=kernels,
        nonlinearity="none",
        no_edge_mode=no_edge_mode,
        threshold=threshold,
        no_edge_weight=no_edge_weight,
        no_edge_bias=no_edge_bias,
        learn_structural=learn_structural,
    )
    return FeatureLayerConfig(
        kind="nehd", structural=structural, statistical=stats,
        learn_statistical=learn_statistical, init=init, bins=9,
    )


def nlbp_config(
    init: str = "paper",
    bins: int = 16,
    learn_structural: bool = True,
    learn_statistical: bool = True,
    fixed_base: bool = False,
    activation: str = "modified_relu",
    dilation: int = 1,
    window: tuple[int, int] = (5, 5),
    stride: int | None = None,
    padding: int | None = None,
    rng: np.random.Generator | None = None,
) -> FeatureLayerConfig:
    """Pixel-difference layer.  Reference init: sparse difference kernels,
    powers-of-two base, integer-code bin centers (256-bin reconstruction) or
    16 bins spread over the code range (training)."""
    if bins not in (16, 256):
        raise ValueError(f"pixel-difference layers use 16 or 256 bins, got {bins}")
    if init == "paper":
        kernels = make_difference_kernels(dilation=dilation, padding=padding)
        base = np.asarray([float(2**k) for k in range(8)])
        if bins == 256:
            stats = init_bins("lbp_reconstruct", 256, 1, window=window, stride=stride)
        else:
            stats = init_bins("linspace", bins, 1, window=window, stride=stride, value_range=(0.0, 255.0))
    elif init == "random":
        r = _need_rng(rng)
        kernels = KernelBank(
            r.uniform(-1.0 / 3.0, 1.0 / 3.0, size=(8, 1, 3, 3)),
            dilation=dilation, padding=padding,
        )
        base = r.uniform(0.0, 1.0, size=8) * 128.0
        stats = init_bins("random", bins, 1, window=window, stride=stride, value_range=(0.0, 255.0), rng=r)
    else:
        raise ValueError(f"unknown init {init!r}; valid: paper, random")
    structural = StructuralParams(
        kernels=kernels,
        nonlinearity=activation,
        base=base,
        learn_structural=learn_structural,
        fixed_base=fixed_base,
    )
    return FeatureLayerConfig(
        kind="nlbp", structural=structural, statistical=stats,
        learn_statistical=learn_statistical, init=init, bins=bins,
    )
