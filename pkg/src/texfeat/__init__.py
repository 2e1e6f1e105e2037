"""texfeat: classical and differentiable histogram-based texture features."""

from .classic import EHDConfig, LBPConfig, ehd, lbp_code_map, lbp_feature, lbp_histogram, lbp_variant_encode, lbp_var_map, sobel_bank
from .data import Dataset, balanced_subset, load_idx, load_image_dir, save_idx, split
from .histogram import HistParams, hist_backward, hist_forward, init_bins
from .neural import (
    FeatureLayerConfig,
    FeatureSpec,
    feature_backward,
    feature_forward,
    make_difference_kernels,
    modified_relu,
    nehd_config,
    nehd_forward,
    nlbp_config,
    nlbp_forward,
)
from .tensor import KernelBank, avg_pool, conv2d, load_tensor, save_tensor
from .training import (
    AdamState,
    ExperimentResult,
    RunMetrics,
    ShallowClassifier,
    TrainConfig,
    adam_step,
    apply_multichannel,
    evaluate,
    linear_head,
    param_count,
    run_experiment,
    softmax_cross_entropy,
)

__version__ = "0.1.0"
