"""Stain separation, focal optical density losses and quality metrics for
HER2 virtual staining, plus a desk-scale affine stain-transfer fitter."""

from .config import CcplConfig, FitConfig, load_config, resolve_config
from .cross_channel import (
    NmccConfig,
    channel_correlation,
    cross_channel_consistency_loss,
    nmcc_loss,
)
from .features import (
    FdConfig,
    FeatureSet,
    cosine_similarity,
    feature_distillation_loss,
    load_features,
    save_features,
    toy_extract,
)
from .fit import (
    AffineOdModel,
    AffineStainTransfer,
    FitTrace,
    apply_model,
    apply_model_continuous,
    fit_stain_transfer,
    objective,
    objective_gradient,
)
from .fod import FodParams, channel_fod, compute_fod, gray_to_od, to_grayscale
from .metrics import MetricsReport, frechet_distance, mse, pcc, psnr, ssim
from .perception import (
    ChannelStats,
    DcpConfig,
    channel_perception_loss,
    channel_stats,
    dual_perception_loss,
)
from .report import match_pairs, run_report
from .separation import (
    compose,
    default_stain_matrix,
    isolate_channel,
    load_stain_matrix,
    normalize_stain_matrix,
    od_to_rgb,
    rgb_to_od,
    separate_stains,
)

__version__ = "0.1.0"
