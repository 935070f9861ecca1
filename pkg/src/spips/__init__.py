"""Full-reference image quality scoring.

Traditional per-pixel quality maps (PSNR, SSIM, MS-SSIM) and deep
feature-difference maps from a frozen CNN backbone are fused by a small
trainable head into a single lower-is-better score, trained on two-alternative
forced choice (2AFC) human preference data.
"""

from .backbone import (
    BackboneSpec,
    ConvLayer,
    FeaturePyramid,
    MaxPoolLayer,
    Normalization,
    ReluLayer,
    extract_features,
    load_backbone,
    save_backbone,
)
from .datasets import (
    Category,
    JNDSample,
    ManifestKind,
    TwoAFCSample,
    decode_image,
    load_manifest,
    synth_2afc,
)
from .deep_quality import QualityGroups, deep_maps, split_groups
from .errors import DataError, FormatError, NumericError, SpipsError
from .evalstats import (
    CategoryResult,
    CorrelationReport,
    eval_2afc,
    eval_jnd,
    krcc,
    plcc,
    srcc,
)
from .fusion import (
    Ablation,
    FusionHead,
    Kernel1x1,
    ScoreBreakdown,
    ablate,
    compare_2afc,
    init_head,
    load_head,
    loss_and_gradients,
    save_head,
    score,
)
from .tensor import Tensor, conv2d, downsample2x, maxpool2d, relu, resize_bilinear
from .traditional import (
    MapSource,
    QualityMap,
    max_msssim_scales,
    msssim_map,
    psnr_map,
    ssim_map,
)
from .trainer import (
    Optimizer,
    TrainConfig,
    TrainReport,
    precompute_groups,
    train,
    twoafc_accuracy,
)

__version__ = "0.1.0"
