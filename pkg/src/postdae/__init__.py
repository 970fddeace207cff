"""Learned shape-prior post-processing for binary segmentation masks.

A denoising autoencoder trained only on (corrupted, clean) mask pairs maps any
predicted mask back onto the space of plausible shapes. The package also holds
the baselines it is compared against (UNet, random forest on texture features,
dense CRF), the evaluation toolkit and an experiment pipeline with a CLI.
"""
from .checkpoint import ModelCheckpoint, load_checkpoint, save_checkpoint
from .crf import DenseCRFParams, crf_postprocess, mean_field, run_crf_meanfield, unary_from_prob
from .dae import (
    DAEArchitectureSpec,
    DAETrainConfig,
    binarize,
    build_dae,
    decode,
    encode,
    load_dae,
    postprocess,
    postprocess_batch,
    train_dae,
)
from .degrade import DegradationConfig, ShapeSpec, degrade, rasterize_shape
from .errors import *  # noqa: F401,F403
from .masks import (
    StructuringElement,
    boundary,
    closing,
    connected_components,
    count_components,
    dilate,
    erode,
    opening,
    read_mask_png,
    write_mask_png,
)
from .metrics import EvalRecord, dice, hausdorff, soft_dice_loss
from .stats import PairedSampleSet, wilcoxon_signed_rank, wilcoxon_test

__version__ = "0.1.0"
