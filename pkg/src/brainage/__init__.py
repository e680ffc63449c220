"""Brain-age prediction from 3D volumetric images.

A from-scratch 3D convolutional network and a linear-kernel Gaussian
process regressor predict chronological age from volumes; downstream
statistics treat the prediction error (brain-PAD) as a biomarker:
accuracy metrics, twin-based heritability, and between-session
reliability. A synthetic phantom generator makes the whole pipeline
testable without any imaging data.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .engine import (
    SGD,
    BatchNorm3d,
    Conv3d,
    Flatten,
    GradCheckReport,
    Linear,
    MaxPool3d,
    Parameter,
    ReLU,
    Sequential,
    gradcheck,
    mae_loss,
)
from .errors import (
    BrainAgeError,
    FormatError,
    InputOutputError,
    NumericError,
    ValidationError,
)
from .gpr import (
    GprModel,
    gpr_fit,
    gpr_predict,
    linear_kernel,
    load_gpr,
    log_marginal_likelihood,
    save_gpr,
)
from .manifest import (
    MANIFEST_HEADER,
    PREDICTIONS_HEADER,
    ManifestRow,
    read_manifest,
    read_predictions,
    split_cohort,
    write_manifest,
    write_predictions,
)
from .model import (
    ArchitectureSpec,
    EpochRecord,
    FusedModel,
    SingleBranchModel,
    TrainConfig,
    TrainResult,
    augment,
    build_fused,
    build_fused_from_spec,
    build_single_branch,
    lr_at_epoch,
    predict,
    stack_volumes,
    train,
)
from .nifti import read_nifti, write_nifti
from .phantom import (
    PhantomParams,
    ScannerEffect,
    TwinSimParams,
    apply_scanner_effect,
    generate_cohort,
    generate_phantom,
    generate_rescan_cohort,
    generate_twin_cohort,
    sample_twin_offsets,
)
from .stats import (
    AceFit,
    IccResult,
    MetricsReport,
    PredictionRecord,
    TwinPair,
    age_correct,
    bootstrap_h2_se,
    brain_pad,
    compute_metrics,
    fit_variance_model,
    heritability,
    icc_2_1,
    reliability_report,
    select_model_aic,
)
from .volume import RigidTransform, TargetGrid, Volume3D, resample, to_canonical

__version__ = "0.1.0"

__all__ = [
    "AceFit",
    "ArchitectureSpec",
    "BatchNorm3d",
    "BrainAgeError",
    "Conv3d",
    "EpochRecord",
    "Flatten",
    "FormatError",
    "FusedModel",
    "GprModel",
    "GradCheckReport",
    "IccResult",
    "InputOutputError",
    "Linear",
    "MANIFEST_HEADER",
    "ManifestRow",
    "MaxPool3d",
    "MetricsReport",
    "NumericError",
    "PREDICTIONS_HEADER",
    "Parameter",
    "PhantomParams",
    "PredictionRecord",
    "ReLU",
    "RigidTransform",
    "SGD",
    "ScannerEffect",
    "Sequential",
    "SingleBranchModel",
    "TargetGrid",
    "TrainConfig",
    "TrainResult",
    "TwinPair",
    "TwinSimParams",
    "ValidationError",
    "Volume3D",
    "age_correct",
    "apply_scanner_effect",
    "augment",
    "bootstrap_h2_se",
    "brain_pad",
    "build_fused",
    "build_fused_from_spec",
    "build_single_branch",
    "compute_metrics",
    "fit_variance_model",
    "generate_cohort",
    "generate_phantom",
    "generate_rescan_cohort",
    "generate_twin_cohort",
    "gpr_fit",
    "gpr_predict",
    "gradcheck",
    "heritability",
    "icc_2_1",
    "linear_kernel",
    "load_checkpoint",
    "load_gpr",
    "log_marginal_likelihood",
    "lr_at_epoch",
    "mae_loss",
    "predict",
    "read_manifest",
    "read_nifti",
    "read_predictions",
    "reliability_report",
    "resample",
    "sample_twin_offsets",
    "save_checkpoint",
    "save_gpr",
    "select_model_aic",
    "split_cohort",
    "stack_volumes",
    "to_canonical",
    "train",
    "write_manifest",
    "write_nifti",
    "write_predictions",
]
