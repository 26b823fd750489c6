"""Parametric body-model fitting against rendered joint/depth/mask targets.

The package splits into: a body model (shape blendshapes, axis-angle pose,
linear blend skinning), a weak-perspective renderer (hard z-buffered and soft
silhouette), target representations and their file formats, matte/image ops
for clothing cut-off, the fitting losses and staged optimizer, evaluation
metrics, and a command-line driver tying the loop together.
"""

from .body_model import (
    BodyModel,
    BodyParams,
    ModelValidationError,
    PosedBody,
    ToyModelSpec,
    canonicalize_axis_angle,
    forward,
    forward_joints,
    load_model,
    make_toy_model,
    pose_body,
    rodrigues,
    save_model,
)
from .fitting import (
    FDSteps,
    FitConfig,
    FitReport,
    InitError,
    NumericError,
    fit,
    initialize_params,
    objective_gradient,
)
from .losses import (
    DomainError,
    LossWeights,
    PolarityMismatch,
    loss_depth_fit,
    loss_depth_train,
    loss_joints_fit,
    loss_mask_fit,
    loss_mask_train,
    loss_pose_train,
    total_fit_loss,
)
from .metrics import (
    AlignmentError,
    MetricReport,
    aggregate_metrics,
    miou,
    mpjpe,
    mvpe,
    pa_mpjpe,
    procrustes_align,
)
from .rendering import (
    Camera,
    EmptyRender,
    RenderOutput,
    project,
    project_joints,
    rasterize_hard,
    rasterize_soft,
    render_body,
)
from .representations import (
    DimensionMismatch,
    MissingBundleFile,
    PolarityTagError,
    RepBundle,
    decode_heatmaps,
    encode_heatmaps,
    load_bundle,
    load_params,
    save_bundle,
    save_params,
    soft_argmax,
    synthesize_targets,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentError",
    "BodyModel",
    "BodyParams",
    "Camera",
    "DimensionMismatch",
    "DomainError",
    "EmptyRender",
    "FDSteps",
    "FitConfig",
    "FitReport",
    "InitError",
    "LossWeights",
    "MetricReport",
    "MissingBundleFile",
    "ModelValidationError",
    "NumericError",
    "PolarityMismatch",
    "PolarityTagError",
    "PosedBody",
    "RenderOutput",
    "RepBundle",
    "ToyModelSpec",
    "aggregate_metrics",
    "canonicalize_axis_angle",
    "decode_heatmaps",
    "encode_heatmaps",
    "fit",
    "forward",
    "forward_joints",
    "initialize_params",
    "load_bundle",
    "load_model",
    "load_params",
    "loss_depth_fit",
    "loss_depth_train",
    "loss_joints_fit",
    "loss_mask_fit",
    "loss_mask_train",
    "loss_pose_train",
    "make_toy_model",
    "miou",
    "mpjpe",
    "mvpe",
    "objective_gradient",
    "pa_mpjpe",
    "pose_body",
    "procrustes_align",
    "project",
    "project_joints",
    "rasterize_hard",
    "rasterize_soft",
    "render_body",
    "rodrigues",
    "save_bundle",
    "save_model",
    "save_params",
    "soft_argmax",
    "synthesize_targets",
    "total_fit_loss",
]
