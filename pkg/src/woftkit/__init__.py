"""Planar object tracking from weighted optical flow.

The package splits into layers: exact projective geometry and warping
(`geometry`), weighted/robust homography estimators over point
correspondences (`estimators`) with analytic weight gradients
(`gradients`), dense flow utilities and confidence weights (`flow`),
pluggable flow/weight providers (`providers`), the tracking state machine
(`tracker`), synthetic data generation (`synth`), scoring (`evaluation`),
an ablation harness (`ablation`), file formats (`io`), and a CLI (`cli`).
"""

__version__ = "0.1.0"

from .exceptions import (
    DegenerateConfigurationError,
    DegenerateResultError,
    EmptyInputError,
    EmptyMaskError,
    FrameSizeMismatchError,
    GenerationFailedError,
    ImageSizeMismatchError,
    InsufficientSupportError,
    LengthMismatchError,
    NoValidHypothesisError,
    PointAtInfinityError,
    TooFewCorrespondencesError,
    WoftkitError,
)
from .geometry import (
    Homography,
    bilinear_sample,
    downscale_image,
    resize_bilinear,
    warp_image,
    warp_point,
    warp_points,
)
from .estimators import (
    IrlsHuberHomography,
    LeastSquaresHomography,
    RansacHomography,
    build_constraint_system,
    hartley_normalization,
    huber_multiplier,
    inlier_stats,
    transfer_errors,
)
from .gradients import (
    GradientCheckReport,
    finite_difference_loss_gradient,
    finite_difference_weight_jacobian,
    homography_weight_jacobian,
    loss_weight_gradient,
    run_gradient_check,
)
from .flow import (
    ContaminationSpec,
    Correspondences,
    FlowField,
    flow_to_correspondences,
    lucas_kanade_flow,
    synthetic_flow,
    weights_fb_consistency,
    weights_residual,
    weights_uniform,
)
from .providers import (
    FlowRequest,
    ForwardBackwardWeights,
    LucasKanadeFlowProvider,
    PrecomputedFlowProvider,
    SyntheticFlowProvider,
    UniformWeights,
)
from .tracker import (
    FrameResult,
    PlanarFlowTracker,
    TrackerConfig,
    TrackerState,
    run_tracker_on_sequence,
)
from .synth import (
    PairSpec,
    SequenceRecord,
    default_template_mask,
    degrade,
    exact_homography,
    make_pair,
    make_sequence,
    motion_blur_kernel,
    procedural_texture,
    random_homography,
)
from .evaluation import (
    EvalReport,
    aggregate_reports,
    alignment_error,
    evaluate_poses,
    evaluate_sequence,
    mask_corners,
    precision_at,
    precision_curve,
    psnr,
    reprojection_loss,
)
from .ablation import AblationSpec, run_ablation

__all__ = [name for name in dir() if not name.startswith("_")]
