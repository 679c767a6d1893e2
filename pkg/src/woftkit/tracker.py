"""Planar tracking state machine over pluggable flow and weight providers.

Per frame: pre-warp by the inverse anchor pose so residual motion is
small, run flow from the template to the pre-warped frame, fit a
homography, and gate on the inlier ratio. Frames that fail the gate fall
back to composing a frame-to-frame local-flow homography onto the
previous pose; a long lost streak resets the anchor to identity.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .estimators import (
    IrlsHuberHomography,
    LeastSquaresHomography,
    RansacHomography,
)
from .exceptions import (
    EmptyMaskError,
    FrameSizeMismatchError,
    WoftkitError,
)
from .flow import Correspondences, flow_to_correspondences
from .geometry import Homography, downscale_image, warp_image
from .providers import FlowRequest, UniformWeights
from .validation import check_image, check_mask, derived_seed

ESTIMATOR_CHOICES = ("lsq", "weighted_lsq", "irls", "ransac")
PRE_WARP_MODES = ("never", "always", "controlled")

_GLOBAL_STREAM = 1
_LOCAL_STREAM = 2


@dataclass(frozen=True)
class TrackerConfig:
    inlier_threshold: float = 5.0
    lost_ratio: float = 0.20
    max_lost_frames: int = 10
    max_correspondences: int = 500
    downscale_factor: int = 1
    estimator_choice: str = "weighted_lsq"
    pre_warp_mode: str = "controlled"
    rng_seed: int = 0
    huber_delta: float = 5.0
    irls_max_iter: int = 20
    irls_tol: float = 1e-9
    ransac_max_hypotheses: int = 1000
    ransac_confidence: float = 0.999

    def __post_init__(self):
        if self.inlier_threshold <= 0:
            raise ValueError("inlier_threshold must be positive")
        if not 0.0 < self.lost_ratio < 1.0:
            raise ValueError("lost_ratio must be in (0, 1)")
        if self.max_lost_frames < 0:
            raise ValueError("max_lost_frames must be non-negative")
        if self.max_correspondences < 4:
            raise ValueError("max_correspondences must be at least 4")
        if self.downscale_factor < 1 or int(self.downscale_factor) != self.downscale_factor:
            raise ValueError("downscale_factor must be a positive integer")
        if self.estimator_choice not in ESTIMATOR_CHOICES:
            raise ValueError(f"unknown estimator_choice {self.estimator_choice!r}")
        if self.pre_warp_mode not in PRE_WARP_MODES:
            raise ValueError(f"unknown pre_warp_mode {self.pre_warp_mode!r}")

    @property
    def uses_weights(self) -> bool:
        return self.estimator_choice in ("weighted_lsq", "irls")


@dataclass
class TrackerState:
    """Mutable per-sequence state; poses are kept at working resolution."""

    template: np.ndarray
    mask: np.ndarray
    last_good_index: int = 0
    last_good_pose: Homography = field(default_factory=Homography.identity)
    last_output: Homography = field(default_factory=Homography.identity)
    last_frame: np.ndarray | None = None
    lost_streak: int = 0
    frame_index: int = 0
    status: str = "tracking"


@dataclass(frozen=True)
class FrameResult:
    """Per-frame outcome; the pose is always present and at full resolution."""

    frame_index: int
    pose: Homography
    status: str
    inlier_ratio: float
    used_local_fallback: bool
    n_correspondences: int


def _mask_usable(mask: np.ndarray) -> bool:
    ys, xs = np.nonzero(mask)
    if xs.size < 4:
        return False
    pts = np.stack([xs, ys], axis=1).astype(np.float64)
    centered = pts - pts.mean(axis=0)
    return np.linalg.matrix_rank(centered, tol=1e-9) >= 2


class PlanarFlowTracker:
    """Tracks one planar region through a frame stream.

    The tracker owns the state machine; dense motion comes from
    `flow_provider(request)` and per-pixel confidences from
    `weight_provider(flow, request, flow_provider)`. Weights are only
    requested for estimators that consume them.
    """

    def __init__(self, config: TrackerConfig, flow_provider, weight_provider=None):
        self.config = config
        self.flow_provider = flow_provider
        self.weight_provider = weight_provider or UniformWeights()
        self.state: TrackerState | None = None
        self._full_shape: tuple[int, int] | None = None
        self._estimator = self._build_estimator(config)

    @staticmethod
    def _build_estimator(cfg: TrackerConfig):
        if cfg.estimator_choice in ("lsq", "weighted_lsq"):
            return LeastSquaresHomography(inlier_threshold=cfg.inlier_threshold)
        if cfg.estimator_choice == "irls":
            return IrlsHuberHomography(
                delta=cfg.huber_delta,
                max_iter=cfg.irls_max_iter,
                tol=cfg.irls_tol,
                inlier_threshold=cfg.inlier_threshold,
            )
        return RansacHomography(
            residual_threshold=cfg.inlier_threshold,
            max_hypotheses=cfg.ransac_max_hypotheses,
            confidence=cfg.ransac_confidence,
            inlier_threshold=cfg.inlier_threshold,
            random_state=cfg.rng_seed,
        )

    # -- setup ---------------------------------------------------------------

    def initialize(self, template: np.ndarray, mask: np.ndarray) -> TrackerState:
        template = check_image(template)
        mask = check_mask(mask, template.shape[:2])
        self._full_shape = template.shape[:2]
        s = self.config.downscale_factor
        if s > 1:
            template = downscale_image(template, s)
            mask = mask[::s, ::s]
        if not _mask_usable(mask):
            raise EmptyMaskError(
                "mask must cover at least 4 non-collinear pixels at the "
                "working resolution"
            )
        self.state = TrackerState(template=template, mask=mask, last_frame=template)
        return self.state

    # -- helpers -------------------------------------------------------------

    def _fit(self, corr: Correspondences):
        """Returns (homography, inlier_ratio) or None on any estimation failure."""
        if len(corr) == 0:
            return None
        try:
            if self.config.uses_weights:
                self._estimator.fit(corr.src, corr.dst, sample_weight=corr.weights)
            else:
                self._estimator.fit(corr.src, corr.dst)
        except WoftkitError:
            return None
        return self._estimator.homography_, float(self._estimator.inlier_ratio_)

    def _correspondences(
        self, flow, request: FlowRequest, mask: np.ndarray, stream: int, target_valid=None
    ) -> Correspondences:
        weights = None
        if self.config.uses_weights:
            weights = self.weight_provider(flow, request, self.flow_provider)
        h, w = request.target.shape[:2]
        return flow_to_correspondences(
            flow,
            mask,
            (w, h),
            max_samples=self.config.max_correspondences,
            rng_seed=derived_seed(self.config.rng_seed, stream, request.target_index),
            weights=weights,
            target_valid=target_valid,
        )

    def _estimate_global(self, frame_small: np.ndarray, t: int, anchor: Homography):
        try:
            prewarp = anchor.inverse()
            warped, valid = warp_image(prewarp, frame_small)
        except WoftkitError:
            # a degenerate anchor pose means no usable pre-warp this frame
            return None, 0
        request = FlowRequest(
            source=self.state.template,
            target=warped,
            kind="global",
            source_index=0,
            target_index=t,
            prewarp=prewarp,
            scale=self.config.downscale_factor,
        )
        try:
            flow = self.flow_provider(request)
            corr = self._correspondences(
                flow, request, self.state.mask, _GLOBAL_STREAM, target_valid=valid
            )
            fit = self._fit(corr)
            if fit is None:
                return None, len(corr)
            residual, ratio = fit
            return (anchor.compose(residual), ratio), len(corr)
        except WoftkitError:
            return None, 0

    def _estimate_local(self, frame_small: np.ndarray, t: int):
        state = self.state
        try:
            prev_mask_f, _ = warp_image(state.last_output, state.mask.astype(np.float64))
        except WoftkitError:
            # chained drift can degenerate the stored pose; local flow then
            # has no usable footprint and the step is a hard failure
            return None, 0
        prev_mask = prev_mask_f > 0.5
        request = FlowRequest(
            source=state.last_frame,
            target=frame_small,
            kind="local",
            source_index=t - 1,
            target_index=t,
            scale=self.config.downscale_factor,
        )
        try:
            flow = self.flow_provider(request)
            corr = self._correspondences(flow, request, prev_mask, _LOCAL_STREAM)
            fit = self._fit(corr)
            if fit is None:
                return None, len(corr)
            step_h, ratio = fit
            return (step_h.compose(state.last_output), ratio), len(corr)
        except WoftkitError:
            return None, 0

    # -- stepping ------------------------------------------------------------

    def step(self, frame: np.ndarray) -> FrameResult:
        if self.state is None:
            raise RuntimeError("tracker is not initialized")
        frame = check_image(frame)
        if frame.shape[:2] != self._full_shape:
            raise FrameSizeMismatchError(
                f"frame shape {frame.shape[:2]} does not match template "
                f"{self._full_shape}"
            )
        s = self.config.downscale_factor
        frame_small = downscale_image(frame, s) if s > 1 else frame
        state = self.state
        t = state.frame_index + 1
        mode = self.config.pre_warp_mode

        if mode == "never":
            result = self._step_local_only(frame_small, t)
        else:
            anchor = state.last_output if mode == "always" else state.last_good_pose
            result = self._step_with_global(frame_small, t, anchor)

        state.last_frame = frame_small
        state.frame_index = t
        state.last_output = result[0]
        state.status = result[1]
        pose_full = result[0].rescale(float(s)) if s > 1 else result[0]
        return FrameResult(
            frame_index=t,
            pose=pose_full,
            status=result[1],
            inlier_ratio=result[2],
            used_local_fallback=result[3],
            n_correspondences=result[4],
        )

    def _step_with_global(self, frame_small, t: int, anchor: Homography):
        state = self.state
        cfg = self.config
        est, n_global = self._estimate_global(frame_small, t, anchor)
        if est is not None:
            pose, ratio = est
            if ratio >= cfg.lost_ratio:
                state.last_good_index = t
                state.last_good_pose = pose
                state.lost_streak = 0
                return pose, "tracking", ratio, False, n_global
        ratio = est[1] if est is not None else 0.0
        local, _ = self._estimate_local(frame_small, t)
        pose = local[0] if local is not None else state.last_output
        state.lost_streak += 1
        if state.lost_streak > cfg.max_lost_frames:
            # Long occlusion: anchoring on a stale pose is worse than starting
            # over from the untouched frame.
            state.last_good_index = 0
            state.last_good_pose = Homography.identity()
        return pose, "lost", ratio, True, n_global

    def _step_local_only(self, frame_small, t: int):
        state = self.state
        local, n_local = self._estimate_local(frame_small, t)
        if local is None:
            state.lost_streak += 1
            return state.last_output, "lost", 0.0, True, n_local
        pose, ratio = local
        if ratio >= self.config.lost_ratio:
            state.lost_streak = 0
            status = "tracking"
        else:
            state.lost_streak += 1
            status = "lost"
        return pose, status, ratio, True, n_local


def run_tracker_on_sequence(
    tracker: PlanarFlowTracker,
    frames: list[np.ndarray],
    mask: np.ndarray,
) -> tuple[list[Homography], list[FrameResult], float]:
    """Initialize on frames[0] and step through the rest.

    Returns (poses, results, seconds); poses[0] is the identity so the
    list aligns with the frame list.
    """
    start = time.perf_counter()
    tracker.initialize(frames[0], mask)
    results = [tracker.step(f) for f in frames[1:]]
    elapsed = time.perf_counter() - start
    poses = [Homography.identity()] + [r.pose for r in results]
    return poses, results, elapsed
