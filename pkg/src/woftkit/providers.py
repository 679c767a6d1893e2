"""Flow and weight providers the tracker is parameterized over.

A flow provider is a callable `provider(request) -> FlowField`; a weight
provider is a callable `provider(flow, request, flow_provider) -> (H, W)
weight array`. The request carries everything a provider might need: both
images, whether the pair is the global (template -> pre-warped frame) or
local (previous frame -> frame) pair, the frame indices, the pre-warp that
produced the target image, the coordinate downscale factor, and the flow
direction. Providers are free to ignore most of it — the pyramidal
Lucas-Kanade provider only looks at the images, while the synthetic
provider only looks at the bookkeeping.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .flow import (
    FB_SIGMA,
    ContaminationSpec,
    FlowField,
    lucas_kanade_flow,
    synthetic_flow,
    weights_fb_consistency,
    weights_uniform,
)
from .geometry import Homography
from .validation import as_rng, derived_seed

_KIND_IDS = {"global": 1, "local": 2}
_DIRECTION_IDS = {"forward": 1, "backward": 2}


@dataclass(frozen=True)
class FlowRequest:
    """One flow query issued by the tracker."""

    source: np.ndarray
    target: np.ndarray
    kind: str  # "global" or "local"
    source_index: int
    target_index: int
    prewarp: Homography | None = None  # warp that produced `target` (global)
    scale: int = 1  # coordinate downscale factor the tracker runs at
    direction: str = "forward"

    def reversed(self) -> "FlowRequest":
        return dataclasses.replace(
            self,
            source=self.target,
            target=self.source,
            direction="backward" if self.direction == "forward" else "forward",
        )


class SyntheticFlowProvider:
    """Ground-truth-derived flow for generated sequences.

    The effective homography for the global pair is `prewarp . H_{0->t}`
    (template pixel -> pre-warped frame pixel) and for the local pair
    `H_{0->t} . H_{0->t-1}^-1`; ground-truth poses are given at full
    resolution and conjugated down when the tracker runs downscaled.
    Contamination is seeded per (kind, frame, direction) so repeated calls
    are identical and the two directions are independently corrupted.

    Difficulty knobs, all off by default; they model how real flow fails,
    which is what separates the pre-warp policies:

    - `motion_penalty`: extra outlier fraction per unit of mean corner
      displacement (as a fraction of the image diagonal, beyond
      `penalty_free_frac`), capped at `penalty_cap` — flow degrades when
      the residual motion it must explain is large;
    - `penalty_magnitude_gain`: scales the outlier magnitude with the
      residual displacement — bad conditions produce wilder vectors, not
      just more of them;
    - `burst_frames` / `burst_outlier_fraction` / `burst_outlier_magnitude`:
      frames whose *global* flow is overwhelmingly corrupted — occlusion
      or blur episodes;
    - `local_bias_px`: constant drift added to local flow in a seeded
      per-provider direction — interpolation bias that accumulates when
      poses are chained frame to frame;
    - `local_outlier_magnitude`: overrides the outlier magnitude for local
      flow only — small-baseline flow fails with wild vectors (thin
      structures, repeated texture) rather than the moderate errors of the
      template match.
    """

    def __init__(
        self,
        gt_poses: list[Homography],
        contamination: ContaminationSpec | None = None,
        motion_penalty: float = 0.0,
        penalty_free_frac: float = 0.02,
        penalty_cap: float = 0.97,
        penalty_magnitude_gain: float = 0.0,
        burst_frames: frozenset[int] | None = None,
        burst_outlier_fraction: float = 0.98,
        burst_outlier_magnitude: float = 80.0,
        local_bias_px: float = 0.0,
        local_outlier_magnitude: float | None = None,
    ) -> None:
        self.gt_poses = list(gt_poses)
        self.contamination = contamination or ContaminationSpec()
        self.motion_penalty = motion_penalty
        self.penalty_free_frac = penalty_free_frac
        self.penalty_cap = penalty_cap
        self.penalty_magnitude_gain = penalty_magnitude_gain
        self.burst_frames = frozenset(burst_frames or ())
        self.burst_outlier_fraction = burst_outlier_fraction
        self.burst_outlier_magnitude = burst_outlier_magnitude
        self.local_bias_px = local_bias_px
        self.local_outlier_magnitude = local_outlier_magnitude
        angle = as_rng(derived_seed(self.contamination.rng_seed, 99)).uniform(
            0.0, 2.0 * np.pi
        )
        self._bias = local_bias_px * np.array([np.cos(angle), np.sin(angle)])

    def _pose(self, index: int, scale: int) -> Homography:
        pose = self.gt_poses[index]
        return pose if scale == 1 else pose.rescale(1.0 / scale)

    def _effective(self, request: FlowRequest) -> Homography:
        if request.kind == "global":
            h = self._pose(request.target_index, request.scale)
            if request.prewarp is not None:
                h = request.prewarp.compose(h)
        else:
            h = self._pose(request.target_index, request.scale).compose(
                self._pose(request.source_index, request.scale).inverse()
            )
        if request.direction == "backward":
            h = h.inverse()
        return h

    def _residual_px(self, request: FlowRequest, h_eff: Homography) -> float:
        """Mean corner displacement the flow field has to explain."""
        hgt, w = request.source.shape[:2]
        corners = np.array(
            [[0.0, 0.0], [w - 1.0, 0.0], [w - 1.0, hgt - 1.0], [0.0, hgt - 1.0]]
        )
        try:
            moved = h_eff.transform(corners)
        except Exception:  # noqa: BLE001 - a wild pose means maximal difficulty
            return float("inf")
        return float(np.mean(np.linalg.norm(moved - corners, axis=1)))

    def _contamination_for(
        self, request: FlowRequest, h_eff: Homography
    ) -> tuple[float, float]:
        base_frac = self.contamination.outlier_fraction
        base_mag = self.contamination.outlier_magnitude
        if request.kind == "local" and self.local_outlier_magnitude is not None:
            base_mag = self.local_outlier_magnitude
        if request.kind == "global" and request.target_index in self.burst_frames:
            return (
                self.burst_outlier_fraction,
                max(base_mag, self.burst_outlier_magnitude),
            )
        if self.motion_penalty <= 0.0:
            return base_frac, base_mag
        hgt, w = request.source.shape[:2]
        residual = self._residual_px(request, h_eff)
        if not np.isfinite(residual):
            return self.penalty_cap, max(base_mag, self.burst_outlier_magnitude)
        frac = residual / float(np.hypot(w, hgt))
        extra = self.motion_penalty * max(0.0, frac - self.penalty_free_frac)
        out_frac = min(self.penalty_cap, base_frac + extra)
        out_mag = max(base_mag, self.penalty_magnitude_gain * residual)
        return out_frac, out_mag

    def __call__(self, request: FlowRequest) -> FlowField:
        h_eff = self._effective(request)
        seed = derived_seed(
            self.contamination.rng_seed,
            _KIND_IDS[request.kind],
            request.target_index,
            _DIRECTION_IDS[request.direction],
        )
        out_frac, out_mag = self._contamination_for(request, h_eff)
        spec = dataclasses.replace(
            self.contamination,
            outlier_fraction=out_frac,
            outlier_magnitude=out_mag,
            rng_seed=seed,
        )
        hgt, w = request.source.shape[:2]
        field = synthetic_flow(h_eff, (w, hgt), spec)
        if request.kind == "local" and self.local_bias_px > 0.0:
            field.u = field.u + self._bias[0]
            field.v = field.v + self._bias[1]
        return field


class LucasKanadeFlowProvider:
    """Classical pyramidal Lucas-Kanade on the request's images."""

    def __init__(self, levels: int = 4, window: int = 21, iterations: int = 5):
        self.levels = levels
        self.window = window
        self.iterations = iterations

    def __call__(self, request: FlowRequest) -> FlowField:
        return lucas_kanade_flow(
            request.source,
            request.target,
            levels=self.levels,
            window=self.window,
            iterations=self.iterations,
        )


class PrecomputedFlowProvider:
    """Flow fields loaded from disk, one file per (kind, frame, direction).

    Files are named `{kind}_{frame:05d}.wflo` for forward flow and
    `{kind}_back_{frame:05d}.wflo` for backward; a missing file raises
    FileNotFoundError naming the frame.
    """

    def __init__(self, directory) -> None:
        self.directory = Path(directory)

    def __call__(self, request: FlowRequest) -> FlowField:
        from .io import load_flow

        stem = (
            f"{request.kind}_{request.target_index:05d}.wflo"
            if request.direction == "forward"
            else f"{request.kind}_back_{request.target_index:05d}.wflo"
        )
        path = self.directory / stem
        if not path.exists():
            raise FileNotFoundError(
                f"no precomputed {request.direction} {request.kind} flow for "
                f"frame {request.target_index}: {path}"
            )
        return load_flow(path)


class UniformWeights:
    """Every valid pixel weighs 1."""

    def __call__(self, flow: FlowField, request: FlowRequest, flow_provider):
        return np.where(flow.valid, weights_uniform(flow.shape), 0.0)


class ForwardBackwardWeights:
    """Forward-backward consistency weights; asks the flow provider for the
    reverse field."""

    def __init__(self, sigma: float = FB_SIGMA):
        self.sigma = sigma

    def __call__(self, flow: FlowField, request: FlowRequest, flow_provider):
        backward = flow_provider(request.reversed())
        return weights_fb_consistency(flow, backward, sigma=self.sigma)
