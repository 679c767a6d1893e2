"""Pose-accuracy metrics and sequence-level reports."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import EmptyInputError, EmptyMaskError, LengthMismatchError
from .geometry import Homography, warp_points
from .validation import check_points

CURVE_STOP = 20.0
CURVE_STEP = 0.5


def mask_corners(mask: np.ndarray) -> np.ndarray:
    """Corners of the bounding quadrilateral of a boolean mask, as (4, 2)
    points ordered (xmin,ymin), (xmax,ymin), (xmax,ymax), (xmin,ymax)."""
    ys, xs = np.nonzero(np.asarray(mask, dtype=bool))
    if xs.size == 0:
        raise EmptyMaskError("mask selects no pixels")
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])


def alignment_error(
    h: Homography, h_star: Homography, ref_points
) -> float:
    """Root mean squared displacement between the two projections of the
    reference points: sqrt((1/4) * sum |h*(x_i) - h(x_i)|^2)."""
    pts = check_points(ref_points, "ref_points")
    d = warp_points(h_star, pts) - warp_points(h, pts)
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def reprojection_loss(h: Homography, h_gt: Homography, points) -> float:
    """Mean distance between each point and its image under h^-1 h_gt."""
    pts = check_points(points, "points")
    mapped = warp_points(h.inverse().compose(h_gt), pts)
    return float(np.mean(np.linalg.norm(pts - mapped, axis=1)))


def precision_at(errors, thresholds) -> dict[float, float]:
    """Fraction of errors at or below each threshold. `None` entries (frames
    without ground truth) are excluded from the denominator."""
    scored = np.array([e for e in errors if e is not None], dtype=float)
    if scored.size == 0:
        raise EmptyInputError("no scored frames to aggregate")
    return {float(t): float(np.mean(scored <= t)) for t in thresholds}


def precision_curve(
    errors, stop: float = CURVE_STOP, step: float = CURVE_STEP
) -> list[tuple[float, float]]:
    thresholds = np.arange(0.0, stop + step / 2, step)
    p = precision_at(errors, thresholds)
    return [(float(t), p[float(t)]) for t in thresholds]


@dataclass
class EvalReport:
    """Per-sequence evaluation result."""

    per_frame_error: list  # alignment error per frame; None where GT missing
    p_at: dict[float, float]
    curve: list[tuple[float, float]]
    n_frames: int
    n_scored: int
    runtime: dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "per_frame_error": [
                None if e is None else float(e) for e in self.per_frame_error
            ],
            "p_at": {f"{t:g}": v for t, v in self.p_at.items()},
            "curve": [[t, p] for t, p in self.curve],
            "n_frames": self.n_frames,
            "n_scored": self.n_scored,
            "runtime": dict(self.runtime),
        }


def evaluate_poses(
    poses: list[Homography],
    gt_poses: list,
    ref_points,
    thresholds=(5.0, 15.0),
    runtime: dict[str, float] | None = None,
) -> EvalReport:
    """Score estimated poses against ground truth at fixed reference points.

    `gt_poses` entries may be None for unannotated frames; those frames are
    skipped. Lengths must match frame for frame.
    """
    if len(poses) != len(gt_poses):
        raise LengthMismatchError(
            f"{len(poses)} poses vs {len(gt_poses)} ground-truth entries"
        )
    errors: list[float | None] = []
    for pose, gt in zip(poses, gt_poses):
        if gt is None:
            errors.append(None)
        else:
            errors.append(alignment_error(pose, gt, ref_points))
    return EvalReport(
        per_frame_error=errors,
        p_at=precision_at(errors, thresholds),
        curve=precision_curve(errors),
        n_frames=len(poses),
        n_scored=sum(e is not None for e in errors),
        runtime=runtime or {},
    )


def evaluate_sequence(record, poses, thresholds=(5.0, 15.0), runtime=None) -> EvalReport:
    """Convenience wrapper: reference points from the template mask's
    bounding quadrilateral, ground truth from the sequence record."""
    return evaluate_poses(
        poses,
        record.gt_poses,
        mask_corners(record.template_mask),
        thresholds=thresholds,
        runtime=runtime,
    )


def aggregate_reports(reports: list[EvalReport]) -> dict:
    """Mean precision across sequences plus the per-sequence breakdown."""
    if not reports:
        raise EmptyInputError("no reports to aggregate")
    keys = sorted(reports[0].p_at)
    mean_p = {
        f"{k:g}": float(np.mean([r.p_at[k] for r in reports])) for k in keys
    }
    curve_t = [t for t, _ in reports[0].curve]
    mean_curve = [
        (t, float(np.mean([r.curve[i][1] for r in reports])))
        for i, t in enumerate(curve_t)
    ]
    return {
        "n_sequences": len(reports),
        "mean_p_at": mean_p,
        "mean_curve": [[t, p] for t, p in mean_curve],
        "sequences": [r.as_dict() for r in reports],
    }


def psnr(reference: np.ndarray, test: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for intensities in [0, 1]."""
    mse = float(np.mean((np.asarray(reference, float) - np.asarray(test, float)) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))
