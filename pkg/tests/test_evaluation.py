"""Scoring: alignment error, precision aggregation, report plumbing."""

import numpy as np
import pytest

from woftkit.evaluation import (
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
from woftkit.exceptions import EmptyInputError, EmptyMaskError, LengthMismatchError
from woftkit.geometry import Homography
from woftkit.synth import make_sequence, procedural_texture

CORNERS = np.array([[0.0, 0.0], [99.0, 0.0], [99.0, 79.0], [0.0, 79.0]])


class TestAlignmentError:
    def test_identical_poses_score_zero(self):
        h = Homography.translation(4.0, -7.0)
        assert alignment_error(h, h, CORNERS) == 0.0

    def test_pure_translation_is_its_magnitude(self):
        # every reference point moves by exactly (3, 4), so RMS = 5
        err = alignment_error(
            Homography.identity(), Homography.translation(3.0, 4.0), CORNERS
        )
        assert err == 5.0

    def test_symmetric(self):
        a = Homography.translation(2.0, 1.0)
        b = Homography(np.array([[1.1, 0.02, -3.0], [0.0, 0.95, 2.0], [0.0, 0.0, 1.0]]))
        assert alignment_error(a, b, CORNERS) == alignment_error(b, a, CORNERS)

    def test_matches_direct_formula(self):
        a = Homography(np.array([[1.05, 0.0, 2.0], [0.1, 0.9, -1.0], [1e-4, 0.0, 1.0]]))
        b = Homography.translation(1.0, 1.0)
        d = a.transform(CORNERS) - b.transform(CORNERS)
        expected = float(np.sqrt(np.mean(np.sum(d * d, axis=1))))
        assert alignment_error(b, a, CORNERS) == pytest.approx(expected, rel=1e-12)


class TestReprojectionLoss:
    def test_translation_offset(self):
        loss = reprojection_loss(
            Homography.identity(), Homography.translation(3.0, 4.0), CORNERS
        )
        assert loss == 5.0

    def test_exact_pose_scores_zero(self):
        h = Homography(np.array([[1.02, 0.01, 5.0], [0.0, 0.98, -2.0], [0.0, 0.0, 1.0]]))
        assert reprojection_loss(h, h, CORNERS) < 1e-12


class TestPrecision:
    def test_fractions_at_thresholds(self):
        p = precision_at([1.0, 2.0, 3.0, 10.0], (5.0, 15.0))
        assert p[5.0] == 0.75
        assert p[15.0] == 1.0

    def test_threshold_is_inclusive(self):
        p = precision_at([5.0], (4.9, 5.0))
        assert p[4.9] == 0.0
        assert p[5.0] == 1.0

    def test_none_entries_are_excluded(self):
        p = precision_at([None, 1.0, None, 20.0], (5.0,))
        assert p[5.0] == 0.5

    def test_empty_input_raises(self):
        with pytest.raises(EmptyInputError):
            precision_at([None, None], (5.0,))

    def test_curve_shape_and_monotonicity(self):
        errors = list(np.linspace(0.0, 18.0, 37))
        curve = precision_curve(errors)
        assert len(curve) == 41
        assert curve[0][0] == 0.0 and curve[-1][0] == 20.0
        ps = [p for _, p in curve]
        assert all(b >= a for a, b in zip(ps, ps[1:]))
        assert ps[-1] == 1.0


class TestMaskCorners:
    def test_rectangle_bbox_in_order(self):
        mask = np.zeros((30, 40), dtype=bool)
        mask[5:21, 7:33] = True
        corners = mask_corners(mask)
        assert np.array_equal(
            corners, np.array([[7.0, 5.0], [32.0, 5.0], [32.0, 20.0], [7.0, 20.0]])
        )

    def test_empty_mask_raises(self):
        with pytest.raises(EmptyMaskError):
            mask_corners(np.zeros((10, 10), dtype=bool))


class TestEvaluatePoses:
    def test_translation_sequence(self):
        gt = [Homography.translation(float(t), 0.0) for t in range(8)]
        est = list(gt)
        est[3] = Homography.translation(3.0, 4.9)  # 4.9px off
        est[5] = Homography.translation(5.0, 30.0)  # way off
        report = evaluate_poses(est, gt, CORNERS)
        assert report.n_frames == 8 and report.n_scored == 8
        assert report.per_frame_error[0] == 0.0
        assert report.per_frame_error[3] == pytest.approx(4.9)
        assert report.p_at[5.0] == pytest.approx(7 / 8)
        assert report.p_at[15.0] == pytest.approx(7 / 8)

    def test_none_ground_truth_is_skipped(self):
        gt = [Homography.identity(), None, Homography.identity()]
        est = [Homography.identity()] * 3
        report = evaluate_poses(est, gt, CORNERS)
        assert report.per_frame_error[1] is None
        assert report.n_scored == 2
        assert report.p_at[5.0] == 1.0

    def test_length_mismatch_raises(self):
        with pytest.raises(LengthMismatchError):
            evaluate_poses([Homography.identity()], [None, None], CORNERS)

    def test_as_dict_formats_threshold_keys(self):
        report = evaluate_poses(
            [Homography.identity()], [Homography.identity()], CORNERS
        )
        d = report.as_dict()
        assert set(d["p_at"]) == {"5", "15"}
        assert d["n_frames"] == 1
        assert isinstance(d["curve"][0], list)


def test_evaluate_sequence_end_to_end():
    tex = procedural_texture((48, 36), seed=1)
    rec = make_sequence(tex, length=5, motion_smoothness=0.4)
    report = evaluate_sequence(rec, rec.gt_poses)
    assert report.n_scored == 5
    assert report.p_at[5.0] == 1.0
    assert max(report.per_frame_error) < 1e-9


def test_aggregate_reports_means_and_keys():
    gt = [Homography.identity()] * 4
    perfect = evaluate_poses(gt, gt, CORNERS)
    half = evaluate_poses(
        [Homography.identity(), Homography.translation(0.0, 30.0)] * 2, gt, CORNERS
    )
    agg = aggregate_reports([perfect, half])
    assert agg["n_sequences"] == 2
    assert agg["mean_p_at"]["5"] == pytest.approx(0.75)
    assert agg["mean_p_at"]["15"] == pytest.approx(0.75)
    assert len(agg["sequences"]) == 2
    assert agg["mean_curve"][-1][0] == 20.0
    with pytest.raises(EmptyInputError):
        aggregate_reports([])


class TestPsnr:
    def test_identical_images_are_infinite(self):
        img = np.full((8, 8), 0.3)
        assert psnr(img, img) == float("inf")

    def test_known_mse(self):
        a = np.zeros((10, 10))
        b = np.full((10, 10), 0.1)  # MSE = 0.01 -> 20 dB
        assert psnr(a, b) == pytest.approx(20.0)
