"""Tracker state machine: anchoring, loss handling, fallback, determinism."""

import numpy as np
import pytest

from woftkit.estimators import LeastSquaresHomography
from woftkit.exceptions import EmptyMaskError, FrameSizeMismatchError, WoftkitError
from woftkit.flow import ContaminationSpec, FlowField, flow_to_correspondences, synthetic_flow
from woftkit.geometry import Homography, warp_image
from woftkit.providers import ForwardBackwardWeights, SyntheticFlowProvider
from woftkit.synth import default_template_mask, make_sequence, procedural_texture
from woftkit.tracker import (
    PlanarFlowTracker,
    TrackerConfig,
    run_tracker_on_sequence,
)
from woftkit.validation import derived_seed

SIZE = (100, 80)  # width, height of the scripted scenarios


def const_flow(u, v, size=SIZE):
    w, h = size
    return FlowField(np.full((h, w), float(u)), np.full((h, w), float(v)), np.ones((h, w), bool))


def garbage_flow(seed, size=SIZE):
    return synthetic_flow(
        Homography.identity(), size, ContaminationSpec(0.0, 0.98, 60.0, seed)
    )


class ScriptedFlow:
    """Flow provider keyed on (kind, target_index); records every request."""

    def __init__(self, script, default=None):
        self.script = script
        self.default = default
        self.requests = []

    def __call__(self, request):
        self.requests.append(request)
        key = (request.kind, request.target_index)
        if key in self.script:
            entry = self.script[key]
        elif self.default is not None:
            entry = self.default
        else:
            raise WoftkitError(f"no scripted flow for {key}")
        if callable(entry) and not isinstance(entry, FlowField):
            return entry(request)
        return entry


class TestTrackerConfig:
    def test_defaults_and_uses_weights(self):
        cfg = TrackerConfig()
        assert cfg.lost_ratio == 0.20
        assert cfg.uses_weights
        assert not TrackerConfig(estimator_choice="lsq").uses_weights
        assert TrackerConfig(estimator_choice="irls").uses_weights
        assert not TrackerConfig(estimator_choice="ransac").uses_weights

    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            TrackerConfig(lost_ratio=0.0)
        with pytest.raises(ValueError):
            TrackerConfig(inlier_threshold=0.0)
        with pytest.raises(ValueError):
            TrackerConfig(downscale_factor=0)
        with pytest.raises(ValueError):
            TrackerConfig(estimator_choice="svd")
        with pytest.raises(ValueError):
            TrackerConfig(pre_warp_mode="sometimes")
        with pytest.raises(ValueError):
            TrackerConfig(max_correspondences=3)


class TestInitialize:
    def test_unusable_masks_raise(self, grainy):
        img = grainy(size=SIZE)
        tracker = PlanarFlowTracker(TrackerConfig(), lambda req: const_flow(0, 0))
        three = np.zeros((80, 100), bool)
        three[5, 5] = three[6, 8] = three[9, 2] = True
        with pytest.raises(EmptyMaskError):
            tracker.initialize(img, three)
        collinear = np.zeros((80, 100), bool)
        collinear[40, 10:60] = True
        with pytest.raises(EmptyMaskError):
            tracker.initialize(img, collinear)

    def test_step_before_initialize_raises(self):
        tracker = PlanarFlowTracker(TrackerConfig(), lambda req: const_flow(0, 0))
        with pytest.raises(RuntimeError):
            tracker.step(np.zeros((80, 100)))

    def test_frame_size_mismatch_raises(self, grainy):
        img = grainy(size=SIZE)
        tracker = PlanarFlowTracker(TrackerConfig(), lambda req: const_flow(0, 0))
        tracker.initialize(img, default_template_mask(SIZE))
        with pytest.raises(FrameSizeMismatchError):
            tracker.step(grainy(size=(101, 80)))


def test_static_sequence_tracks_at_identity(grainy):
    img = grainy(size=SIZE)
    provider = SyntheticFlowProvider([Homography.identity()] * 5)
    tracker = PlanarFlowTracker(TrackerConfig(), provider)
    poses, results, elapsed = run_tracker_on_sequence(
        tracker, [img] * 5, default_template_mask(SIZE)
    )
    assert len(poses) == 5 and len(results) == 4
    assert np.array_equal(poses[0].matrix, Homography.identity().matrix)
    for r in results:
        assert r.status == "tracking"
        assert not r.used_local_fallback
        assert r.inlier_ratio == 1.0
        assert np.abs(r.pose.matrix - np.eye(3)).max() < 1e-9
    assert elapsed >= 0.0


def boundary_scenario():
    """A flow/weight script whose inlier ratio lands exactly on lost_ratio.

    Eight zero-motion pixels carry weight one; thirty-two incoherent 40px
    vectors carry weight zero. The weighted fit is the identity, but the
    ratio counts every masked pixel: 8/40 = 0.2 on the nose.
    """
    w, h = SIZE
    clean_px = [(10, 8), (89, 8), (89, 71), (10, 71), (50, 6), (50, 73), (8, 40), (91, 40)]
    rng = np.random.default_rng(77)
    out_px = {}
    while len(out_px) < 32:
        x = int(rng.integers(42, 58))
        y = int(rng.integers(33, 47))
        if (x, y) in out_px or (x, y) in clean_px:
            continue
        angle = rng.uniform(0.0, 2.0 * np.pi)
        vec = (40.0 * np.cos(angle), 40.0 * np.sin(angle))
        if 0.0 <= x + vec[0] <= w - 1.0 and 0.0 <= y + vec[1] <= h - 1.0:
            out_px[(x, y)] = vec
    u = np.zeros((h, w))
    v = np.zeros((h, w))
    mask = np.zeros((h, w), bool)
    wfield = np.zeros((h, w))
    for x, y in clean_px:
        mask[y, x] = True
        wfield[y, x] = 1.0
    for (x, y), vec in out_px.items():
        mask[y, x] = True
        u[y, x], v[y, x] = vec
    flow = FlowField(u, v, np.ones((h, w), bool))
    return flow, mask, wfield, clean_px


class TestLostBoundary:
    def test_ratio_on_the_boundary_keeps_tracking(self, grainy):
        flow, mask, wfield, _ = boundary_scenario()
        tracker = PlanarFlowTracker(
            TrackerConfig(),
            lambda req: flow,
            weight_provider=lambda f, req, fp: wfield,
        )
        img = grainy(size=SIZE)
        tracker.initialize(img, mask)
        result = tracker.step(img)
        assert result.inlier_ratio == 0.2
        assert result.status == "tracking"
        assert not result.used_local_fallback
        assert np.abs(result.pose.matrix - np.eye(3)).max() < 1e-9

    def test_ratio_below_the_boundary_goes_lost(self, grainy):
        flow, mask, wfield, clean_px = boundary_scenario()
        x0, y0 = clean_px[0]
        mask = mask.copy()
        mask[y0, x0] = False  # 7 clean of 39 masked: just under the line
        tracker = PlanarFlowTracker(
            TrackerConfig(),
            lambda req: flow,
            weight_provider=lambda f, req, fp: wfield,
        )
        img = grainy(size=SIZE)
        tracker.initialize(img, mask)
        result = tracker.step(img)
        assert result.inlier_ratio == pytest.approx(7 / 39)
        assert result.status == "lost"
        assert result.used_local_fallback


class TestLossAndRecovery:
    def make_tracker(self):
        script = {("global", 1): const_flow(4.0, 0.0)}
        provider = ScriptedFlow(
            script,
            default=lambda req: garbage_flow(
                derived_seed(5, 1 if req.kind == "global" else 2, req.target_index)
            ),
        )
        return PlanarFlowTracker(TrackerConfig(), provider), provider

    def test_anchor_resets_after_max_lost_frames(self, grainy):
        tracker, _ = self.make_tracker()
        img = grainy(size=SIZE)
        tracker.initialize(img, default_template_mask(SIZE))
        first = tracker.step(img)
        assert first.status == "tracking"
        good = tracker.state.last_good_pose
        assert np.abs(good.matrix - Homography.translation(4.0, 0.0).matrix).max() < 1e-9

        for t in range(2, 12):  # ten straight losses: anchor must survive
            result = tracker.step(img)
            assert result.status == "lost"
        assert tracker.state.lost_streak == 10
        assert tracker.state.last_good_index == 1
        assert np.array_equal(tracker.state.last_good_pose.matrix, good.matrix)

        eleventh = tracker.step(img)  # streak 11 > max_lost_frames: start over
        assert eleventh.status == "lost"
        assert tracker.state.last_good_index == 0
        assert np.array_equal(
            tracker.state.last_good_pose.matrix, Homography.identity().matrix
        )


class TestPreWarpModes:
    """The anchor choice is observable through FlowRequest.prewarp."""

    def make_provider(self):
        # one good global frame, garbage afterwards; local flow drifts +1px/frame
        def entry(req):
            if req.kind == "local":
                return const_flow(1.0, 0.0)
            if req.target_index == 1:
                return const_flow(4.0, 0.0)
            return garbage_flow(derived_seed(9, req.target_index))

        return ScriptedFlow({}, default=entry)

    def global_prewarps(self, provider):
        return [r.prewarp for r in provider.requests if r.kind == "global"]

    def test_controlled_mode_freezes_the_anchor_while_lost(self, grainy):
        provider = self.make_provider()
        tracker = PlanarFlowTracker(
            TrackerConfig(pre_warp_mode="controlled"), provider
        )
        img = grainy(size=SIZE)
        tracker.initialize(img, default_template_mask(SIZE))
        for _ in range(4):
            tracker.step(img)
        prewarps = self.global_prewarps(provider)
        assert np.array_equal(prewarps[0].matrix, Homography.identity().matrix)
        expected = Homography.translation(-4.0, 0.0).matrix
        assert np.abs(prewarps[1].matrix - expected).max() < 1e-9
        # frames 3 and 4 are lost, yet the anchor stays pinned to frame 1
        assert np.array_equal(prewarps[2].matrix, prewarps[1].matrix)
        assert np.array_equal(prewarps[3].matrix, prewarps[1].matrix)

    def test_always_mode_chases_the_output(self, grainy):
        provider = self.make_provider()
        tracker = PlanarFlowTracker(TrackerConfig(pre_warp_mode="always"), provider)
        img = grainy(size=SIZE)
        tracker.initialize(img, default_template_mask(SIZE))
        for _ in range(3):
            tracker.step(img)
        prewarps = self.global_prewarps(provider)
        # frame 2 anchors on T(4,0); the lost frame's local fallback adds one
        # more pixel, so frame 3 anchors on T(5,0)
        assert np.abs(prewarps[1].matrix - Homography.translation(-4.0, 0.0).matrix).max() < 1e-9
        assert np.abs(prewarps[2].matrix - Homography.translation(-5.0, 0.0).matrix).max() < 1e-9

    def test_never_mode_only_requests_local_flow(self, grainy):
        provider = self.make_provider()
        tracker = PlanarFlowTracker(TrackerConfig(pre_warp_mode="never"), provider)
        img = grainy(size=SIZE)
        tracker.initialize(img, default_template_mask(SIZE))
        results = [tracker.step(img) for _ in range(4)]
        assert all(r.kind == "local" for r in provider.requests)
        assert all(r.prewarp is None for r in provider.requests)
        for t, r in enumerate(results, start=1):
            assert r.status == "tracking"
            assert r.used_local_fallback
            assert r.pose.matrix[0, 2] == pytest.approx(float(t), abs=1e-9)


def test_correspondence_budget_is_respected(grainy):
    img = grainy(size=SIZE)
    tracker = PlanarFlowTracker(
        TrackerConfig(), lambda req: const_flow(0.0, 0.0)
    )
    tracker.initialize(img, default_template_mask(SIZE))  # 5120 masked pixels
    result = tracker.step(img)
    assert result.n_correspondences == 500


def test_local_fallback_composition_is_reproducible(grainy):
    # reproduce the fallback pose by hand from the same scripted inputs
    img = grainy(size=SIZE)
    cfg = TrackerConfig()
    mask = default_template_mask(SIZE)
    local = const_flow(2.0, 1.0)
    provider = ScriptedFlow(
        {("global", 1): garbage_flow(123), ("local", 1): local}
    )
    tracker = PlanarFlowTracker(cfg, provider)
    tracker.initialize(img, mask)
    result = tracker.step(img)
    assert result.status == "lost"
    assert result.used_local_fallback

    corr = flow_to_correspondences(
        local,
        mask,
        SIZE,
        max_samples=cfg.max_correspondences,
        rng_seed=derived_seed(cfg.rng_seed, 2, 1),
        weights=np.ones((80, 100)),
    )
    est = LeastSquaresHomography(inlier_threshold=cfg.inlier_threshold)
    est.fit(corr.src, corr.dst, sample_weight=corr.weights)
    expected = est.homography_.compose(Homography.identity())
    assert np.array_equal(result.pose.matrix, expected.matrix)


def test_double_failure_holds_the_last_output(grainy):
    def provider(request):
        if request.kind == "global":
            return garbage_flow(7)
        raise WoftkitError("local flow unavailable")

    img = grainy(size=SIZE)
    tracker = PlanarFlowTracker(TrackerConfig(), provider)
    tracker.initialize(img, default_template_mask(SIZE))
    result = tracker.step(img)
    assert result.status == "lost"
    assert np.array_equal(result.pose.matrix, Homography.identity().matrix)


def test_contaminated_run_is_bit_deterministic():
    tex = procedural_texture((64, 48), seed=6)
    rec = make_sequence(tex, length=12, motion_smoothness=0.5)

    def run():
        provider = SyntheticFlowProvider(
            rec.gt_poses, ContaminationSpec(0.5, 0.2, 20.0, 3)
        )
        tracker = PlanarFlowTracker(
            TrackerConfig(), provider, ForwardBackwardWeights(sigma=2.0)
        )
        return run_tracker_on_sequence(tracker, rec.frames, rec.template_mask)

    poses_a, results_a, _ = run()
    poses_b, results_b, _ = run()
    for pa, pb in zip(poses_a, poses_b):
        assert np.array_equal(pa.matrix, pb.matrix)
    for ra, rb in zip(results_a, results_b):
        assert ra.status == rb.status
        assert ra.inlier_ratio == rb.inlier_ratio
        assert ra.n_correspondences == rb.n_correspondences


def test_downscaled_tracking_reports_full_resolution_poses(grainy):
    size = (162, 120)
    base = grainy(size=size)
    gt = [Homography.translation(float(t), 0.0) for t in range(7)]
    frames = [warp_image(h, base)[0] for h in gt]
    mask = np.zeros((120, 162), bool)
    mask[18:102, 24:138] = True
    provider = SyntheticFlowProvider(gt)
    tracker = PlanarFlowTracker(
        TrackerConfig(estimator_choice="lsq", downscale_factor=3), provider
    )
    poses, results, _ = run_tracker_on_sequence(tracker, frames, mask)
    assert all(r.status == "tracking" for r in results)
    final = poses[-1].matrix
    assert final[0, 2] == pytest.approx(6.0, abs=0.5)
    assert final[1, 2] == pytest.approx(0.0, abs=0.5)
