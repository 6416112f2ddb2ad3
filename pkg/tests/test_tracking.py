from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcmot.association import MatchResult
from rcmot.calibration import CalibrationConfig, calibrate
from rcmot.detections import BoundingBox, CameraDetection, FramePair, RadarDetection
from rcmot.errors import InvalidInputError
from rcmot.geometry import polar_to_cartesian
from rcmot.simulator import (
    FailureWindow,
    SensorNoiseModel,
    straight_line_scenario,
    synthesize_scene,
    wandering_scenario,
)
from rcmot.tracking import (
    BranchTracker,
    FusedDetection,
    KalmanState,
    MultiBranchTracker,
    TrackerConfig,
    fuse_detections,
    kf_predict,
    kf_update,
    process_noise,
    run_tracker,
)


def _state(x, p=None):
    return KalmanState(np.array(x, dtype=float), np.eye(4) if p is None else p)


# -- Kalman filter ------------------------------------------------------------------------


def test_predict_pure_integration():
    s = kf_predict(_state([0, 0, 1, 0]), 1.0, accel_std=0.0)
    assert np.array_equal(s.x, [1.0, 0.0, 1.0, 0.0])


def test_predict_stationary():
    s = kf_predict(_state([2, 3, 0, 0]), 5.0, accel_std=0.0)
    assert np.array_equal(s.x, [2.0, 3.0, 0.0, 0.0])


def test_predict_covariance_against_independent_product():
    # white acceleration as a per-axis noise gain G = [dt^2/2, dt]
    dt, sigma = 1.0, 1.0
    g = np.array([[dt**2 / 2, 0], [0, dt**2 / 2], [dt, 0], [0, dt]])
    f = np.array([[1, 0, dt, 0], [0, 1, 0, dt], [0, 0, 1, 0], [0, 0, 0, 1]], dtype=float)
    want = f @ np.eye(4) @ f.T + sigma**2 * g @ g.T
    s = kf_predict(_state([0, 0, 0, 0]), dt, sigma)
    assert s.P[0, 0] == pytest.approx(1 + dt**2 + dt**4 / 4) == 2.25
    assert np.allclose(s.P, want, atol=1e-15)
    g2 = np.array([[0.125, 0], [0, 0.125], [0.5, 0], [0, 0.5]])  # dt = 0.5
    assert np.allclose(process_noise(0.5, 2.0), 4.0 * g2 @ g2.T, atol=1e-15)


def test_predict_rejects_nonpositive_dt():
    with pytest.raises(InvalidInputError):
        kf_predict(_state([0, 0, 0, 0]), 0.0)


def test_update_perfect_measurement():
    s = kf_update(_state([0, 0, 0, 0]), (5.0, 5.0), 1e-12)
    assert s.position == pytest.approx((5.0, 5.0), abs=1e-9)


def test_update_uninformative_measurement():
    prior = _state([1.0, 2.0, 0.5, 0.0])
    s = kf_update(prior, (50.0, -50.0), 1e9)
    assert np.allclose(s.x, prior.x, rtol=1e-6, atol=1e-6)
    assert np.allclose(s.P, prior.P, rtol=1e-6)


def test_update_hand_gain():
    s = kf_update(_state([0, 0, 0, 0]), (1.0, 1.0), 1.0)
    assert s.position == pytest.approx((0.5, 0.5))
    assert s.P[0, 0] == pytest.approx(0.5)
    with pytest.raises(InvalidInputError):
        kf_update(s, (math.nan, 0.0), 1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_covariance_stays_symmetric_psd(seed):
    rng = np.random.default_rng(seed)
    s = _state(rng.normal(size=4), np.diag(rng.uniform(0.01, 100, size=4)))
    for _ in range(200):
        s = kf_predict(s, float(rng.uniform(0.01, 2.0)), float(rng.uniform(0, 5)))
        s = kf_update(s, tuple(rng.normal(scale=50, size=2)), float(10 ** rng.uniform(-4, 3)))
        assert np.array_equal(s.P, s.P.T)
        assert np.linalg.eigvalsh(s.P).min() >= -1e-9


def test_noiseless_linear_motion_converges():
    s = KalmanState(np.zeros(4), np.diag([100.0, 100.0, 25.0, 25.0]))
    truth = lambda t: (3.0 + 1.5 * t, -2.0 + 0.5 * t)  # noqa: E731
    errs = []
    for k in range(10):
        if k:
            s = kf_predict(s, 0.1, accel_std=0.0)
        s = kf_update(s, truth(0.1 * k), 1e-12)
        errs.append(math.dist(s.position, truth(0.1 * k)))
    assert math.sqrt(np.mean(np.square(errs[-1:]))) < 1e-6


# -- lifecycle -------------------------------------------------------------------------------


def _det(x, y, cat="car", source="fused"):
    if source == "fused":
        return FusedDetection((x, y), cat, "fused", 0, 0)
    return FusedDetection((x, y), cat, source)


def test_new_detection_spawns_tentative_track():
    bt = BranchTracker()
    assert bt.step(0.0, [_det(0, 10)]) == []
    assert len(bt.tracks) == 1 and bt.tracks[0].status == "tentative"


def test_confirmation_on_third_hit():
    bt = BranchTracker()
    bt.step(0.0, [_det(0, 10)])
    bt.step(0.1, [_det(0, 10)])
    assert bt.tracks[0].status == "tentative"
    snaps = bt.step(0.2, [_det(0, 10)])
    assert bt.tracks[0].status == "confirmed"
    assert [s.id for s in snaps] == [1]


def test_deletion_after_max_misses_plus_one():
    bt = BranchTracker()
    for k in range(3):
        bt.step(0.1 * k, [_det(0, 10)])
    for k in range(3, 8):
        bt.step(0.1 * k, [])
        assert len(bt.tracks) == 1
    bt.step(0.8, [])
    assert bt.tracks == []
    assert [t.id for t in bt.deleted] == [1]


def test_ids_never_reused_and_category_refresh():
    bt = BranchTracker()
    bt.step(0.0, [_det(0, 10, "car")])
    bt.step(0.1, [_det(0, 10, None, "radar")])
    assert bt.tracks[0].category == "car"
    for k in range(2, 9):
        bt.step(0.1 * k, [])
    bt.step(0.9, [_det(0, 10, "person")])
    assert [t.id for t in bt.tracks] == [2]


def test_category_gate_blocks_cross_class_update():
    bt = BranchTracker()
    for k in range(3):
        bt.step(0.1 * k, [_det(0, 10, "person")])
    bt.step(0.3, [_det(0.2, 10, "car")])
    assert sorted((t.id, t.category) for t in bt.tracks) == [(1, "person"), (2, "car")]
    off = BranchTracker(TrackerConfig(category_gating=False))
    for k in range(3):
        off.step(0.1 * k, [_det(0, 10, "person")])
    off.step(0.3, [_det(0.2, 10, "car")])
    assert [(t.id, t.category) for t in off.tracks] == [(1, "car")]


def test_backwards_time_rejected():
    bt = BranchTracker()
    bt.step(1.0, [])
    with pytest.raises(InvalidInputError):
        bt.step(0.5, [])


def test_config_validation():
    with pytest.raises(InvalidInputError):
        TrackerConfig(meas_noise_radar=0.0)
    with pytest.raises(InvalidInputError):
        TrackerConfig(confirm_hits=0)
    with pytest.raises(InvalidInputError):
        FusedDetection((0, 0), None, "fused", radar_index=1)


# -- fusion rule ------------------------------------------------------------------------------


def _cam(cat):
    return CameraDetection(BoundingBox(0, 0, 10, 10), cat)


def test_fuse_matched_pair_takes_radar_position_camera_category():
    radar = [RadarDetection((5.0, 0.0))]
    cams = [(_cam("car"), (0.3, 5.2))]
    out = fuse_detections(MatchResult([(0, 0, "position")], [], []), radar, cams)
    assert out == [FusedDetection((0.0, 5.0), "car", "fused", 0, 0)]


def test_fuse_unmatched_camera_keeps_projection():
    out = fuse_detections(MatchResult([], [], [0]), [], [(_cam("person"), (1.0, 4.0))])
    assert out == [FusedDetection((1.0, 4.0), "person", "camera", camera_index=0)]


def test_fuse_unmatched_radar_has_no_category():
    out = fuse_detections(MatchResult([], [0], []), [RadarDetection((8.0, math.pi / 6))], [])
    (d,) = out
    assert d.position == pytest.approx((4.0, 6.9282), abs=1e-4)
    assert d.category is None and d.source == "radar"


# -- multi-branch ------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def calib():
    frames, _ = synthesize_scene(wandering_scenario(0, n_objects=6, duration=40), seed=0)
    return calibrate(frames, CalibrationConfig(seed=0))


def test_single_object_gives_one_fusion_track(calib):
    sc = straight_line_scenario([("car", (-1.0, 12.0), (1.0, 14.0))], duration=2.0)
    frames, _ = synthesize_scene(sc, seed=1)
    log = run_tracker(frames, calib)
    for b in ("radar", "camera", "fusion"):
        assert log.branches[b][1] == []
        assert [len(s) for s in log.branches[b][2:]] == [1] * (len(frames) - 2)
    assert {s.category for snaps in log.branches["fusion"] for s in snaps} == {"car"}


def test_fused_position_is_radar_position_bit_exact(calib):
    sc = straight_line_scenario([("person", (0.0, 10.0), (1.0, 11.0))], duration=1.0)
    frames, _ = synthesize_scene(sc, seed=2)
    mbt = MultiBranchTracker(calib)
    for fp in frames:
        for d in mbt.detections_for("fusion", fp):
            if d.source == "fused":
                assert d.position == polar_to_cartesian(fp.radar[d.radar_index].position)


def test_fusion_survives_each_sensor_blackout(calib):
    sc = straight_line_scenario([("person", (-2.0, 9.0), (2.0, 13.0)), ("car", (3.0, 18.0), (-1.0, 14.0))], duration=8.0)
    fw = [FailureWindow("camera", 2.0, 4.0), FailureWindow("radar", 5.0, 7.0)]
    frames, _ = synthesize_scene(sc, SensorNoiseModel(), fw, seed=3)
    mbt = MultiBranchTracker(calib, branches=("fusion",))
    seen = {}
    for fp in frames:
        seen[round(fp.t, 1)] = [(s.id, s.category) for s in mbt.step(fp)["fusion"]]
    assert seen[1.9] == seen[4.0] == seen[4.9] == seen[7.0]
    assert sorted(c for _, c in seen[3.0]) == ["car", "person"]  # categories carried through the camera gap
    assert mbt.branches["fusion"].deleted == []


def test_unknown_branch_rejected(calib):
    with pytest.raises(InvalidInputError):
        MultiBranchTracker(calib, branches=("lidar",))


def test_camera_only_frame_feeds_fusion(calib):
    radar_only = FramePair(0.0, (RadarDetection((10.0, 0.0)),), ())
    mbt = MultiBranchTracker(calib)
    assert [d.source for d in mbt.detections_for("fusion", radar_only)] == ["radar"]
    cam_only = FramePair(0.0, (), (CameraDetection(BoundingBox(300, 200, 340, 300), "car"),))
    dets = mbt.detections_for("fusion", cam_only)
    assert [d.source for d in dets] == ["camera"] and dets[0].category == "car"
