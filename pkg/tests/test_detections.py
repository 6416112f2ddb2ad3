from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rcmot.detections import (
    BoundingBox,
    CameraDetection,
    LogisticSimilarity,
    RadarDetection,
    SensorFrame,
    lower_center,
    pair_frames,
    similarity,
)
from rcmot.errors import InvalidInputError


@pytest.mark.parametrize(
    "box,expected",
    [
        ((0, 0, 10, 20), (5, 20)),
        ((7, 3, 7, 3), (7, 3)),
        ((100, 50, 140, 90), (120, 90)),
    ],
)
def test_lower_center(box, expected):
    assert lower_center(BoundingBox(*box)) == expected


def test_bbox_invariants():
    with pytest.raises(InvalidInputError):
        BoundingBox(5, 0, 4, 1)
    with pytest.raises(InvalidInputError):
        BoundingBox(0, 3, 1, 2)


def _pair_at_distance(d: float) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors whose chord length is exactly ``d``."""
    a = 2.0 * math.asin(d / 2.0)
    e0 = np.zeros(128)
    e0[0] = 1.0
    e1 = np.zeros(128)
    e1[0], e1[1] = math.cos(a), math.sin(a)
    return e0, e1


@pytest.mark.parametrize(
    "d,expected",
    [
        (0.0, 1.0 / (1.0 + math.exp(-5.0))),
        (0.5, 0.5),
        (1.0, 1.0 / (1.0 + math.exp(5.0))),
    ],
)
def test_similarity_reference_values(d, expected):
    a, b = _pair_at_distance(d)
    assert similarity(a, b) == pytest.approx(expected, abs=1e-9)


def test_similarity_frozen_decimals():
    a, b = _pair_at_distance(0.0)
    assert similarity(a, b) == pytest.approx(0.9933071, abs=1e-7)
    a, b = _pair_at_distance(1.0)
    assert similarity(a, b) == pytest.approx(0.0066929, abs=1e-7)


def test_similarity_ignores_embedding_scale():
    a, b = _pair_at_distance(0.3)
    assert similarity(3.0 * a, b) == pytest.approx(similarity(a, b), abs=1e-15)


def test_similarity_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        similarity(np.ones(128), np.ones(64))


@given(st.integers(0, 2**31))
def test_similarity_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=128), rng.normal(size=128)
    s = similarity(a, b)
    assert s == similarity(b, a)
    assert 0.0 <= s <= 1.0


@given(st.integers(0, 2**31))
def test_similarity_monotone_in_distance(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=128)
    b = a + rng.normal(scale=0.05, size=128)
    c = a + rng.normal(scale=0.3, size=128)
    unit = lambda v: v / np.linalg.norm(v)  # noqa: E731
    if np.linalg.norm(unit(a) - unit(b)) < np.linalg.norm(unit(a) - unit(c)):
        assert similarity(a, b) >= similarity(a, c)


def test_logistic_extreme_distance_does_not_overflow():
    assert LogisticSimilarity(k=1e4).score_at(10.0) == 0.0
    assert LogisticSimilarity(k=1e4).score_at(0.0) == 1.0


def test_detection_types_validate():
    with pytest.raises(InvalidInputError):
        CameraDetection(BoundingBox(0, 0, 1, 1), "car", confidence=1.5)
    with pytest.raises(InvalidInputError):
        RadarDetection((-1.0, 0.0))
    with pytest.raises(InvalidInputError):
        RadarDetection((5.0, math.pi / 2))
    with pytest.raises(InvalidInputError):
        CameraDetection(BoundingBox(0, 0, 1, 1), "car", embedding=np.zeros(3))
    cam = CameraDetection(BoundingBox(100, 50, 140, 90), "car")
    assert cam.anchor == (120, 90)


def test_radar_position_is_bbox_center():
    det = RadarDetection.from_bbox(BoundingBox(-0.1, 9.0, 0.1, 11.0))
    assert det.position == pytest.approx((10.0, 0.0))


def _stream(times):
    return [SensorFrame(t) for t in times]


def test_pair_frames_simple():
    pairs = pair_frames(_stream([0.00, 0.10]), _stream([0.01, 0.11]), 0.05)
    assert [p.t for p in pairs] == [0.00, 0.10]


def test_pair_frames_drops_large_skew():
    assert pair_frames(_stream([0.00]), _stream([0.20]), 0.05) == []


def _brute_force_greedy(radar, camera, max_skew):
    """Enumerate candidate edges, then take smallest skew first."""
    edges = sorted(
        (abs(r - c), i, j)
        for i, r in enumerate(radar)
        for j, c in enumerate(camera)
        if abs(r - c) <= max_skew
    )
    used_i, used_j, out = set(), set(), []
    for _, i, j in edges:
        if i not in used_i and j not in used_j:
            used_i.add(i)
            used_j.add(j)
            out.append((radar[i], camera[j]))
    return sorted(out)


def test_pair_frames_greedy_by_skew():
    radar, camera = [0.00, 0.10, 0.20], [0.09, 0.12]
    pairs = pair_frames(_stream(radar), _stream(camera), 0.05)
    assert len(pairs) == 1
    assert pairs[0].t == 0.10
    assert _brute_force_greedy(radar, camera, 0.05) == [(0.10, 0.09)]


def test_pair_frames_carries_detections():
    rd = RadarDetection((5.0, 0.1))
    cd = CameraDetection(BoundingBox(0, 0, 4, 4), "person")
    pairs = pair_frames([SensorFrame(0.0, (rd,))], [SensorFrame(0.02, (cd,))])
    assert pairs[0].radar == (rd,) and pairs[0].camera == (cd,)


def test_pair_frames_rejects_unsorted():
    with pytest.raises(InvalidInputError):
        pair_frames(_stream([0.2, 0.1]), _stream([0.1]))


@given(
    st.lists(st.floats(0, 5), max_size=12).map(sorted),
    st.lists(st.floats(0, 5), max_size=12).map(sorted),
    st.floats(0.001, 0.5),
)
def test_pair_frames_properties(radar, camera, skew):
    pairs = pair_frames(_stream(radar), _stream(camera), skew)
    assert len(pairs) <= min(len(radar), len(camera))
    assert [p.t for p in pairs] == sorted(p.t for p in pairs)
    expected = _brute_force_greedy(radar, camera, skew)
    assert [p.t for p in pairs] == [r for r, _ in expected]
    for r, c in expected:
        assert abs(r - c) <= skew
