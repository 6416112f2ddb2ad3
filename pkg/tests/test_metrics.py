from __future__ import annotations

from typing import NamedTuple, Optional

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcmot.errors import FrameMismatchError, InvalidInputError
from rcmot.metrics import clear_mot, mota_identity_gap, report_from_counts
from rcmot.simulator import GroundTruthFrame, GroundTruthObject


class Hyp(NamedTuple):
    id: int
    x: float
    y: float
    category: Optional[str] = None


def _gt(t, *objs):
    return GroundTruthFrame(t, tuple(GroundTruthObject(i, c, x, y) for i, c, x, y in objs))


def _random_run(rng, n_frames=20, n_obj=4):
    gt, hyps = [], []
    for k in range(n_frames):
        objs = [(i, "car" if i % 2 else "person", float(i * 5), float(k * 0.2)) for i in range(n_obj)]
        gt.append(_gt(k * 0.1, *objs))
        hyps.append([Hyp(100 + i, x + rng.normal(scale=0.2), y, c) for i, c, x, y in objs])
    return gt, hyps


def test_perfect_tracker():
    gt, hyps = _random_run(np.random.default_rng(0))
    exact = [[Hyp(100 + o.id, o.x, o.y, o.category) for o in f.objects] for f in gt]
    r = clear_mot(gt, exact, [f.t for f in gt])
    assert (r.mota, r.motp, r.fp, r.fn, r.idsw) == (1.0, 0.0, 0, 0, 0)


def test_totals_arithmetic():
    r = report_from_counts(frames=10, gt=100, fn=10, fp=5, idsw=1)
    assert r.mota == 0.84
    assert (r.fnr, r.fpr, r.idswr) == (0.1, 0.05, 0.01)


def test_two_frame_identity_switch():
    gt = [_gt(0.0, (1, "car", 0.0, 0.0)), _gt(0.1, (1, "car", 0.0, 0.0))]
    hyps = [[Hyp(7, 0.4, 0.0)], [Hyp(8, 0.0, 0.6)]]
    r = clear_mot(gt, hyps)
    assert r.idsw == 1 and r.fp == 0 and r.fn == 0
    assert r.motp == 0.5
    assert r.mota == 0.5
    assert r.motp_gt == 0.5


def test_far_hypothesis_is_fp_and_fn():
    gt = [_gt(0.0, (1, "car", 0.0, 10.0))]
    r = clear_mot(gt, [[Hyp(1, 0.0, 13.5, "car")]])
    assert (r.fp, r.fn, r.matches) == (1, 1, 0)
    assert r.motp is None and r.mota == -1.0
    assert r.per_category["car"]["fp"] == 1 and r.per_category["car"]["fn"] == 1


def test_carry_over_beats_closer_newcomer():
    gt = [_gt(0.0, (1, "car", 0.0, 10.0)), _gt(0.1, (1, "car", 0.0, 10.0))]
    hyps = [[Hyp(1, 0.5, 10.0)], [Hyp(1, 0.5, 10.0), Hyp(2, 0.0, 10.0)]]
    r = clear_mot(gt, hyps)
    assert r.idsw == 0 and r.fp == 1


def test_switch_counted_after_gap():
    gt = [_gt(k * 0.1, (1, "car", 0.0, 10.0)) for k in range(3)]
    hyps = [[Hyp(1, 0.0, 10.0)], [], [Hyp(2, 0.0, 10.0)]]
    r = clear_mot(gt, hyps)
    assert (r.idsw, r.fn) == (1, 1)


def test_frame_mismatch_errors():
    gt = [_gt(0.0), _gt(0.1)]
    with pytest.raises(FrameMismatchError):
        clear_mot(gt, [[]])
    with pytest.raises(FrameMismatchError):
        clear_mot(gt, [[], []], [0.0, 0.2])
    with pytest.raises(InvalidInputError):
        clear_mot(gt[:1], [[Hyp(1, 0, 0), Hyp(1, 1, 1)]])
    with pytest.raises(InvalidInputError):
        clear_mot(gt, [[], []], dist_threshold=0.0)


def test_empty_ground_truth_has_no_rates():
    r = clear_mot([_gt(0.0)], [[Hyp(1, 0, 0)]])
    assert r.fp == 1 and r.mota is None and r.fpr is None


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_mota_identity_and_motp_bound(seed):
    rng = np.random.default_rng(seed)
    gt, hyps = [], []
    for k in range(int(rng.integers(1, 8))):
        n = int(rng.integers(0, 5))
        objs = [(i, "car", float(rng.uniform(0, 10)), float(rng.uniform(0, 10))) for i in range(n)]
        gt.append(_gt(k * 0.1, *objs))
        hyps.append([Hyp(int(j), float(rng.uniform(0, 10)), float(rng.uniform(0, 10))) for j in rng.permutation(6)[: rng.integers(0, 5)]])
    r = clear_mot(gt, hyps)
    assert mota_identity_gap(r) <= 1e-12
    assert r.matches + r.fn == r.gt_total
    if r.motp is not None:
        assert 0 <= r.motp <= r.dist_threshold


def test_one_fp_per_frame_drops_mota_by_t_over_gt():
    gt, _ = _random_run(np.random.default_rng(1))
    exact = [[Hyp(100 + o.id, o.x, o.y) for o in f.objects] for f in gt]
    noisy = [h + [Hyp(999, 500.0, 500.0)] for h in exact]
    a, b = clear_mot(gt, exact), clear_mot(gt, noisy)
    assert a.mota - b.mota == pytest.approx(len(gt) / a.gt_total, abs=1e-12)


def test_per_category_breakdown():
    gt, hyps = _random_run(np.random.default_rng(2))
    r = clear_mot(gt, hyps)
    assert set(r.per_category) == {"car", "person"}
    assert sum(c["gt_total"] for c in r.per_category.values()) == r.gt_total
