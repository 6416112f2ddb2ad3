"""CLEAR-MOT evaluation of a track log against simulator ground truth."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional, Protocol, Sequence

import numpy as np

from .association import INFEASIBLE, hungarian
from .errors import FrameMismatchError, InvalidInputError
from .simulator import GroundTruthFrame

TIME_TOLERANCE = 1e-6
UNKNOWN = "unknown"


class Hypothesis(Protocol):
    id: int
    x: float
    y: float
    category: Optional[str]


@dataclass
class _Counts:
    gt: int = 0
    fp: int = 0
    fn: int = 0
    idsw: int = 0
    matches: int = 0
    dist_sum: float = 0.0

    def summary(self) -> dict[str, Any]:
        g = self.gt
        rate = (lambda n: n / g) if g else (lambda n: None)
        return {
            "gt_total": g,
            "fp": self.fp,
            "fn": self.fn,
            "idsw": self.idsw,
            "matches": self.matches,
            "fpr": rate(self.fp),
            "fnr": rate(self.fn),
            "idswr": rate(self.idsw),
            "mota": 1.0 - (self.fn + self.fp + self.idsw) / g if g else None,
            "motp": self.dist_sum / self.matches if self.matches else None,
            "motp_gt": self.dist_sum / g if g else None,
        }


@dataclass(frozen=True)
class ClearReport:
    frames: int
    gt_total: int
    fp: int
    fn: int
    idsw: int
    matches: int
    fpr: Optional[float]
    fnr: Optional[float]
    idswr: Optional[float]
    mota: Optional[float]
    motp: Optional[float]  # matched-distance mean
    motp_gt: Optional[float]  # matched-distance sum over all ground truth
    dist_threshold: float = 3.0
    per_category: dict[str, dict[str, Any]] = field(default_factory=dict)

    def as_dict(self) -> dict[str, Any]:
        return {
            "frames": self.frames,
            "gt_total": self.gt_total,
            "fp": self.fp,
            "fn": self.fn,
            "idsw": self.idsw,
            "matches": self.matches,
            "fpr": self.fpr,
            "fnr": self.fnr,
            "idswr": self.idswr,
            "mota": self.mota,
            "motp": self.motp,
            "motp_gt": self.motp_gt,
            "dist_threshold": self.dist_threshold,
            "per_category": self.per_category,
        }


def report_from_counts(
    frames: int, gt: int, fn: int, fp: int, idsw: int, dist_sum: float = 0.0, matches: int = 0,
    dist_threshold: float = 3.0,
) -> ClearReport:
    """Build a report from raw totals."""
    s = _Counts(gt, fp, fn, idsw, matches, dist_sum).summary()
    return ClearReport(frames=frames, dist_threshold=dist_threshold, per_category={}, **s)


def _check_times(gt: Sequence[GroundTruthFrame], hyp_times: Optional[Sequence[float]], n_hyp: int) -> None:
    if n_hyp != len(gt):
        raise FrameMismatchError(f"ground truth has {len(gt)} frames but the track log has {n_hyp}")
    if hyp_times is None:
        return
    for k, (g, t) in enumerate(zip(gt, hyp_times)):
        if abs(g.t - t) > TIME_TOLERANCE:
            raise FrameMismatchError(f"frame {k}: ground truth t={g.t} but track log t={t}")


def clear_mot(
    gt: Sequence[GroundTruthFrame],
    hypotheses: Sequence[Sequence[Hypothesis]],
    hyp_times: Optional[Sequence[float]] = None,
    dist_threshold: float = 3.0,
    frame_stats: Optional[list[dict[str, Any]]] = None,
) -> ClearReport:
    """CLEAR-MOT totals over aligned frames.

    Each frame first keeps last frame's ground-truth/track pairs that are still
    within ``dist_threshold``, then assigns the rest by Hungarian on distance.
    A ground-truth object whose track differs from the one it last matched
    counts one identity switch. If ``frame_stats`` is given, one dict of
    per-frame counts is appended to it per frame.
    """
    if not dist_threshold > 0:
        raise InvalidInputError("dist_threshold must be > 0")
    _check_times(gt, hyp_times, len(hypotheses))
    total = _Counts()
    per_cat: dict[str, _Counts] = {}
    prev: dict[int, int] = {}  # gt id -> track id, previous frame
    last: dict[int, int] = {}  # gt id -> track id, most recent match ever

    def cat(name: Optional[str]) -> _Counts:
        return per_cat.setdefault(name if name is not None else UNKNOWN, _Counts())

    for g_frame, hyps in zip(gt, hypotheses):
        before = (total.fp, total.fn, total.idsw, total.matches, total.dist_sum)
        objs = list(g_frame.objects)
        ids = [h.id for h in hyps]
        if len(set(ids)) != len(ids):
            raise InvalidInputError(f"duplicate track ids at t={g_frame.t}")
        g_idx = {o.id: k for k, o in enumerate(objs)}
        h_idx = {h.id: k for k, h in enumerate(hyps)}
        gxy = np.array([(o.x, o.y) for o in objs], dtype=float).reshape(-1, 2)
        hxy = np.array([(h.x, h.y) for h in hyps], dtype=float).reshape(-1, 2)
        dist = np.linalg.norm(gxy[:, None, :] - hxy[None, :, :], axis=2)

        pairs: dict[int, int] = {}  # gt row -> hyp column
        for gid, hid in prev.items():
            if gid in g_idx and hid in h_idx and dist[g_idx[gid], h_idx[hid]] <= dist_threshold:
                pairs[g_idx[gid]] = h_idx[hid]
        rows = [i for i in range(len(objs)) if i not in pairs]
        used = set(pairs.values())
        cols = [j for j in range(len(hyps)) if j not in used]
        if rows and cols:
            sub = dist[np.ix_(rows, cols)]
            sub = np.where(sub <= dist_threshold, sub, INFEASIBLE)
            for a, b in hungarian(sub):
                pairs[rows[a]] = cols[b]

        current: dict[int, int] = {}
        for i, o in enumerate(objs):
            c = cat(o.category)
            total.gt += 1
            c.gt += 1
            if i not in pairs:
                total.fn += 1
                c.fn += 1
                continue
            h = hyps[pairs[i]]
            d = float(dist[i, pairs[i]])
            total.matches += 1
            c.matches += 1
            total.dist_sum += d
            c.dist_sum += d
            if o.id in last and last[o.id] != h.id:
                total.idsw += 1
                c.idsw += 1
            last[o.id] = h.id
            current[o.id] = h.id
        matched_cols = set(pairs.values())
        for j, h in enumerate(hyps):
            if j not in matched_cols:
                total.fp += 1
                cat(h.category).fp += 1
        prev = current
        if frame_stats is not None:
            fp0, fn0, sw0, m0, d0 = before
            m = total.matches - m0
            frame_stats.append({
                "t": g_frame.t,
                "gt": len(objs),
                "matches": m,
                "fp": total.fp - fp0,
                "fn": total.fn - fn0,
                "idsw": total.idsw - sw0,
                "mean_error": (total.dist_sum - d0) / m if m else None,
            })

    s = total.summary()
    return ClearReport(
        frames=len(gt),
        dist_threshold=dist_threshold,
        per_category={k: per_cat[k].summary() for k in sorted(per_cat)},
        **s,
    )


def mota_identity_gap(r: ClearReport) -> float:
    """|mota - (1 - fnr - fpr - idswr)|; zero up to rounding."""
    if r.mota is None:
        return 0.0
    return abs(r.mota - (1.0 - r.fnr - r.fpr - r.idswr))

