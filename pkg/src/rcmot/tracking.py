"""Constant-velocity Kalman tracking, track lifecycle and the three-branch tracker.

The state is ``(x, y, vx, vy)`` on the ground plane. Each branch (radar,
camera, fusion) owns an independent :class:`BranchTracker`; the fusion
branch feeds it decision-level fused detections: radar position and camera
category for matched pairs, each sensor's own output otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .association import (
    FusionMatchConfig,
    MatchResult,
    TrackAssociationConfig,
    match_detections_to_tracks,
    match_radar_camera,
)
from .calibration import CalibrationModel, project_to_radar
from .detections import CameraDetection, FramePair, RadarDetection, SimilarityProvider, default_similarity
from .errors import InvalidInputError, ProjectiveDegeneracyError
from .geometry import Point2, polar_to_cartesian

BRANCHES = ("radar", "camera", "fusion")
_H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])


# --- Kalman filter --------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class KalmanState:
    x: np.ndarray
    P: np.ndarray

    def __post_init__(self) -> None:
        x = np.array(self.x, dtype=float).reshape(4)
        p = np.array(self.P, dtype=float).reshape(4, 4)
        x.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "P", p)

    @property
    def position(self) -> Point2:
        return float(self.x[0]), float(self.x[1])

    @property
    def velocity(self) -> Point2:
        return float(self.x[2]), float(self.x[3])


def transition(dt: float) -> np.ndarray:
    f = np.eye(4)
    f[0, 2] = f[1, 3] = dt
    return f


def process_noise(dt: float, accel_std: float) -> np.ndarray:
    """White-acceleration noise: per axis ``s^2 [[dt^4/4, dt^3/2], [dt^3/2, dt^2]]``."""
    q = np.zeros((4, 4))
    a, b, c = dt**4 / 4.0, dt**3 / 2.0, dt**2
    for p, v in ((0, 2), (1, 3)):
        q[p, p], q[p, v], q[v, p], q[v, v] = a, b, b, c
    return q * accel_std**2


def _sym(p: np.ndarray) -> np.ndarray:
    return 0.5 * (p + p.T)


def kf_predict(s: KalmanState, dt: float, accel_std: float = 1.0) -> KalmanState:
    if not dt > 0:
        raise InvalidInputError(f"dt must be > 0, got {dt}")
    f = transition(dt)
    return KalmanState(f @ s.x, _sym(f @ s.P @ f.T + process_noise(dt, accel_std)))


def kf_update(s: KalmanState, z: Point2, meas_noise: float) -> KalmanState:
    """Position update with the Joseph-form covariance."""
    z = np.asarray(z, dtype=float).reshape(2)
    if not np.all(np.isfinite(z)):
        raise InvalidInputError(f"non-finite measurement {z}")
    r = np.eye(2) * meas_noise**2
    innov = z - _H @ s.x
    cov = _H @ s.P @ _H.T + r
    gain = np.linalg.solve(cov, _H @ s.P).T
    a = np.eye(4) - gain @ _H
    p = a @ s.P @ a.T + gain @ r @ gain.T
    return KalmanState(s.x + gain @ innov, _sym(p))


# --- tracks -------------------------------------------------------------------------------


@dataclass(frozen=True)
class TrackerConfig:
    process_noise_accel: float = 1.0
    meas_noise_radar: float = 0.3
    meas_noise_camera: float = 1.0
    confirm_hits: int = 3
    max_misses: int = 5
    gate_distance: float = 3.0
    sim_threshold: float = 0.8
    dist_threshold: float = 3.0
    category_gating: bool = True
    init_velocity_std: float = 5.0
    report_coasting: bool = False

    def __post_init__(self) -> None:
        for name in (
            "process_noise_accel",
            "meas_noise_radar",
            "meas_noise_camera",
            "gate_distance",
            "sim_threshold",
            "dist_threshold",
            "init_velocity_std",
        ):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be > 0")
        if self.confirm_hits < 1 or self.max_misses < 0:
            raise InvalidInputError("confirm_hits must be >= 1 and max_misses >= 0")


@dataclass(frozen=True)
class FusedDetection:
    position: Point2
    category: Optional[str]
    source: str  # radar | camera | fused
    radar_index: Optional[int] = None
    camera_index: Optional[int] = None

    def __post_init__(self) -> None:
        if self.source not in ("radar", "camera", "fused"):
            raise InvalidInputError(f"unknown detection source {self.source!r}")
        if self.source == "fused" and (self.radar_index is None or self.camera_index is None):
            raise InvalidInputError("fused detections need both provenance indices")


@dataclass
class Track:
    id: int
    state: KalmanState
    category: Optional[str]
    status: str = "tentative"  # tentative | confirmed | deleted
    hits: int = 1
    misses: int = 0
    age: int = 1
    provenance: str = "fusion"


@dataclass(frozen=True)
class TrackSnapshot:
    id: int
    x: float
    y: float
    vx: float
    vy: float
    category: Optional[str]


def meas_noise_for(det: FusedDetection, cfg: TrackerConfig) -> float:
    return cfg.meas_noise_camera if det.source == "camera" else cfg.meas_noise_radar


def initial_state(pos: Point2, pos_std: float, cfg: TrackerConfig) -> KalmanState:
    p = np.diag([pos_std**2, pos_std**2, cfg.init_velocity_std**2, cfg.init_velocity_std**2])
    return KalmanState(np.array([pos[0], pos[1], 0.0, 0.0]), p)


class BranchTracker:
    """Predict, associate and manage tracks for one detection stream."""

    def __init__(self, cfg: TrackerConfig = TrackerConfig(), provenance: str = "fusion") -> None:
        self.cfg = cfg
        self.provenance = provenance
        self.tracks: list[Track] = []
        self.deleted: list[Track] = []
        self._next_id = 1
        self._last_t: Optional[float] = None

    def predict(self, t: float) -> None:
        if self._last_t is not None:
            dt = t - self._last_t
            if dt < 0:
                raise InvalidInputError(f"frame time went backwards: {self._last_t} -> {t}")
            if dt > 0:
                for tr in self.tracks:
                    tr.state = kf_predict(tr.state, dt, self.cfg.process_noise_accel)
        self._last_t = t

    def step(self, t: float, detections: Sequence[FusedDetection]) -> list[TrackSnapshot]:
        self.predict(t)
        assoc = match_detections_to_tracks(
            [d.position for d in detections],
            [d.category for d in detections],
            [tr.state.position for tr in self.tracks],
            [tr.category for tr in self.tracks],
            TrackAssociationConfig(self.cfg.gate_distance, self.cfg.category_gating),
        )
        self.manage(assoc.matched, assoc.unmatched_tracks, assoc.unmatched_detections, detections)
        return self.snapshot()

    def manage(
        self,
        matched: Sequence[tuple[int, int]],
        unmatched_tracks: Sequence[int],
        unmatched_detections: Sequence[int],
        detections: Sequence[FusedDetection],
    ) -> None:
        cfg = self.cfg
        for d, k in matched:
            tr, det = self.tracks[k], detections[d]
            tr.state = kf_update(tr.state, det.position, meas_noise_for(det, cfg))
            tr.hits += 1
            tr.misses = 0
            tr.age += 1
            if det.category is not None:
                tr.category = det.category
            if tr.status == "tentative" and tr.hits >= cfg.confirm_hits:
                tr.status = "confirmed"
        for k in unmatched_tracks:
            tr = self.tracks[k]
            tr.misses += 1
            tr.age += 1
            if tr.misses > cfg.max_misses:
                tr.status = "deleted"
        self.deleted.extend(tr for tr in self.tracks if tr.status == "deleted")
        self.tracks = [tr for tr in self.tracks if tr.status != "deleted"]
        for d in unmatched_detections:
            det = detections[d]
            state = initial_state(det.position, meas_noise_for(det, cfg), cfg)
            tr = Track(self._next_id, state, det.category, provenance=self.provenance)
            if tr.hits >= cfg.confirm_hits:
                tr.status = "confirmed"
            self._next_id += 1
            self.tracks.append(tr)

    def snapshot(self) -> list[TrackSnapshot]:
        """Confirmed tracks updated this frame (coasting ones too if configured)."""
        out = []
        for tr in self.tracks:
            if tr.status != "confirmed" or (tr.misses > 0 and not self.cfg.report_coasting):
                continue
            (x, y), (vx, vy) = tr.state.position, tr.state.velocity
            out.append(TrackSnapshot(tr.id, x, y, vx, vy, tr.category))
        return sorted(out, key=lambda s: s.id)


# --- fusion ---------------------------------------------------------------------------------


def fuse_detections(
    match: MatchResult,
    radar: Sequence[RadarDetection],
    camera_ground: Sequence[tuple[CameraDetection, Point2]],
) -> list[FusedDetection]:
    """Matched pairs take the radar position and the camera category; unmatched
    detections keep their own sensor's output."""
    out = [
        FusedDetection(polar_to_cartesian(radar[i].position), camera_ground[j][0].category, "fused", i, j)
        for i, j, _ in match.matched
    ]
    for j in match.unmatched_camera:
        cd, g = camera_ground[j]
        out.append(FusedDetection((float(g[0]), float(g[1])), cd.category, "camera", camera_index=j))
    for i in match.unmatched_radar:
        out.append(FusedDetection(polar_to_cartesian(radar[i].position), radar[i].category, "radar", radar_index=i))
    return out


def camera_to_ground(
    calib: CalibrationModel, camera: Sequence[CameraDetection]
) -> list[tuple[CameraDetection, Point2]]:
    """Project camera anchors onto the ground; anchors that land behind the
    radar or on the homography's vanishing line are dropped."""
    out = []
    for cd in camera:
        try:
            r, theta = project_to_radar(calib, cd.anchor)
        except ProjectiveDegeneracyError:
            continue
        if not (r > 0 and math.isfinite(r) and math.isfinite(theta)):
            continue
        out.append((cd, (r * math.sin(theta), r * math.cos(theta))))
    return out


class MultiBranchTracker:
    """Runs the requested branches side by side on each frame pair."""

    def __init__(
        self,
        calib: CalibrationModel,
        cfg: TrackerConfig = TrackerConfig(),
        branches: Sequence[str] = BRANCHES,
        similarity: SimilarityProvider = default_similarity,
    ) -> None:
        unknown = [b for b in branches if b not in BRANCHES]
        if unknown or not branches:
            raise InvalidInputError(f"unknown or empty branch selection {list(branches)!r}")
        self.calib = calib
        self.cfg = cfg
        self.similarity = similarity
        self.branches = {b: BranchTracker(cfg, b) for b in BRANCHES if b in branches}

    def detections_for(self, branch: str, frame: FramePair) -> list[FusedDetection]:
        if branch == "radar":
            return [
                FusedDetection(polar_to_cartesian(d.position), d.category, "radar", radar_index=i)
                for i, d in enumerate(frame.radar)
            ]
        cam = camera_to_ground(self.calib, frame.camera)
        if branch == "camera":
            return [FusedDetection((g[0], g[1]), cd.category, "camera", camera_index=j) for j, (cd, g) in enumerate(cam)]
        match = match_radar_camera(
            frame.radar, cam, FusionMatchConfig(self.cfg.sim_threshold, self.cfg.dist_threshold), self.similarity
        )
        return fuse_detections(match, frame.radar, cam)

    def step(self, frame: FramePair) -> dict[str, list[TrackSnapshot]]:
        return {b: tr.step(frame.t, self.detections_for(b, frame)) for b, tr in self.branches.items()}


@dataclass
class TrackLog:
    """Per-branch snapshots, one entry per frame."""

    times: list[float] = field(default_factory=list)
    branches: dict[str, list[list[TrackSnapshot]]] = field(default_factory=dict)


def run_tracker(
    frames: Sequence[FramePair],
    calib: CalibrationModel,
    cfg: TrackerConfig = TrackerConfig(),
    branches: Sequence[str] = BRANCHES,
    similarity: SimilarityProvider = default_similarity,
) -> TrackLog:
    mbt = MultiBranchTracker(calib, cfg, branches, similarity)
    log = TrackLog(branches={b: [] for b in mbt.branches})
    for fp in frames:
        log.times.append(fp.t)
        for b, snaps in mbt.step(fp).items():
            log.branches[b].append(snaps)
    return log
