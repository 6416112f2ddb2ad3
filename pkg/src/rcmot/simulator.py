"""Synthetic radar-camera scenes with exact ground truth.

Objects move on the ground plane (``z = 0``). The radar sits at the world
origin looking along ``+y``; the camera is a pinhole with pose ``(R, t)``
mapping world points into its frame (``x`` right, ``y`` down, ``z`` forward).
Because every observed point lies on the ground, image-to-ground is an exact
homography, which the tests use as a lower bound for calibration error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .detections import EMBEDDING_DIM, BoundingBox, CameraDetection, FramePair, RadarDetection
from .errors import BehindCameraError, InvalidInputError
from .geometry import Point2, cartesian_to_polar

CATEGORY_HEIGHT = {"person": 1.7, "car": 1.5, "truck": 3.0, "bicycle": 1.6}
DEFAULT_AREA = (-6.0, 6.0, 2.0, 27.0)  # x_min, x_max, y_min, y_max: 12 m wide, 25 m long
DEFAULT_FRAME_RATE = 10.0

# independent random streams per purpose
_LATENTS, _RADAR, _CAMERA, _EMBED, _SCENARIO = range(5)


# --- camera -----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CameraModel:
    fx: float
    fy: float
    u0: float
    v0: float
    rotation: np.ndarray
    translation: np.ndarray
    image_width: int = 640
    image_height: int = 480
    skew: float = 0.0

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInputError("focal lengths must be positive")
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9):
            raise InvalidInputError("rotation is not orthonormal")
        t = np.array(self.translation, dtype=float).reshape(3)
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def looking_forward(
        cls,
        height: float = 3.0,
        pitch: float = math.radians(8.0),
        position: tuple[float, float] = (0.0, 0.0),
        yaw: float = 0.0,
        fx: float = 500.0,
        fy: float = 500.0,
        image_width: int = 640,
        image_height: int = 480,
    ) -> CameraModel:
        """Camera at ``(x, y, height)`` facing ``+y`` (turned right by ``yaw``),
        tilted down by ``pitch`` radians; principal point at the image center."""
        cz, sz = math.cos(pitch), math.sin(pitch)
        cy, sy = math.cos(yaw), math.sin(yaw)
        forward = np.array([sy * cz, cy * cz, -sz])
        right = np.array([cy, -sy, 0.0])
        down = np.cross(forward, right)
        rot = np.vstack([right, down, forward])
        center = np.array([position[0], position[1], height])
        return cls(
            fx=fx,
            fy=fy,
            u0=image_width / 2.0,
            v0=image_height / 2.0,
            rotation=rot,
            translation=-rot @ center,
            image_width=image_width,
            image_height=image_height,
        )

    @property
    def intrinsics(self) -> np.ndarray:
        return np.array([[self.fx, self.skew, self.u0], [0.0, self.fy, self.v0], [0.0, 0.0, 1.0]])

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @property
    def ground_to_image(self) -> np.ndarray:
        """3x3 matrix taking ground ``(x, y, 1)`` to homogeneous pixels."""
        r = self.rotation
        return self.intrinsics @ np.column_stack([r[:, 0], r[:, 1], self.translation])

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """World ``(N, 3)`` points to pixels ``(N, 2)`` and camera depths ``(N,)``."""
        pc = np.asarray(points, dtype=float).reshape(-1, 3) @ self.rotation.T + self.translation
        depth = pc[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            uvw = pc @ self.intrinsics.T
            uv = uvw[:, :2] / uvw[:, 2:3]
        return uv, depth

    def in_image(self, uv: Point2) -> bool:
        return 0 <= uv[0] < self.image_width and 0 <= uv[1] < self.image_height


def ground_truth_projection(cam: CameraModel, ground: Point2) -> Point2:
    uv, depth = cam.project(np.array([[ground[0], ground[1], 0.0]]))
    if not depth[0] > 0:
        raise BehindCameraError(f"ground point {tuple(ground)} is not in front of the camera")
    return float(uv[0, 0]), float(uv[0, 1])


def image_to_ground(cam: CameraModel, uv: Point2) -> Point2:
    """Inverse of the ground homography (the exact oracle mapping)."""
    g = np.linalg.solve(cam.ground_to_image, np.array([uv[0], uv[1], 1.0]))
    return float(g[0] / g[2]), float(g[1] / g[2])


# --- scene description ----------------------------------------------------------------


@dataclass(frozen=True)
class ObjectSpec:
    id: int
    category: str
    waypoints: tuple[tuple[float, float, float], ...]  # (t, x, y)
    extent: float = 0.3
    reflectivity: float = 1.0

    def __post_init__(self) -> None:
        wps = tuple(tuple(float(v) for v in w) for w in self.waypoints)
        if not wps:
            raise InvalidInputError(f"object {self.id} has no waypoints")
        if any(b[0] < a[0] for a, b in zip(wps, wps[1:])):
            raise InvalidInputError(f"object {self.id} waypoints are not time-sorted")
        if self.extent < 0 or self.reflectivity <= 0:
            raise InvalidInputError("extent must be >= 0 and reflectivity > 0")
        object.__setattr__(self, "waypoints", wps)

    @property
    def height(self) -> float:
        return CATEGORY_HEIGHT.get(self.category, 1.5)

    def alive(self, t: float) -> bool:
        return self.waypoints[0][0] - 1e-9 <= t <= self.waypoints[-1][0] + 1e-9

    def position(self, t: float) -> Point2:
        wps = self.waypoints
        if t <= wps[0][0]:
            return wps[0][1], wps[0][2]
        for a, b in zip(wps, wps[1:]):
            if t <= b[0]:
                span = b[0] - a[0]
                f = 0.0 if span == 0 else (t - a[0]) / span
                return a[1] + f * (b[1] - a[1]), a[2] + f * (b[2] - a[2])
        return wps[-1][1], wps[-1][2]


@dataclass(frozen=True)
class SensorNoiseModel:
    radar_range_std: float = 0.1
    radar_azimuth_std: float = 0.01
    camera_pixel_std: float = 1.0
    radar_dropout: float = 0.0
    camera_dropout: float = 0.0
    radar_fp_rate: float = 0.0
    camera_fp_rate: float = 0.0
    embedding_noise_std: float = 0.1

    def __post_init__(self) -> None:
        for name, value in vars(self).items():
            if not value >= 0:
                raise InvalidInputError(f"{name} must be >= 0")
        if self.radar_dropout > 1 or self.camera_dropout > 1:
            raise InvalidInputError("dropout probabilities must be <= 1")

    @classmethod
    def noiseless(cls) -> SensorNoiseModel:
        return cls(0.0, 0.0, 0.0, embedding_noise_std=0.0)


@dataclass(frozen=True)
class FailureWindow:
    sensor: str
    t_start: float
    t_end: float

    def __post_init__(self) -> None:
        if self.sensor not in ("radar", "camera"):
            raise InvalidInputError(f"unknown sensor {self.sensor!r}")
        if not self.t_start < self.t_end:
            raise InvalidInputError("failure window needs t_start < t_end")

    def covers(self, sensor: str, t: float) -> bool:
        return sensor == self.sensor and self.t_start <= t < self.t_end


@dataclass(frozen=True)
class Scenario:
    objects: tuple[ObjectSpec, ...]
    camera: CameraModel = field(default_factory=CameraModel.looking_forward)
    duration: float = 10.0
    frame_rate: float = DEFAULT_FRAME_RATE
    area: tuple[float, float, float, float] = DEFAULT_AREA
    max_range: float = 60.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "objects", tuple(self.objects))
        if self.frame_rate <= 0 or self.duration < 0:
            raise InvalidInputError("frame_rate must be > 0 and duration >= 0")
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise InvalidInputError("object ids must be unique")

    @property
    def n_frames(self) -> int:
        return int(round(self.duration * self.frame_rate))

    def frame_times(self) -> list[float]:
        return [k / self.frame_rate for k in range(self.n_frames)]


@dataclass(frozen=True)
class GroundTruthObject:
    id: int
    category: str
    x: float
    y: float


@dataclass(frozen=True)
class GroundTruthFrame:
    t: float
    objects: tuple[GroundTruthObject, ...]


GroundTruth = list[GroundTruthFrame]


# --- embeddings ------------------------------------------------------------------------


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def object_latents(n: int, seed: int) -> np.ndarray:
    """``n`` random unit latents; distinct ones are nearly orthogonal in 128-D."""
    rng = np.random.default_rng([seed, _LATENTS])
    return np.array([_unit(rng.normal(size=EMBEDDING_DIM)) for _ in range(n)]).reshape(n, EMBEDDING_DIM)


def sample_embeddings(
    latent: np.ndarray, noise_std: float, seed: int | np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Two independent noisy, unit-normalized copies of ``latent``.

    ``noise_std`` is the RMS length of the noise vector; per component the
    deviation is ``noise_std / sqrt(128)``.
    """
    if noise_std < 0:
        raise InvalidInputError("noise_std must be >= 0")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    lat = _unit(np.asarray(latent, dtype=float))
    scale = noise_std / math.sqrt(EMBEDDING_DIM)
    out = []
    for _ in range(2):
        e = lat + scale * rng.normal(size=EMBEDDING_DIM) if noise_std > 0 else lat.copy()
        out.append(_unit(e))
    return out[0], out[1]


def _random_embedding(rng: np.random.Generator) -> np.ndarray:
    return _unit(rng.normal(size=EMBEDDING_DIM))


# --- synthesis -----------------------------------------------------------------------------


def camera_observation(cam: CameraModel, obj: ObjectSpec, pos: Point2) -> Optional[tuple[Point2, float, float]]:
    """Noiseless anchor, bbox half-width and bbox top row for an object, or None.

    The anchor is the projection of the footprint edge nearest the camera.
    """
    c = cam.center
    dx, dy = pos[0] - c[0], pos[1] - c[1]
    dist = math.hypot(dx, dy)
    ux, uy = (dx / dist, dy / dist) if dist > 0 else (0.0, 1.0)
    near = (pos[0] - obj.extent * ux, pos[1] - obj.extent * uy)
    pts = np.array([[near[0], near[1], 0.0], [pos[0], pos[1], obj.height], [pos[0], pos[1], 0.0]])
    uv, depth = cam.project(pts)
    if not np.all(depth > 0):
        return None
    half_w = cam.fx * max(obj.extent, 0.05) / depth[2]
    return (float(uv[0, 0]), float(uv[0, 1])), half_w, float(uv[1, 1])


def _in_radar_fov(rt: Point2, max_range: float) -> bool:
    return 0 < rt[0] <= max_range and abs(rt[1]) < math.radians(85.0)


def synthesize_scene(
    scenario: Scenario,
    noise: SensorNoiseModel = SensorNoiseModel(),
    failures: Sequence[FailureWindow] = (),
    seed: int = 0,
) -> tuple[list[FramePair], GroundTruth]:
    """Render every frame of ``scenario``; output is a pure function of ``seed``.

    Each frame and sensor draws from its own generator keyed by
    ``(seed, frame index, sensor)``, so frames can be rendered in any order.
    """
    objects = scenario.objects
    latents = object_latents(len(objects), seed)
    cam = scenario.camera
    frames: list[FramePair] = []
    truth: GroundTruth = []
    for k, t in enumerate(scenario.frame_times()):
        live = [(i, o, o.position(t)) for i, o in enumerate(objects) if o.alive(t)]
        truth.append(
            GroundTruthFrame(t, tuple(GroundTruthObject(o.id, o.category, p[0], p[1]) for _, o, p in live))
        )
        embed_rng = np.random.default_rng([seed, k, _EMBED])
        embeds = {i: sample_embeddings(latents[i], noise.embedding_noise_std, embed_rng) for i, _, _ in live}
        radar = _radar_frame(scenario, noise, failures, seed, k, t, live, embeds)
        camera = _camera_frame(scenario, noise, failures, seed, k, t, live, embeds)
        frames.append(FramePair(t=t, radar=tuple(radar), camera=tuple(camera)))
    return frames, truth


def _radar_frame(scenario, noise, failures, seed, k, t, live, embeds) -> list[RadarDetection]:
    if any(w.covers("radar", t) for w in failures):
        return []
    rng = np.random.default_rng([seed, k, _RADAR])
    out = []
    for i, obj, pos in live:
        r, theta = cartesian_to_polar(pos)
        if noise.radar_range_std > 0:
            r += noise.radar_range_std * rng.normal()
        if noise.radar_azimuth_std > 0:
            theta += noise.radar_azimuth_std * rng.normal()
        drop = min(1.0, noise.radar_dropout / obj.reflectivity)
        if rng.random() < drop or not _in_radar_fov((r, theta), scenario.max_range):
            continue
        out.append(_radar_detection(r, theta, obj.extent, embeds[i][0]))
    x0, x1, y0, y1 = scenario.area
    for _ in range(rng.poisson(noise.radar_fp_rate) if noise.radar_fp_rate > 0 else 0):
        r, theta = cartesian_to_polar((rng.uniform(x0, x1), rng.uniform(y0, y1)))
        out.append(_radar_detection(r, theta, 0.3, _random_embedding(rng)))
    order = rng.permutation(len(out))
    return [out[j] for j in order]


def _radar_detection(r: float, theta: float, extent: float, embedding: np.ndarray) -> RadarDetection:
    dr = max(extent, 0.1)
    dth = min(dr / max(r, 1e-6), 0.2)
    bbox = BoundingBox(theta - dth, r - dr, theta + dth, r + dr)
    return RadarDetection(position=(r, theta), bbox=bbox, embedding=embedding)


def _camera_frame(scenario, noise, failures, seed, k, t, live, embeds) -> list[CameraDetection]:
    if any(w.covers("camera", t) for w in failures):
        return []
    cam = scenario.camera
    rng = np.random.default_rng([seed, k, _CAMERA])
    out = []
    for i, obj, pos in live:
        obs = camera_observation(cam, obj, pos)
        jitter = rng.normal(size=3) * noise.camera_pixel_std
        dropped = rng.random() < noise.camera_dropout
        if obs is None or dropped:
            continue
        (u, v), half_w, top = obs
        if noise.camera_pixel_std > 0:
            u, v, top = u + jitter[0], v + jitter[1], top + jitter[2]
        if not cam.in_image((u, v)):
            continue
        out.append(_camera_detection(u, v, half_w, top, obj.category, embeds[i][1]))
    categories = sorted({o.category for o in scenario.objects}) or ["person"]
    x0, x1, y0, y1 = scenario.area
    for _ in range(rng.poisson(noise.camera_fp_rate) if noise.camera_fp_rate > 0 else 0):
        fake = ObjectSpec(-1, categories[int(rng.integers(len(categories)))], ((0.0, 0.0, 0.0),))
        obs = camera_observation(cam, fake, (rng.uniform(x0, x1), rng.uniform(y0, y1)))
        if obs is None or not cam.in_image(obs[0]):
            continue
        (u, v), half_w, top = obs
        out.append(_camera_detection(u, v, half_w, top, fake.category, _random_embedding(rng), 0.5))
    order = rng.permutation(len(out))
    return [out[j] for j in order]


def _camera_detection(u, v, half_w, top, category, embedding, confidence=0.9) -> CameraDetection:
    bbox = BoundingBox(u - half_w, min(top, v), u + half_w, v)
    return CameraDetection(bbox=bbox, category=category, confidence=confidence, embedding=embedding)


# --- scenario builders -------------------------------------------------------------------


def wandering_scenario(
    seed: int,
    n_objects: int = 6,
    duration: float = 60.0,
    camera: Optional[CameraModel] = None,
    area: tuple[float, float, float, float] = DEFAULT_AREA,
    categories: Sequence[str] = ("person", "car"),
    leg_seconds: float = 4.0,
) -> Scenario:
    """Objects hopping between random waypoints that cover the whole area."""
    rng = np.random.default_rng([seed, _SCENARIO])
    x0, x1, y0, y1 = area
    objects = []
    for oid in range(1, n_objects + 1):
        times = np.arange(0.0, duration + leg_seconds, leg_seconds)
        wps = tuple((float(min(t, duration)), float(rng.uniform(x0, x1)), float(rng.uniform(y0, y1))) for t in times)
        category = categories[(oid - 1) % len(categories)]
        objects.append(ObjectSpec(oid, category, wps, extent=0.3 if category == "person" else 0.9))
    return Scenario(tuple(objects), camera=camera or CameraModel.looking_forward(), duration=duration, area=area)


def straight_line_scenario(
    tracks: Sequence[tuple[str, Point2, Point2]], duration: float, camera: Optional[CameraModel] = None
) -> Scenario:
    """One object per ``(category, start, end)``, moving at constant velocity."""
    objects = [
        ObjectSpec(i + 1, cat, ((0.0, a[0], a[1]), (duration, b[0], b[1])), extent=0.3 if cat == "person" else 0.9)
        for i, (cat, a, b) in enumerate(tracks)
    ]
    return Scenario(tuple(objects), camera=camera or CameraModel.looking_forward(), duration=duration)


def converge_retreat_scenario(gap: float = 0.8, speed: float = 3.0, duration: float = 6.0) -> Scenario:
    """A person and a car approach each other on lanes ``gap`` meters apart,
    meet mid-scene and back off the way they came."""
    y = 10.0
    half = duration / 2.0
    reach = speed * half
    person = ObjectSpec(
        1,
        "person",
        ((0.0, -reach, y), (half, 0.0, y), (duration, -reach, y)),
        extent=0.3,
    )
    car = ObjectSpec(
        2,
        "car",
        ((0.0, reach, y + gap), (half, 0.0, y + gap), (duration, reach, y + gap)),
        extent=0.3,
    )
    return Scenario((person, car), duration=duration)
