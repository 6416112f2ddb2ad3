"""Detection value types, the similarity-provider contract and frame alignment."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence, Union

import numpy as np

from .errors import InvalidInputError
from .geometry import Point2

EMBEDDING_DIM = 128
DEFAULT_MAX_SKEW = 0.05


@dataclass(frozen=True)
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.x1, self.y1, self.x2, self.y2)):
            raise InvalidInputError(f"non-finite bounding box {self}")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise InvalidInputError(f"inverted bounding box {self}")

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    @property
    def center(self) -> Point2:
        return (self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0


def lower_center(bbox: BoundingBox) -> Point2:
    return (bbox.x1 + bbox.x2) / 2.0, bbox.y2


def as_embedding(values: Sequence[float] | np.ndarray | None) -> Optional[np.ndarray]:
    """Validate and freeze an embedding; ``None`` passes through."""
    if values is None:
        return None
    e = np.array(values, dtype=float)
    if e.shape != (EMBEDDING_DIM,):
        raise InvalidInputError(f"embedding must have {EMBEDDING_DIM} values, got shape {e.shape}")
    if not np.all(np.isfinite(e)):
        raise InvalidInputError("embedding has non-finite values")
    e.setflags(write=False)
    return e


def _embeddings_equal(a: Optional[np.ndarray], b: Optional[np.ndarray]) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return bool(np.array_equal(a, b))


@dataclass(frozen=True, eq=False)
class CameraDetection:
    bbox: BoundingBox
    category: str
    confidence: float = 1.0
    embedding: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise InvalidInputError(f"confidence {self.confidence} outside [0, 1]")
        object.__setattr__(self, "embedding", as_embedding(self.embedding))

    @property
    def anchor(self) -> Point2:
        return lower_center(self.bbox)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CameraDetection):
            return NotImplemented
        return (
            self.bbox == other.bbox
            and self.category == other.category
            and self.confidence == other.confidence
            and _embeddings_equal(self.embedding, other.embedding)
        )


@dataclass(frozen=True, eq=False)
class RadarDetection:
    """Radar object in the RA plane; ``position`` is ``(r, theta)``.

    ``bbox`` is in RA-plane units, azimuth on the first axis and range on the
    second, so its center is ``(theta, r)``.
    """

    position: Point2
    bbox: Optional[BoundingBox] = None
    category: Optional[str] = None
    embedding: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        r, theta = float(self.position[0]), float(self.position[1])
        if not (math.isfinite(r) and math.isfinite(theta)):
            raise InvalidInputError(f"non-finite radar position {self.position}")
        if r < 0 or not -math.pi / 2 < theta < math.pi / 2:
            raise InvalidInputError(f"radar position {self.position} outside the RA field")
        object.__setattr__(self, "position", (r, theta))
        object.__setattr__(self, "embedding", as_embedding(self.embedding))

    @classmethod
    def from_bbox(cls, bbox: BoundingBox, **kw) -> RadarDetection:
        theta, r = bbox.center
        return cls(position=(r, theta), bbox=bbox, **kw)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RadarDetection):
            return NotImplemented
        return (
            self.position == other.position
            and self.bbox == other.bbox
            and self.category == other.category
            and _embeddings_equal(self.embedding, other.embedding)
        )


Detection = Union[CameraDetection, RadarDetection]


@dataclass(frozen=True)
class SensorFrame:
    timestamp: float
    detections: tuple[Detection, ...] = ()


@dataclass(frozen=True)
class FramePair:
    t: float
    radar: tuple[RadarDetection, ...] = field(default_factory=tuple)
    camera: tuple[CameraDetection, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "radar", tuple(self.radar))
        object.__setattr__(self, "camera", tuple(self.camera))


# --- similarity --------------------------------------------------------------


class SimilarityProvider(Protocol):
    """Cross-modal matcher: score in [0, 1], symmetric, non-increasing in distance."""

    def __call__(self, e_r: np.ndarray, e_c: np.ndarray) -> float: ...


@dataclass(frozen=True)
class LogisticSimilarity:
    """Logistic of the distance between unit-normalized embeddings."""

    k: float = 10.0
    d0: float = 0.5

    def __call__(self, e_r: np.ndarray, e_c: np.ndarray) -> float:
        a = np.asarray(e_r, dtype=float)
        b = np.asarray(e_c, dtype=float)
        if a.shape != (EMBEDDING_DIM,) or b.shape != (EMBEDDING_DIM,):
            raise InvalidInputError(
                f"embeddings must both have {EMBEDDING_DIM} values, got {a.shape} and {b.shape}"
            )
        d = float(np.linalg.norm(_unit(a) - _unit(b)))
        return self.score_at(d)

    def score_at(self, d: float) -> float:
        z = self.k * (d - self.d0)
        # branch keeps exp() from overflowing for far-apart embeddings
        if z >= 0:
            ez = math.exp(-z)
            return ez / (1.0 + ez)
        return 1.0 / (1.0 + math.exp(z))


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


default_similarity = LogisticSimilarity()


def similarity(e_r: np.ndarray, e_c: np.ndarray) -> float:
    return default_similarity(e_r, e_c)


def similarity_matrix(
    radar: Sequence[RadarDetection],
    camera: Sequence[CameraDetection],
    provider: SimilarityProvider = default_similarity,
) -> np.ndarray:
    """Pairwise scores; pairs lacking an embedding on either side score 0."""
    s = np.zeros((len(radar), len(camera)))
    for i, rd in enumerate(radar):
        if rd.embedding is None:
            continue
        for j, cd in enumerate(camera):
            if cd.embedding is not None:
                s[i, j] = provider(rd.embedding, cd.embedding)
    return s


# --- time alignment ------------------------------------------------------------


def _check_sorted(stream: Sequence[SensorFrame], name: str) -> None:
    for a, b in zip(stream, stream[1:]):
        if b.timestamp < a.timestamp:
            raise InvalidInputError(f"{name} stream is not sorted by timestamp")


def pair_frames(
    radar_stream: Sequence[SensorFrame],
    camera_stream: Sequence[SensorFrame],
    max_skew: float = DEFAULT_MAX_SKEW,
) -> list[FramePair]:
    """Greedy smallest-skew-first matching of radar and camera frames.

    Each frame is used at most once; candidate pairs with skew above
    ``max_skew`` are never formed. Ties go to the earlier radar, then the
    earlier camera frame. The pair takes the radar timestamp.
    """
    _check_sorted(radar_stream, "radar")
    _check_sorted(camera_stream, "camera")
    candidates = []
    for i, rf in enumerate(radar_stream):
        for j, cf in enumerate(camera_stream):
            skew = abs(rf.timestamp - cf.timestamp)
            if skew <= max_skew:
                candidates.append((skew, i, j))
    candidates.sort()
    used_r: set[int] = set()
    used_c: set[int] = set()
    chosen = []
    for _, i, j in candidates:
        if i in used_r or j in used_c:
            continue
        used_r.add(i)
        used_c.add(j)
        chosen.append((i, j))
    chosen.sort()
    out = []
    for i, j in chosen:
        rf, cf = radar_stream[i], camera_stream[j]
        out.append(
            FramePair(
                t=rf.timestamp,
                radar=tuple(d for d in rf.detections if isinstance(d, RadarDetection)),
                camera=tuple(d for d in cf.detections if isinstance(d, CameraDetection)),
            )
        )
    return out
