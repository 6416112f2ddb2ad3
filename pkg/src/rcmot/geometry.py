"""Planar projective geometry between the image plane and the radar RA plane.

Conventions: radar polar points are ``(r, theta)`` with ``theta`` measured
from boresight, positive to the right. Ground (Cartesian) points are
``(x, y)`` with ``y`` forward along boresight and ``x`` to the right, so
``x = r sin(theta)`` and ``y = r cos(theta)``. Angles are radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    CalibrationFailedError,
    DegenerateConfigurationError,
    InsufficientDataError,
    InvalidInputError,
    ProjectiveDegeneracyError,
)

Point2 = tuple[float, float]

DET_EPS = 1e-12
DENOM_EPS = 1e-12
# smallest-to-largest singular value ratio below which the DLT system is rank deficient
RANK_EPS = 1e-10
_NORM_SLACK = 4 * np.finfo(float).eps


def _finite_pair(p: Sequence[float]) -> tuple[float, float]:
    if len(p) != 2:
        raise InvalidInputError(f"expected a 2-vector, got {p!r}")
    a, b = float(p[0]), float(p[1])
    if not (math.isfinite(a) and math.isfinite(b)):
        raise InvalidInputError(f"non-finite point {p!r}")
    return a, b


def polar_to_cartesian(p: Sequence[float]) -> Point2:
    r, theta = _finite_pair(p)
    if r < 0:
        raise InvalidInputError(f"negative range {r}")
    return r * math.sin(theta), r * math.cos(theta)


def cartesian_to_polar(p: Sequence[float]) -> Point2:
    x, y = _finite_pair(p)
    if x == 0.0 and y == 0.0:
        raise InvalidInputError("azimuth undefined at the origin")
    return math.hypot(x, y), math.atan2(x, y)


def polar_to_cartesian_array(rt: np.ndarray) -> np.ndarray:
    """Vectorized ``polar_to_cartesian`` for an ``(N, 2)`` array; no range check."""
    rt = np.asarray(rt, dtype=float)
    r, theta = rt[..., 0], rt[..., 1]
    return np.stack([r * np.sin(theta), r * np.cos(theta)], axis=-1)


def cartesian_to_polar_array(xy: np.ndarray) -> np.ndarray:
    xy = np.asarray(xy, dtype=float)
    x, y = xy[..., 0], xy[..., 1]
    return np.stack([np.hypot(x, y), np.arctan2(x, y)], axis=-1)


def _normalize_matrix(m: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(m)
    if not np.isfinite(norm) or norm == 0.0:
        raise DegenerateConfigurationError("homography matrix is zero or non-finite")
    # leave already-normalized input untouched so stored matrices reload bit-exactly
    if abs(norm - 1.0) > _NORM_SLACK:
        m = m / norm
    if m[2, 2] < 0 or (m[2, 2] == 0 and m.flat[np.flatnonzero(m)[0]] < 0):
        m = -m
    return m


@dataclass(frozen=True, eq=False)
class Homography:
    """Non-singular 3x3 projective map, stored with unit Frobenius norm and h33 >= 0.

    Construction normalizes whatever matrix is passed in, so two homographies
    that differ by a nonzero scalar compare equal.
    """

    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.array(self.matrix, dtype=float).reshape(3, 3)
        if not np.all(np.isfinite(m)):
            raise DegenerateConfigurationError("homography has non-finite entries")
        m = _normalize_matrix(m)
        if abs(np.linalg.det(m)) <= DET_EPS:
            raise DegenerateConfigurationError("homography is singular")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> Homography:
        return cls(np.eye(3))

    @classmethod
    def from_flat(cls, h: Sequence[float]) -> Homography:
        if len(h) != 9:
            raise InvalidInputError(f"homography needs 9 values, got {len(h)}")
        return cls(np.asarray(h, dtype=float).reshape(3, 3))

    @property
    def flat(self) -> list[float]:
        return [float(v) for v in self.matrix.ravel()]

    def inverse(self) -> Homography:
        return Homography(np.linalg.inv(self.matrix))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map an ``(N, 2)`` array of points; raises if any denominator vanishes."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        out, ok = _project(self.matrix, pts)
        if not np.all(ok):
            bad = pts[~ok][0]
            raise ProjectiveDegeneracyError(f"denominator vanishes at {tuple(bad)}")
        return out

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Homography):
            return NotImplemented
        return bool(np.array_equal(self.matrix, other.matrix))

    def __hash__(self) -> int:
        return hash(self.matrix.tobytes())

    def __repr__(self) -> str:
        rows = np.array2string(self.matrix, precision=6, separator=", ")
        return f"Homography({rows})"


def as_homography(h: Homography | np.ndarray | Sequence[Sequence[float]]) -> Homography:
    return h if isinstance(h, Homography) else Homography(np.asarray(h, dtype=float))


def frobenius_distance(a: Homography, b: Homography) -> float:
    return float(np.linalg.norm(a.matrix - b.matrix))


def _project(m: np.ndarray, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    u, v = pts[:, 0], pts[:, 1]
    w = m[2, 0] * u + m[2, 1] * v + m[2, 2]
    ok = np.abs(w) > DENOM_EPS
    safe_w = np.where(ok, w, 1.0)
    a = (m[0, 0] * u + m[0, 1] * v + m[0, 2]) / safe_w
    b = (m[1, 0] * u + m[1, 1] * v + m[1, 2]) / safe_w
    out = np.stack([a, b], axis=-1)
    out[~ok] = np.nan
    return out, ok


def apply_homography(h: Homography | np.ndarray, p: Sequence[float]) -> Point2:
    hom = as_homography(h)
    u, v = _finite_pair(p)
    m = hom.matrix
    w = m[2, 0] * u + m[2, 1] * v + m[2, 2]
    if abs(w) <= DENOM_EPS:
        raise ProjectiveDegeneracyError(f"denominator vanishes at {(u, v)}")
    return (
        float((m[0, 0] * u + m[0, 1] * v + m[0, 2]) / w),
        float((m[1, 0] * u + m[1, 1] * v + m[1, 2]) / w),
    )


class PointPair(NamedTuple):
    src: Point2  # image pixels (u, v)
    dst: Point2  # radar polar (r, theta) unless stated otherwise


def pairs_to_arrays(pairs: Sequence[PointPair]) -> tuple[np.ndarray, np.ndarray]:
    if len(pairs) == 0:
        return np.zeros((0, 2)), np.zeros((0, 2))
    src = np.array([p[0] for p in pairs], dtype=float).reshape(-1, 2)
    dst = np.array([p[1] for p in pairs], dtype=float).reshape(-1, 2)
    if not (np.all(np.isfinite(src)) and np.all(np.isfinite(dst))):
        raise InvalidInputError("point pairs must be finite")
    return src, dst


# --- DLT -------------------------------------------------------------------


def _hartley(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched isotropic normalization of ``(B, N, 2)`` points.

    Returns normalized points, the ``(B, 3, 3)`` similarity transforms and a
    validity mask (False when all points of a batch coincide).
    """
    centroid = points.mean(axis=1, keepdims=True)
    centered = points - centroid
    mean_dist = np.linalg.norm(centered, axis=2).mean(axis=1)
    ok = mean_dist > 0
    scale = np.where(ok, math.sqrt(2.0) / np.where(ok, mean_dist, 1.0), 1.0)
    normed = centered * scale[:, None, None]
    t = np.zeros((points.shape[0], 3, 3))
    t[:, 0, 0] = scale
    t[:, 1, 1] = scale
    t[:, 0, 2] = -scale * centroid[:, 0, 0]
    t[:, 1, 2] = -scale * centroid[:, 0, 1]
    t[:, 2, 2] = 1.0
    return normed, t, ok


def _inv_similarity(t: np.ndarray) -> np.ndarray:
    s = t[:, 0, 0]
    inv = np.zeros_like(t)
    inv[:, 0, 0] = 1.0 / s
    inv[:, 1, 1] = 1.0 / s
    inv[:, 0, 2] = -t[:, 0, 2] / s
    inv[:, 1, 2] = -t[:, 1, 2] / s
    inv[:, 2, 2] = 1.0
    return inv


def _dlt_batch(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Solve one DLT problem per batch entry.

    ``src`` and ``dst`` are ``(B, N, 2)``. Returns ``(B, 3, 3)`` matrices
    normalized to unit Frobenius norm with h33 >= 0, and a mask of the
    entries that were well posed (full-rank system, non-singular result).
    """
    b, n, _ = src.shape
    xs, ts, ok_s = _hartley(src)
    xd, td, ok_d = _hartley(dst)
    u, v = xs[..., 0], xs[..., 1]
    up, vp = xd[..., 0], xd[..., 1]
    zeros, ones = np.zeros_like(u), np.ones_like(u)
    row1 = np.stack([u, v, ones, zeros, zeros, zeros, -up * u, -up * v, -up], axis=-1)
    row2 = np.stack([zeros, zeros, zeros, u, v, ones, -vp * u, -vp * v, -vp], axis=-1)
    a = np.empty((b, 2 * n, 9))
    a[:, 0::2] = row1
    a[:, 1::2] = row2
    _, s, vt = np.linalg.svd(a, full_matrices=True)
    hn = vt[:, -1, :].reshape(b, 3, 3)
    rank_ok = s[:, 7] > RANK_EPS * s[:, 0]
    h = _inv_similarity(td) @ hn @ ts
    norms = np.linalg.norm(h, axis=(1, 2))
    good_norm = np.isfinite(norms) & (norms > 0)
    h = h / np.where(good_norm, norms, 1.0)[:, None, None]
    flip = h[:, 2, 2] < 0
    h[flip] *= -1.0
    det_ok = np.abs(np.linalg.det(h)) > DET_EPS
    ok = ok_s & ok_d & rank_ok & good_norm & det_ok
    return h, ok


def estimate_homography_dlt(pairs: Sequence[PointPair]) -> Homography:
    """Least-squares DLT with Hartley normalization of both point sets."""
    src, dst = pairs_to_arrays(pairs)
    return _dlt_arrays(src, dst)


def _dlt_arrays(src: np.ndarray, dst: np.ndarray) -> Homography:
    if len(src) < 4:
        raise InsufficientDataError(f"need at least 4 point pairs, got {len(src)}")
    h, ok = _dlt_batch(src[None], dst[None])
    if not ok[0]:
        raise DegenerateConfigurationError("point configuration does not determine a homography")
    return Homography(h[0])


# --- residuals -------------------------------------------------------------


def cartesian_residuals(h: Homography | np.ndarray, src: np.ndarray, dst_polar: np.ndarray) -> np.ndarray:
    """Ground-plane distance (meters) between projected and observed polar points.

    Both the projection ``(r_p, theta_p)`` and the observation are converted to
    Cartesian before differencing. Degenerate projections get ``inf``.
    """
    m = h.matrix if isinstance(h, Homography) else np.asarray(h, dtype=float)
    proj, ok = _project(m, np.asarray(src, dtype=float).reshape(-1, 2))
    d = np.linalg.norm(polar_to_cartesian_array(proj) - polar_to_cartesian_array(dst_polar), axis=1)
    d[~ok] = np.inf
    return d


def reprojection_error(
    pairs: Sequence[PointPair], h: Homography | np.ndarray, space: str = "polar"
) -> float:
    """Root-mean-square transfer error of ``h`` over ``pairs``.

    ``space="polar"`` treats destinations as radar ``(r, theta)`` and measures
    in ground meters; ``space="planar"`` takes plain Euclidean residuals in the
    destination coordinates (e.g. pixels for radar-to-camera maps).
    """
    if len(pairs) == 0:
        raise InvalidInputError("reprojection error of an empty pair list")
    src, dst = pairs_to_arrays(pairs)
    return rms_error(src, dst, as_homography(h), space)


def rms_error(src: np.ndarray, dst: np.ndarray, h: Homography, space: str = "polar") -> float:
    if len(src) == 0:
        raise InvalidInputError("reprojection error of an empty pair list")
    if space == "polar":
        d = cartesian_residuals(h, src, dst)
    elif space == "planar":
        proj, ok = _project(h.matrix, src)
        d = np.linalg.norm(proj - dst, axis=1)
        d[~ok] = np.inf
    else:
        raise InvalidInputError(f"unknown residual space {space!r}")
    return float(math.sqrt(np.mean(d**2)))


# --- RANSAC ----------------------------------------------------------------


@dataclass(frozen=True)
class RansacConfig:
    max_iterations: int = 1000
    inlier_threshold: float = 0.5  # meters, ground plane
    min_inliers: int = 8
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise InvalidInputError("max_iterations must be >= 1")
        if not self.inlier_threshold > 0:
            raise InvalidInputError("inlier_threshold must be > 0")
        if self.min_inliers < 4:
            raise InvalidInputError("min_inliers must be >= 4")


_REFIT_ROUNDS = 10
_RANSAC_CHUNK = 256


def estimate_homography_ransac(
    pairs: Sequence[PointPair], cfg: RansacConfig = RansacConfig()
) -> tuple[Homography, np.ndarray]:
    src, dst = pairs_to_arrays(pairs)
    return ransac_arrays(src, dst, cfg)


def ransac_arrays(src: np.ndarray, dst: np.ndarray, cfg: RansacConfig) -> tuple[Homography, np.ndarray]:
    """Image-to-polar RANSAC; inliers are judged by ground-plane distance.

    All minimal samples are drawn up front from ``cfg.seed``, so the result
    does not depend on evaluation order. Ties in consensus size go to the
    lowest iteration index.
    """
    n = len(src)
    if n < 4:
        raise InsufficientDataError(f"need at least 4 point pairs, got {n}")
    rng = np.random.default_rng(cfg.seed)
    samples = np.argsort(rng.random((cfg.max_iterations, n)), axis=1)[:, :4]
    dst_xy = polar_to_cartesian_array(dst)

    best_count, best_h = -1, None
    for start in range(0, cfg.max_iterations, _RANSAC_CHUNK):
        idx = samples[start : start + _RANSAC_CHUNK]
        hs, ok = _dlt_batch(src[idx], dst[idx])
        counts = _consensus_counts(hs, src, dst_xy, cfg.inlier_threshold)
        counts[~ok] = -1
        k = int(np.argmax(counts))
        if counts[k] > best_count:
            best_count, best_h = int(counts[k]), hs[k]

    if best_h is None or best_count < cfg.min_inliers:
        raise CalibrationFailedError(
            f"best consensus {max(best_count, 0)} below min_inliers {cfg.min_inliers}"
        )
    final = Homography(best_h)
    mask = cartesian_residuals(final, src, dst) <= cfg.inlier_threshold
    # refit on the consensus set until it stops growing
    for _ in range(_REFIT_ROUNDS):
        try:
            cand = _dlt_arrays(src[mask], dst[mask])
        except DegenerateConfigurationError:
            break
        cand_mask = cartesian_residuals(cand, src, dst) <= cfg.inlier_threshold
        if int(cand_mask.sum()) < int(mask.sum()):
            break
        final, stable = cand, bool(np.array_equal(cand_mask, mask))
        mask = cand_mask
        if stable:
            break
    if int(mask.sum()) < cfg.min_inliers:
        raise CalibrationFailedError(
            f"refit consensus {int(mask.sum())} below min_inliers {cfg.min_inliers}"
        )
    return final, mask


def _consensus_counts(hs: np.ndarray, src: np.ndarray, dst_xy: np.ndarray, thr: float) -> np.ndarray:
    u, v = src[:, 0], src[:, 1]
    num_r = hs[:, 0, 0, None] * u + hs[:, 0, 1, None] * v + hs[:, 0, 2, None]
    num_t = hs[:, 1, 0, None] * u + hs[:, 1, 1, None] * v + hs[:, 1, 2, None]
    w = hs[:, 2, 0, None] * u + hs[:, 2, 1, None] * v + hs[:, 2, 2, None]
    ok = np.abs(w) > DENOM_EPS
    w = np.where(ok, w, 1.0)
    r, t = num_r / w, num_t / w
    dx = r * np.sin(t) - dst_xy[:, 0]
    dy = r * np.cos(t) - dst_xy[:, 1]
    inl = (dx * dx + dy * dy <= thr * thr) & ok
    return inl.sum(axis=1)
