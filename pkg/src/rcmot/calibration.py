"""Online targetless radar-camera calibration from cross-modal correspondences.

Pipeline per frame: collect correspondences whose feature score clears the
threshold, thin them with block sampling, route them to the upper (distal)
or lower (proximal) image region, then fit one image-to-RA homography per
region with RANSAC.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Optional, Sequence

import numpy as np

from .detections import FramePair, SimilarityProvider, default_similarity
from .errors import CalibrationFailedError, InvalidInputError
from .geometry import (
    Homography,
    Point2,
    RansacConfig,
    apply_homography,
    cartesian_residuals,
    ransac_arrays,
)

DEFAULT_SPLIT = 2.0 / 3.0


@dataclass(frozen=True)
class Correspondence:
    image_point: Point2
    radar_point: Point2  # (r, theta)
    t: float = 0.0
    score: float = 1.0


@dataclass(frozen=True)
class BlockSamplingConfig:
    """``pattern="grid"`` keeps blocks on even rows and even columns (a quarter of
    the image); ``"checkerboard"`` keeps blocks whose row and column parity agree."""

    block_size: int = 5
    stride_blocks: int = 1
    pattern: str = "grid"

    def __post_init__(self) -> None:
        if self.block_size < 1 or self.stride_blocks < 1:
            raise InvalidInputError("block_size and stride_blocks must be >= 1")
        if self.pattern not in ("grid", "checkerboard"):
            raise InvalidInputError(f"unknown block pattern {self.pattern!r}")


@dataclass(frozen=True)
class CalibrationConfig:
    image_width: int = 640
    image_height: int = 480
    threshold: float = 0.8
    split_fraction: float = DEFAULT_SPLIT
    up_down: bool = True
    blocks: BlockSamplingConfig = field(default_factory=BlockSamplingConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    holdout_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.split_fraction < 1.0:
            raise InvalidInputError("split_fraction must be in (0, 1)")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise InvalidInputError("holdout_fraction must be in [0, 1)")
        if self.image_width <= 0 or self.image_height <= 0:
            raise InvalidInputError("image dimensions must be positive")


@dataclass(frozen=True, eq=False)
class CalibrationModel:
    h_upper: Homography
    h_lower: Homography
    image_width: int
    image_height: int
    split_fraction: float = DEFAULT_SPLIT
    stats: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0.0 < self.split_fraction < 1.0:
            raise InvalidInputError("split_fraction must be in (0, 1)")

    @property
    def split_row(self) -> float:
        return self.split_fraction * self.image_height

    def homography_for(self, v: float) -> Homography:
        return self.h_upper if v < self.split_row else self.h_lower

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CalibrationModel):
            return NotImplemented
        return (
            self.h_upper == other.h_upper
            and self.h_lower == other.h_lower
            and self.image_width == other.image_width
            and self.image_height == other.image_height
            and self.split_fraction == other.split_fraction
            and self.stats == other.stats
        )


# --- correspondence collection ---------------------------------------------------


def collect_correspondences(
    pairs: Sequence[FramePair],
    threshold: float = 0.8,
    similarity: SimilarityProvider = default_similarity,
) -> list[Correspondence]:
    """Per frame, pair radar and camera detections whose score exceeds ``threshold``.

    Greedy by descending score with mutual exclusion, so each detection
    contributes to at most one correspondence per frame.
    """
    out: list[Correspondence] = []
    for fp in pairs:
        out.extend(_frame_correspondences(fp, threshold, similarity))
    return out


def _frame_correspondences(
    fp: FramePair, threshold: float, similarity: SimilarityProvider
) -> list[Correspondence]:
    scored = []
    for i, rd in enumerate(fp.radar):
        if rd.embedding is None:
            continue
        for j, cd in enumerate(fp.camera):
            if cd.embedding is None:
                continue
            s = similarity(rd.embedding, cd.embedding)
            if s > threshold:
                scored.append((-s, i, j))
    scored.sort()
    used_r: set[int] = set()
    used_c: set[int] = set()
    out = []
    for neg_s, i, j in scored:
        if i in used_r or j in used_c:
            continue
        used_r.add(i)
        used_c.add(j)
        out.append(Correspondence(fp.camera[j].anchor, fp.radar[i].position, fp.t, -neg_s))
    return out


# --- block sampling ------------------------------------------------------------------


def block_selected(bx: int, by: int, stride_blocks: int, pattern: str = "grid") -> bool:
    if pattern == "checkerboard":
        return (bx // stride_blocks + by // stride_blocks) % 2 == 0
    period = 2 * stride_blocks
    return bx % period < stride_blocks and by % period < stride_blocks


def block_sample(
    corrs: Sequence[Correspondence],
    cfg: BlockSamplingConfig,
    image_dims: tuple[int, int],
) -> list[Correspondence]:
    """Keep at most one correspondence per selected image block.

    Blocks alternate with skipped ones along both axes. Inside a selected
    block the correspondence nearest the block center survives (ties: earliest
    ``t``, then smallest image point). Points outside the image are dropped.
    """
    width, height = image_dims
    if width <= 0 or height <= 0:
        raise InvalidInputError("image dimensions must be positive")
    bs = cfg.block_size
    best: dict[tuple[int, int], tuple[tuple, Correspondence]] = {}
    for c in corrs:
        u, v = c.image_point
        if not (0 <= u < width and 0 <= v < height):
            continue
        bx, by = int(u // bs), int(v // bs)
        if not block_selected(bx, by, cfg.stride_blocks, cfg.pattern):
            continue
        cx, cy = (bx + 0.5) * bs, (by + 0.5) * bs
        key = (math.hypot(u - cx, v - cy), c.t, (u, v))
        cur = best.get((bx, by))
        if cur is None or key < cur[0]:
            best[(bx, by)] = (key, c)
    return [best[k][1] for k in sorted(best, key=lambda b: (b[1], b[0]))]


def split_up_down(
    corrs: Sequence[Correspondence], image_height: float, split_fraction: float = DEFAULT_SPLIT
) -> tuple[list[Correspondence], list[Correspondence]]:
    row = split_fraction * image_height
    upper = [c for c in corrs if c.image_point[1] < row]
    lower = [c for c in corrs if c.image_point[1] >= row]
    return upper, lower


# --- calibration ----------------------------------------------------------------------


def _arrays(corrs: Sequence[Correspondence]) -> tuple[np.ndarray, np.ndarray]:
    if not corrs:
        return np.zeros((0, 2)), np.zeros((0, 2))
    src = np.array([c.image_point for c in corrs], dtype=float)
    dst = np.array([c.radar_point for c in corrs], dtype=float)
    return src, dst


def _rmse(d: np.ndarray) -> Optional[float]:
    return float(math.sqrt(np.mean(d**2))) if len(d) else None


def sample_correspondences(pairs: Sequence[FramePair], cfg: CalibrationConfig, similarity) -> list[Correspondence]:
    dims = (cfg.image_width, cfg.image_height)
    out: list[Correspondence] = []
    for fp in pairs:
        out.extend(block_sample(_frame_correspondences(fp, cfg.threshold, similarity), cfg.blocks, dims))
    return out


def holdout_split(regions: Sequence[np.ndarray], fraction: float, seed: int) -> np.ndarray:
    """Boolean mask withholding ``round(fraction * n)`` items of each region.

    Regions are boolean masks over the same items; each gets its own seeded
    draw, so the mask depends only on region membership, never on whether the
    regions are later fit jointly or separately.
    """
    n = len(regions[0]) if len(regions) else 0
    mask = np.zeros(n, dtype=bool)
    for k, sel in enumerate(regions):
        idx = np.flatnonzero(sel)
        m = int(round(fraction * len(idx)))
        if m:
            mask[idx[np.random.default_rng([seed, k]).permutation(len(idx))[:m]]] = True
    return mask


def calibrate(
    pairs: Sequence[FramePair],
    cfg: CalibrationConfig = CalibrationConfig(),
    similarity: SimilarityProvider = default_similarity,
) -> CalibrationModel:
    if not pairs:
        raise InvalidInputError("calibration needs at least one frame pair")
    corrs = sample_correspondences(pairs, cfg, similarity)
    return fit_model(corrs, cfg)


def fit_model(corrs: Sequence[Correspondence], cfg: CalibrationConfig) -> CalibrationModel:
    """Fit the region homographies to already-sampled correspondences.

    A seeded ``holdout_fraction`` of each region's correspondences is withheld;
    each region is fit on its training share and scored on its held-out share,
    in ground meters. The single-homography variant uses the same split.
    """
    src, dst = _arrays(corrs)
    row = cfg.split_fraction * cfg.image_height
    upper = src[:, 1] < row if len(src) else np.zeros(0, dtype=bool)
    regions = {"upper": upper, "lower": ~upper}
    held = holdout_split(list(regions.values()), cfg.holdout_fraction, cfg.seed)

    def fit(train: np.ndarray) -> tuple[Optional[Homography], int]:
        if int(train.sum()) < cfg.ransac.min_inliers:
            return None, 0
        try:
            h, mask = ransac_arrays(src[train], dst[train], cfg.ransac)
        except CalibrationFailedError:
            return None, 0
        return h, int(mask.sum())

    fitted: dict[str, tuple[Optional[Homography], int]] = {}
    shared_h, shared_inliers = None, 0
    if cfg.up_down:
        for name, sel in regions.items():
            fitted[name] = fit(sel & ~held)
        if all(h is None for h, _ in fitted.values()):
            raise CalibrationFailedError("neither image region yields a homography")
    else:
        fitted = {name: (None, 0) for name in regions}
    if any(h is None for h, _ in fitted.values()):
        shared_h, shared_inliers = fit(~held)
        if shared_h is None:
            raise CalibrationFailedError("no homography could be fit")

    stats: dict[str, Any] = {
        "correspondences": int(len(src)),
        "heldout": int(held.sum()),
        "up_down": cfg.up_down,
        "inlier_threshold": cfg.ransac.inlier_threshold,
    }
    chosen: dict[str, Homography] = {}
    for name, sel in regions.items():
        h, inliers = fitted[name]
        fallback = h is None
        if fallback:
            h, inliers = shared_h, shared_inliers
        chosen[name] = h
        test = sel & held
        d = cartesian_residuals(h, src[test], dst[test]) if test.any() else np.zeros(0)
        gated = d[d <= cfg.ransac.inlier_threshold]
        stats[name] = {
            "train_pairs": int((sel & ~held).sum()),
            "heldout_pairs": int(test.sum()),
            "inliers": inliers,
            "fallback": bool(fallback and cfg.up_down),
            "heldout_rmse": _rmse(d),
            "heldout_inlier_rmse": _rmse(gated),
            "heldout_inlier_fraction": float(len(gated) / len(d)) if len(d) else None,
        }
    stats["fallback"] = bool(stats["upper"]["fallback"] or stats["lower"]["fallback"])
    d_all = np.concatenate(
        [cartesian_residuals(chosen[n], src[s & held], dst[s & held]) for n, s in regions.items()]
    ) if held.any() else np.zeros(0)
    stats["heldout_rmse"] = _rmse(d_all)
    stats["heldout_inlier_rmse"] = _rmse(d_all[d_all <= cfg.ransac.inlier_threshold])
    return CalibrationModel(
        h_upper=chosen["upper"],
        h_lower=chosen["lower"],
        image_width=cfg.image_width,
        image_height=cfg.image_height,
        split_fraction=cfg.split_fraction,
        stats=stats,
    )


def single_region_config(cfg: CalibrationConfig) -> CalibrationConfig:
    return replace(cfg, up_down=False)


# --- projection ----------------------------------------------------------------------


def project_to_radar(model: CalibrationModel, p: Point2) -> Point2:
    """Image pixel to radar ``(r, theta)`` through the region's homography."""
    return apply_homography(model.homography_for(float(p[1])), p)


def project_to_ground(model: CalibrationModel, p: Point2) -> Point2:
    r, theta = project_to_radar(model, p)
    # a projected range can come out slightly negative far outside the calibrated area
    return r * math.sin(theta), r * math.cos(theta)


def in_image(model: CalibrationModel, p: Point2) -> bool:
    return 0 <= p[0] < model.image_width and 0 <= p[1] < model.image_height


def projected_ground_error(model: CalibrationModel, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Per-point ground-plane error of the model (each point uses its region's H)."""
    out = np.empty(len(src))
    upper = src[:, 1] < model.split_row
    for sel, h in ((upper, model.h_upper), (~upper, model.h_lower)):
        if sel.any():
            out[sel] = cartesian_residuals(h, src[sel], dst[sel])
    return out
