"""Rectangular assignment, two-stage radar-camera matching and category gating."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .detections import CameraDetection, RadarDetection, SimilarityProvider, default_similarity
from .errors import InvalidInputError
from .geometry import Point2, polar_to_cartesian

INFEASIBLE = math.inf

Pair = tuple[int, int]


# --- assignment ------------------------------------------------------------------


def _as_cost_matrix(costs) -> np.ndarray:
    c = np.array(costs, dtype=float)
    if c.size == 0:
        return c.reshape(c.shape[0] if c.ndim == 2 else 0, c.shape[1] if c.ndim == 2 else 0)
    if c.ndim != 2:
        raise InvalidInputError(f"cost matrix must be 2-D, got shape {c.shape}")
    if np.any(np.isnan(c)):
        raise InvalidInputError("cost matrix contains NaN; use INFEASIBLE for gated cells")
    if np.any(c < 0):
        raise InvalidInputError("cost matrix entries must be >= 0")
    return c


def _solve(c: np.ndarray) -> tuple[list[int], list[float], list[float]]:
    """Min-cost maximum-cardinality matching by successive shortest paths.

    Rows are sources, columns connect to an implicit sink; Dijkstra runs on
    reduced costs with Johnson potentials. Returns ``row_match`` (column or -1)
    and the final row/column potentials, which certify optimality: every edge
    of any other optimal matching has zero reduced cost.
    """
    n_r, n_c = c.shape
    feas = np.isfinite(c)
    adj = [[(j, float(c[i, j])) for j in range(n_c) if feas[i, j]] for i in range(n_r)]
    row_match = [-1] * n_r
    col_match = [-1] * n_c
    pr = [0.0] * n_r
    pc = [0.0] * n_c
    pt = 0.0
    inf = math.inf
    for _ in range(min(n_r, n_c)):
        dr = [inf] * n_r
        dc = [inf] * n_c
        prev_row = [-1] * n_c
        heap: list[tuple[float, int, int]] = []
        for i in range(n_r):
            if row_match[i] == -1:
                dr[i] = 0.0
                heap.append((0.0, 0, i))
        heapq.heapify(heap)
        done_r = [False] * n_r
        done_c = [False] * n_c
        d_sink, sink_col = inf, -1
        while heap:
            d, kind, k = heapq.heappop(heap)
            if d >= d_sink:
                break
            if kind == 0:
                if done_r[k] or d > dr[k]:
                    continue
                done_r[k] = True
                for j, cij in adj[k]:
                    if done_c[j] or row_match[k] == j:
                        continue
                    nd = d + max(cij + pr[k] - pc[j], 0.0)
                    if nd < dc[j]:
                        dc[j] = nd
                        prev_row[j] = k
                        heapq.heappush(heap, (nd, 1, j))
            else:
                if done_c[k] or d > dc[k]:
                    continue
                done_c[k] = True
                i = col_match[k]
                if i == -1:
                    nd = d + max(pc[k] - pt, 0.0)
                    if nd < d_sink:
                        d_sink, sink_col = nd, k
                elif not done_r[i]:
                    nd = d + max(-float(c[i, k]) + pc[k] - pr[i], 0.0)
                    if nd < dr[i]:
                        dr[i] = nd
                        heapq.heappush(heap, (nd, 0, i))
        if sink_col == -1:
            break
        for i in range(n_r):
            pr[i] += min(dr[i], d_sink)
        for j in range(n_c):
            pc[j] += min(dc[j], d_sink)
        pt += d_sink
        j = sink_col
        while j != -1:
            i = prev_row[j]
            nxt = row_match[i]
            row_match[i] = j
            col_match[j] = i
            j = nxt
    return row_match, pr, pc


def assignment_cost(costs, pairs: Sequence[Pair]) -> float:
    c = np.asarray(costs, dtype=float)
    return float(sum(c[i, j] for i, j in sorted(pairs)))


def hungarian(costs) -> list[Pair]:
    """Optimal rectangular assignment over feasible (finite) cells.

    Maximizes the number of assigned pairs, then minimizes their total cost.
    Among equally good assignments the lexicographically smallest sorted list
    of ``(row, col)`` pairs is returned.
    """
    c = _as_cost_matrix(costs)
    if c.size == 0:
        return []
    row_match, pr, pc = _solve(c)
    pairs = [(i, j) for i, j in enumerate(row_match) if j != -1]
    tol = 1e-9 * (1.0 + float(np.max(c[np.isfinite(c)], initial=0.0)))
    tight_spare = any(
        math.isfinite(c[i, j]) and row_match[i] != j and abs(c[i, j] + pr[i] - pc[j]) <= tol
        for i in range(c.shape[0])
        for j in range(c.shape[1])
    )
    if not tight_spare:
        return pairs
    return _lexicographic_optimum(c, pairs, pr, pc, tol)


def _lexicographic_optimum(
    c: np.ndarray, found: list[Pair], pr: list[float], pc: list[float], tol: float
) -> list[Pair]:
    best_card = len(found)
    best_cost = assignment_cost(c, found)
    current = dict(found)
    n_r, n_c = c.shape
    fixed: list[Pair] = []
    dropped_rows: set[int] = set()

    def completes_optimally(extra: Pair) -> Optional[dict[int, int]]:
        trial = fixed + [extra]
        used_rows = {i for i, _ in trial} | dropped_rows
        used_cols = {j for _, j in trial}
        rows = [i for i in range(n_r) if i not in used_rows]
        cols = [j for j in range(n_c) if j not in used_cols]
        base = sum(c[i, j] for i, j in trial)
        sub_pairs: list[Pair] = []
        if rows and cols:
            sub = c[np.ix_(rows, cols)]
            rm, _, _ = _solve(sub)
            sub_pairs = [(rows[a], cols[b]) for a, b in enumerate(rm) if b != -1]
        card = len(trial) + len(sub_pairs)
        cost = base + sum(c[i, j] for i, j in sub_pairs)
        if card == best_card and cost <= best_cost + tol:
            return dict(trial + sub_pairs)
        return None

    for r in range(n_r):
        chosen = None
        for j in range(n_c):
            if not math.isfinite(c[r, j]) or any(j == fj for _, fj in fixed):
                continue
            if current.get(r) == j:
                chosen = j
                break
            if abs(c[r, j] + pr[r] - pc[j]) > tol:
                continue
            completion = completes_optimally((r, j))
            if completion is not None:
                current = completion
                chosen = j
                break
        if chosen is None:
            dropped_rows.add(r)
        else:
            fixed.append((r, chosen))
    return sorted(fixed)


# --- radar-camera two-stage matching -------------------------------------------


@dataclass(frozen=True)
class FusionMatchConfig:
    sim_threshold: float = 0.8
    dist_threshold: float = 3.0  # meters


@dataclass
class MatchResult:
    matched: list[tuple[int, int, str]] = field(default_factory=list)  # (radar, camera, stage)
    unmatched_radar: list[int] = field(default_factory=list)
    unmatched_camera: list[int] = field(default_factory=list)


def distance_matrix(a: Sequence[Point2], b: Sequence[Point2]) -> np.ndarray:
    if not a or not b:
        return np.zeros((len(a), len(b)))
    pa = np.asarray(a, dtype=float).reshape(-1, 2)
    pb = np.asarray(b, dtype=float).reshape(-1, 2)
    return np.linalg.norm(pa[:, None, :] - pb[None, :, :], axis=2)


def match_radar_camera(
    radar: Sequence[RadarDetection],
    camera_ground: Sequence[tuple[CameraDetection, Point2]],
    cfg: FusionMatchConfig = FusionMatchConfig(),
    similarity: SimilarityProvider = default_similarity,
) -> MatchResult:
    """Feature stage (score and distance gate, greedy by score), then a
    Hungarian position stage on what is left, reverting pairs beyond the gate."""
    radar_xy = [polar_to_cartesian(d.position) for d in radar]
    cam_xy = [tuple(p) for _, p in camera_ground]
    dist = distance_matrix(radar_xy, cam_xy)

    candidates = []
    for i, rd in enumerate(radar):
        if rd.embedding is None:
            continue
        for j, (cd, _) in enumerate(camera_ground):
            if cd.embedding is None or dist[i, j] > cfg.dist_threshold:
                continue
            s = similarity(rd.embedding, cd.embedding)
            if s > cfg.sim_threshold:
                candidates.append((-s, i, j))
    candidates.sort()
    result = MatchResult()
    used_r: set[int] = set()
    used_c: set[int] = set()
    for _, i, j in candidates:
        if i in used_r or j in used_c:
            continue
        used_r.add(i)
        used_c.add(j)
        result.matched.append((i, j, "feature"))

    rest_r = [i for i in range(len(radar)) if i not in used_r]
    rest_c = [j for j in range(len(camera_ground)) if j not in used_c]
    if rest_r and rest_c:
        sub = dist[np.ix_(rest_r, rest_c)]
        for a, b in hungarian(sub):
            if sub[a, b] <= cfg.dist_threshold:
                i, j = rest_r[a], rest_c[b]
                used_r.add(i)
                used_c.add(j)
                result.matched.append((i, j, "position"))
    result.matched.sort()
    result.unmatched_radar = [i for i in range(len(radar)) if i not in used_r]
    result.unmatched_camera = [j for j in range(len(camera_ground)) if j not in used_c]
    return result


# --- detection-track association -------------------------------------------------


def gate_by_category(det_category: Optional[str], track_category: Optional[str]) -> bool:
    """True ("matched") unless both labels are known and differ."""
    if det_category is None or track_category is None:
        return True
    return det_category == track_category


@dataclass(frozen=True)
class TrackAssociationConfig:
    gate_distance: float = 3.0
    category_gating: bool = True


@dataclass
class Assignment:
    matched: list[tuple[int, int]] = field(default_factory=list)  # (detection, track)
    unmatched_detections: list[int] = field(default_factory=list)
    unmatched_tracks: list[int] = field(default_factory=list)


def match_detections_to_tracks(
    det_positions: Sequence[Point2],
    det_categories: Sequence[Optional[str]],
    track_positions: Sequence[Point2],
    track_categories: Sequence[Optional[str]],
    cfg: TrackAssociationConfig = TrackAssociationConfig(),
) -> Assignment:
    """Distance-cost Hungarian with distance and category gates marked infeasible."""
    n_d, n_t = len(det_positions), len(track_positions)
    cost = distance_matrix(list(det_positions), list(track_positions))
    cost[cost > cfg.gate_distance] = INFEASIBLE
    if cfg.category_gating:
        for i in range(n_d):
            for j in range(n_t):
                if not gate_by_category(det_categories[i], track_categories[j]):
                    cost[i, j] = INFEASIBLE
    pairs = hungarian(cost) if n_d and n_t else []
    used_d = {i for i, _ in pairs}
    used_t = {j for _, j in pairs}
    return Assignment(
        matched=pairs,
        unmatched_detections=[i for i in range(n_d) if i not in used_d],
        unmatched_tracks=[j for j in range(n_t) if j not in used_t],
    )
