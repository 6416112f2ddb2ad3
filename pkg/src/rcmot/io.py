"""File formats: frame logs, ground-truth logs, track logs, calibration and run config.

Logs are JSON Lines, one record per line. Floats are written with Python's
shortest round-trip representation, so reading a file back reproduces every
value bit-for-bit. All writes go to a temporary file that is renamed into
place, so an interrupted run never leaves a truncated output behind.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import tempfile
import typing
from pathlib import Path
from typing import Any, Callable, Iterable, Optional, Sequence

import numpy as np

from .calibration import BlockSamplingConfig, CalibrationConfig, CalibrationModel
from .detections import BoundingBox, CameraDetection, FramePair, RadarDetection
from .errors import (
    DegenerateConfigurationError,
    InvalidCalibrationError,
    ParseError,
    RcmotError,
    SchemaError,
)
from .geometry import Homography, RansacConfig
from .simulator import GroundTruthFrame, GroundTruthObject, SensorNoiseModel
from .tracking import BRANCHES, TrackerConfig, TrackLog, TrackSnapshot

PathLike = str | os.PathLike


# --- primitives ---------------------------------------------------------------------


def dumps(obj: Any) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def atomic_write_text(path: PathLike, text: str) -> None:
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_jsonl(records: Iterable[Any], path: PathLike) -> None:
    atomic_write_text(path, "".join(dumps(r) + "\n" for r in records))


def read_jsonl(path: PathLike, decode: Callable[[Any, int], Any]) -> list[Any]:
    """Decode every non-blank line; errors name the 1-based line number."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed JSON ({exc.msg})", lineno) from None
            try:
                out.append(decode(record, lineno))
            except ParseError:
                raise
            except (RcmotError, TypeError, ValueError) as exc:
                raise SchemaError(str(exc), lineno) from None
    return out


def _require(record: Any, key: str, lineno: Optional[int]) -> Any:
    if not isinstance(record, dict):
        raise SchemaError(f"expected an object, got {type(record).__name__}", lineno)
    if key not in record:
        raise SchemaError(f"missing required field {key!r}", lineno)
    return record[key]


def _number(value: Any, key: str, lineno: Optional[int]) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"field {key!r} must be a number", lineno)
    return float(value)


def _float_list(value: Any, n: int, key: str, lineno: Optional[int]) -> list[float]:
    if not isinstance(value, list) or len(value) != n:
        raise SchemaError(f"field {key!r} must be a list of {n} numbers", lineno)
    return [_number(v, key, lineno) for v in value]


def _embedding_out(e: Optional[np.ndarray]) -> dict[str, Any]:
    return {} if e is None else {"embedding": [float(v) for v in e]}


# --- frame log --------------------------------------------------------------------------


def frame_to_record(fp: FramePair) -> dict[str, Any]:
    radar = [
        {
            "r": d.position[0],
            "theta": d.position[1],
            "bbox": d.bbox.as_list() if d.bbox is not None else None,
            "category": d.category,
            **_embedding_out(d.embedding),
        }
        for d in fp.radar
    ]
    camera = [
        {"bbox": d.bbox.as_list(), "category": d.category, "confidence": d.confidence, **_embedding_out(d.embedding)}
        for d in fp.camera
    ]
    return {"t": fp.t, "radar": radar, "camera": camera}


def _embedding_in(record: dict, lineno: int) -> Optional[list[float]]:
    e = record.get("embedding")
    return None if e is None else _float_list(e, len(e) if isinstance(e, list) else -1, "embedding", lineno)


def frame_from_record(record: Any, lineno: int = 0) -> FramePair:
    t = _number(_require(record, "t", lineno), "t", lineno)
    radar = []
    for d in _require(record, "radar", lineno):
        bbox = d.get("bbox") if isinstance(d, dict) else None
        radar.append(
            RadarDetection(
                position=(
                    _number(_require(d, "r", lineno), "r", lineno),
                    _number(_require(d, "theta", lineno), "theta", lineno),
                ),
                bbox=BoundingBox(*_float_list(bbox, 4, "bbox", lineno)) if bbox is not None else None,
                category=d.get("category"),
                embedding=_embedding_in(d, lineno),
            )
        )
    camera = []
    for d in _require(record, "camera", lineno):
        camera.append(
            CameraDetection(
                bbox=BoundingBox(*_float_list(_require(d, "bbox", lineno), 4, "bbox", lineno)),
                category=_require(d, "category", lineno),
                confidence=_number(d.get("confidence", 1.0), "confidence", lineno),
                embedding=_embedding_in(d, lineno),
            )
        )
    return FramePair(t, tuple(radar), tuple(camera))


def write_frames(pairs: Sequence[FramePair], path: PathLike) -> None:
    write_jsonl((frame_to_record(fp) for fp in pairs), path)


def read_frames(path: PathLike) -> list[FramePair]:
    return read_jsonl(path, frame_from_record)


# --- ground truth log ---------------------------------------------------------------------


def write_ground_truth(gt: Sequence[GroundTruthFrame], path: PathLike) -> None:
    write_jsonl(
        (
            {"t": g.t, "objects": [{"id": o.id, "category": o.category, "x": o.x, "y": o.y} for o in g.objects]}
            for g in gt
        ),
        path,
    )


def _gt_from_record(record: Any, lineno: int) -> GroundTruthFrame:
    objs = []
    for o in _require(record, "objects", lineno):
        oid = _require(o, "id", lineno)
        if isinstance(oid, bool) or not isinstance(oid, int):
            raise SchemaError("object id must be an integer", lineno)
        objs.append(
            GroundTruthObject(
                oid,
                _require(o, "category", lineno),
                _number(_require(o, "x", lineno), "x", lineno),
                _number(_require(o, "y", lineno), "y", lineno),
            )
        )
    return GroundTruthFrame(_number(_require(record, "t", lineno), "t", lineno), tuple(objs))


def read_ground_truth(path: PathLike) -> list[GroundTruthFrame]:
    return read_jsonl(path, _gt_from_record)


# --- track log ----------------------------------------------------------------------------------


def write_tracks(log: TrackLog, path: PathLike) -> None:
    """One line per frame per branch, frames in time order, branches in fixed order."""

    def records():
        for k, t in enumerate(log.times):
            for b in BRANCHES:
                if b in log.branches:
                    yield {"t": t, "branch": b, "tracks": [dataclasses.asdict(s) for s in log.branches[b][k]]}

    write_jsonl(records(), path)


def _track_from_record(record: Any, lineno: int) -> tuple[float, str, list[TrackSnapshot]]:
    branch = _require(record, "branch", lineno)
    if branch not in BRANCHES:
        raise SchemaError(f"unknown branch {branch!r}", lineno)
    snaps = []
    for s in _require(record, "tracks", lineno):
        vals = {k: _number(_require(s, k, lineno), k, lineno) for k in ("x", "y", "vx", "vy")}
        tid = _require(s, "id", lineno)
        if isinstance(tid, bool) or not isinstance(tid, int):
            raise SchemaError("track id must be an integer", lineno)
        snaps.append(TrackSnapshot(tid, category=s.get("category"), **vals))
    return _number(_require(record, "t", lineno), "t", lineno), branch, snaps


def read_tracks(path: PathLike) -> TrackLog:
    log = TrackLog()
    for t, branch, snaps in read_jsonl(path, _track_from_record):
        frames = log.branches.setdefault(branch, [])
        if len(frames) == len(log.times):
            log.times.append(t)
        elif not math.isclose(log.times[len(frames)], t, abs_tol=1e-9):
            raise SchemaError(f"branch {branch!r} out of step with the other branches at t={t}")
        frames.append(snaps)
    lengths = {len(v) for v in log.branches.values()}
    if len(lengths) > 1:
        raise SchemaError("branches cover different numbers of frames")
    return log


# --- calibration ----------------------------------------------------------------------------------


def calibration_to_record(model: CalibrationModel) -> dict[str, Any]:
    return {
        "image_width": model.image_width,
        "image_height": model.image_height,
        "split_fraction": model.split_fraction,
        "h_upper": model.h_upper.flat,
        "h_lower": model.h_lower.flat,
        "stats": model.stats,
    }


def _homography_in(values: Any, key: str) -> Homography:
    vals = _float_list(values, 9, key, None)
    if not all(math.isfinite(v) for v in vals):
        raise InvalidCalibrationError(f"{key} has non-finite entries")
    if vals[8] == 0.0:
        raise InvalidCalibrationError(f"{key} has h33 = 0: the image origin maps to infinity")
    try:
        return Homography.from_flat(vals)
    except DegenerateConfigurationError as exc:
        raise InvalidCalibrationError(f"{key}: {exc}") from None


def calibration_from_record(record: Any) -> CalibrationModel:
    """Legacy files with a single ``h_upper`` load with both regions sharing it."""
    stats = dict(record.get("stats") or {}) if isinstance(record, dict) else {}
    h_upper = _homography_in(_require(record, "h_upper", None), "h_upper")
    if record.get("h_lower") is None:
        h_lower = h_upper
        stats["legacy_single_homography"] = True
        stats["fallback"] = True
    else:
        h_lower = _homography_in(record["h_lower"], "h_lower")
    width, height = _require(record, "image_width", None), _require(record, "image_height", None)
    if not all(isinstance(v, int) and not isinstance(v, bool) and v > 0 for v in (width, height)):
        raise SchemaError("image_width and image_height must be positive integers")
    try:
        return CalibrationModel(
            h_upper,
            h_lower,
            width,
            height,
            _number(record.get("split_fraction", 2.0 / 3.0), "split_fraction", None),
            stats,
        )
    except RcmotError as exc:
        raise InvalidCalibrationError(str(exc)) from None


def write_calibration(model: CalibrationModel, path: PathLike) -> None:
    atomic_write_text(path, json.dumps(calibration_to_record(model), indent=2, allow_nan=False) + "\n")


def read_calibration(path: PathLike) -> CalibrationModel:
    with open(path, encoding="utf-8") as fh:
        try:
            record = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed JSON ({exc.msg})", exc.lineno) from None
    return calibration_from_record(record)


# --- run config ------------------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class MetricsConfig:
    dist_threshold: float = 3.0


@dataclasses.dataclass(frozen=True)
class ScenarioConfig:
    kind: str = "wandering"  # wandering | converge
    n_objects: int = 6
    duration: float = 60.0

    def __post_init__(self) -> None:
        if self.kind not in ("wandering", "converge"):
            raise SchemaError(f"unknown scenario kind {self.kind!r}")


@dataclasses.dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    mode: str = "fusion"
    scenario: ScenarioConfig = dataclasses.field(default_factory=ScenarioConfig)
    noise: SensorNoiseModel = dataclasses.field(default_factory=SensorNoiseModel)
    calibration: CalibrationConfig = dataclasses.field(default_factory=CalibrationConfig)
    tracker: TrackerConfig = dataclasses.field(default_factory=TrackerConfig)
    metrics: MetricsConfig = dataclasses.field(default_factory=MetricsConfig)

    def __post_init__(self) -> None:
        if self.mode not in (*BRANCHES, "all"):
            raise SchemaError(f"unknown mode {self.mode!r}")


_NESTED = {
    "scenario": ScenarioConfig,
    "noise": SensorNoiseModel,
    "calibration": CalibrationConfig,
    "tracker": TrackerConfig,
    "metrics": MetricsConfig,
    "blocks": BlockSamplingConfig,
    "ransac": RansacConfig,
}


def _coerce(value: Any, hint: Any, where: str) -> Any:
    if hint is bool:
        if not isinstance(value, bool):
            raise SchemaError(f"{where} must be a boolean")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaError(f"{where} must be an integer")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"{where} must be a number")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise SchemaError(f"{where} must be a string")
        return value
    if typing.get_origin(hint) is tuple:
        if not isinstance(value, list):
            raise SchemaError(f"{where} must be a list")
        return tuple(_coerce(v, float, where) for v in value)
    return value


def _build(cls: type, data: Any, where: str) -> Any:
    if not isinstance(data, dict):
        raise SchemaError(f"{where or 'config'} must be an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise SchemaError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        path = f"{where}.{key}" if where else key
        if key in _NESTED and dataclasses.is_dataclass(_NESTED[key]):
            kwargs[key] = _build(_NESTED[key], value, path)
        else:
            kwargs[key] = _coerce(value, hints[key], path)
    try:
        return cls(**kwargs)
    except SchemaError:
        raise
    except (RcmotError, ValueError) as exc:
        raise SchemaError(f"{where or 'config'}: {exc}") from None


def run_config_from_dict(data: Any) -> RunConfig:
    return _build(RunConfig, data, "")


def read_run_config(path: PathLike) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed JSON ({exc.msg})", exc.lineno) from None
    return run_config_from_dict(data)


def run_config_to_dict(cfg: RunConfig) -> dict[str, Any]:
    return dataclasses.asdict(cfg)
