"""Command-line entry point: ``rcmot simulate | calibrate | track | evaluate | plot | bench``.

Exit codes: 0 on success, 2 on a usage error, 1 on a processing error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import statistics
import sys
from typing import Any, Optional, Sequence
from xml.sax.saxutils import escape

from . import io
from .calibration import CalibrationModel, calibrate, single_region_config
from .detections import FramePair
from .errors import RcmotError
from .metrics import ClearReport, clear_mot
from .simulator import (
    FailureWindow,
    GroundTruthFrame,
    Scenario,
    converge_retreat_scenario,
    synthesize_scene,
    wandering_scenario,
)
from .tracking import BRANCHES, TrackLog, run_tracker

EXIT_OK, EXIT_ERROR, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# --- pipeline -----------------------------------------------------------------------


def build_scenario(cfg: io.RunConfig) -> Scenario:
    sc = cfg.scenario
    if sc.kind == "converge":
        return converge_retreat_scenario(duration=sc.duration)
    return wandering_scenario(cfg.seed, n_objects=sc.n_objects, duration=sc.duration)


def simulate(cfg: io.RunConfig, failures: Sequence[FailureWindow] = ()) -> tuple[list[FramePair], list[GroundTruthFrame]]:
    return synthesize_scene(build_scenario(cfg), cfg.noise, failures, seed=cfg.seed)


def branches_for(mode: str) -> tuple[str, ...]:
    return BRANCHES if mode == "all" else (mode,)


def evaluate_log(
    log: TrackLog, gt: Sequence[GroundTruthFrame], dist_threshold: float = 3.0
) -> dict[str, ClearReport]:
    return {
        b: clear_mot(gt, snaps, log.times, dist_threshold)
        for b, snaps in log.branches.items()
    }


def report_document(reports: dict[str, ClearReport]) -> dict[str, Any]:
    return {"branches": {b: reports[b].as_dict() for b in BRANCHES if b in reports}}


def run_pipeline(cfg: io.RunConfig, failures: Sequence[FailureWindow] = ()) -> dict[str, ClearReport]:
    """simulate, calibrate and track one seeded scene, then score every branch."""
    frames, gt = simulate(cfg, failures)
    calib = calibrate(frames, dataclasses.replace(cfg.calibration, seed=cfg.seed))
    log = run_tracker(frames, calib, cfg.tracker, branches_for(cfg.mode))
    return evaluate_log(log, gt, cfg.metrics.dist_threshold)


# --- display helpers -----------------------------------------------------------------


def _fmt(v: Optional[float], digits: int = 4) -> str:
    return "-" if v is None else f"{v:.{digits}f}"


def _angle(rad: float, degrees: bool) -> str:
    return f"{math.degrees(rad):.2f} deg" if degrees else f"{rad:.4f} rad"


def report_table(reports: dict[str, ClearReport]) -> str:
    header = f"{'branch':<8} {'MOTA':>8} {'MOTP[m]':>8} {'FNR':>8} {'FPR':>8} {'IDSW':>6}"
    rows = [header, "-" * len(header)]
    for b in BRANCHES:
        if b in reports:
            r = reports[b]
            rows.append(f"{b:<8} {_fmt(r.mota):>8} {_fmt(r.motp):>8} {_fmt(r.fnr):>8} {_fmt(r.fpr):>8} {r.idsw:>6}")
    return "\n".join(rows)


# 95% two-sided Student-t quantiles by degrees of freedom
_T95 = {
    1: 12.706, 2: 4.303, 3: 3.182, 4: 2.776, 5: 2.571, 6: 2.447, 7: 2.365, 8: 2.306, 9: 2.262, 10: 2.228,
    11: 2.201, 12: 2.179, 13: 2.160, 14: 2.145, 15: 2.131, 16: 2.120, 17: 2.110, 18: 2.101, 19: 2.093,
    20: 2.086, 21: 2.080, 22: 2.074, 23: 2.069, 24: 2.064, 25: 2.060, 26: 2.056, 27: 2.052, 28: 2.048,
    29: 2.045, 30: 2.042, 40: 2.021, 60: 2.000, 120: 1.980,
}


def t_quantile95(df: int) -> float:
    if df < 1:
        raise ValueError("need at least two samples for an interval")
    if df in _T95:
        return _T95[df]
    if df > max(_T95):
        return 1.960
    return _T95[max(k for k in _T95 if k < df)]  # next lower df: wider, so conservative


def mean_interval(values: Sequence[float]) -> tuple[float, Optional[float]]:
    """Mean and 95% t half-width (None for a single value)."""
    m = statistics.fmean(values)
    if len(values) < 2:
        return m, None
    return m, t_quantile95(len(values) - 1) * statistics.stdev(values) / math.sqrt(len(values))


# --- SVG plot -----------------------------------------------------------------------------

_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22")
_DEFAULT_BOUNDS = (-6.0, 6.0, 0.0, 30.0)


def trajectory_svg(
    tracks: dict[int, list[tuple[float, float]]],
    truth: dict[int, list[tuple[float, float]]],
    width: int = 480,
    height: int = 640,
    margin: int = 40,
) -> str:
    """Bird's-eye plot: x to the right, forward range y up. GT dashed."""
    pts = [p for line in (*tracks.values(), *truth.values()) for p in line]
    if pts:
        xs, ys = [p[0] for p in pts], [p[1] for p in pts]
        x0, x1, y0, y1 = min(xs) - 1, max(xs) + 1, min(ys) - 1, max(ys) + 1
    else:
        x0, x1, y0, y1 = _DEFAULT_BOUNDS
    scale = min((width - 2 * margin) / (x1 - x0), (height - 2 * margin) / (y1 - y0))

    def sx(x: float) -> float:
        return round(margin + (x - x0) * scale, 2)

    def sy(y: float) -> float:
        return round(height - margin - (y - y0) * scale, 2)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<g id="axes" stroke="black" stroke-width="1">',
        f'<line x1="{sx(x0)}" y1="{sy(y0)}" x2="{sx(x1)}" y2="{sy(y0)}"/>',
        f'<line x1="{sx(x0)}" y1="{sy(y0)}" x2="{sx(x0)}" y2="{sy(y1)}"/>',
        "</g>",
        f'<text x="{sx(x1)}" y="{sy(y0) + 25}" text-anchor="end" font-size="12">x [m]</text>',
        f'<text x="{sx(x0) - 5}" y="{sy(y1) - 5}" font-size="12">y [m]</text>',
        f'<text x="{sx(x0)}" y="{sy(y0) + 14}" font-size="10">{x0:.1f}</text>',
        f'<text x="{sx(x0) - 5}" y="{sy(y0)}" text-anchor="end" font-size="10">{y0:.1f}</text>',
    ]

    def poly(points, style, ident):
        coords = " ".join(f"{sx(x)},{sy(y)}" for x, y in points)
        return f'<polyline id="{escape(ident)}" points="{coords}" fill="none" {style}/>'

    for gid in sorted(truth):
        out.append(poly(truth[gid], 'stroke="gray" stroke-width="1.5" stroke-dasharray="6,4"', f"gt-{gid}"))
    for tid in sorted(tracks):
        color = _PALETTE[tid % len(_PALETTE)]
        out.append(poly(tracks[tid], f'stroke="{color}" stroke-width="2"', f"track-{tid}"))
    out.append("</svg>")
    return "\n".join(out) + "\n"


# --- subcommands -------------------------------------------------------------------------


def _load_config(args: argparse.Namespace) -> io.RunConfig:
    cfg = io.read_run_config(args.config) if getattr(args, "config", None) else io.RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _failure(text: str) -> FailureWindow:
    try:
        sensor, t0, t1 = text.split(":")
        return FailureWindow(sensor, float(t0), float(t1))
    except (ValueError, RcmotError) as exc:
        raise argparse.ArgumentTypeError(f"expected SENSOR:START:END, got {text!r} ({exc})") from None


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    sc = cfg.scenario
    sc = dataclasses.replace(
        sc,
        kind=args.scenario or sc.kind,
        n_objects=args.objects if args.objects is not None else sc.n_objects,
        duration=args.duration if args.duration is not None else sc.duration,
    )
    cfg = dataclasses.replace(cfg, scenario=sc)
    frames, gt = simulate(cfg, args.fail or ())
    io.write_frames(frames, args.frames)
    io.write_ground_truth(gt, args.gt)
    thetas = [d.position[1] for f in frames for d in f.radar]
    n_r = sum(len(f.radar) for f in frames)
    n_c = sum(len(f.camera) for f in frames)
    print(f"frames: {len(frames)}  radar detections: {n_r}  camera detections: {n_c}")
    if thetas:
        print(f"radar azimuth span: {_angle(min(thetas), args.degrees)} .. {_angle(max(thetas), args.degrees)}")
    return EXIT_OK


def cmd_calibrate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    ccfg = dataclasses.replace(cfg.calibration, seed=cfg.seed)
    if args.single:
        ccfg = single_region_config(ccfg)
    frames = io.read_frames(args.frames)
    model = calibrate(frames, ccfg)
    io.write_calibration(model, args.out)
    print(json.dumps(model.stats, indent=2))
    _print_principal_azimuth(model, args.degrees)
    return EXIT_OK


def _print_principal_azimuth(model: CalibrationModel, degrees: bool) -> None:
    from .calibration import project_to_radar
    from .errors import ProjectiveDegeneracyError

    uv = (model.image_width / 2.0, model.image_height - 1.0)
    try:
        r, theta = project_to_radar(model, uv)
    except ProjectiveDegeneracyError:
        return
    print(f"bottom-center pixel maps to r={r:.3f} m, theta={_angle(theta, degrees)}")


def cmd_track(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    mode = args.mode or cfg.mode
    frames = io.read_frames(args.frames)
    model = io.read_calibration(args.calib)
    log = run_tracker(frames, model, cfg.tracker, branches_for(mode))
    io.write_tracks(log, args.out)
    for b, snaps in log.branches.items():
        ids = {s.id for frame in snaps for s in frame}
        print(f"{b}: {len(ids)} confirmed track ids over {len(snaps)} frames")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    threshold = args.dist_threshold if args.dist_threshold is not None else cfg.metrics.dist_threshold
    log = io.read_tracks(args.tracks)
    gt = io.read_ground_truth(args.gt)
    reports = evaluate_log(log, gt, threshold)
    io.atomic_write_text(args.out, json.dumps(report_document(reports), indent=2, allow_nan=False) + "\n")
    print(report_table(reports))
    return EXIT_OK


def cmd_plot(args: argparse.Namespace) -> int:
    log = io.read_tracks(args.tracks)
    gt = io.read_ground_truth(args.gt)
    snaps = log.branches.get(args.branch, [] if not log.branches else None)
    if snaps is None:
        raise UsageError(f"track log has no {args.branch!r} branch (has: {', '.join(log.branches)})")
    tracks: dict[int, list[tuple[float, float]]] = {}
    for frame in snaps:
        for s in frame:
            tracks.setdefault(s.id, []).append((s.x, s.y))
    truth: dict[int, list[tuple[float, float]]] = {}
    for g in gt:
        for o in g.objects:
            truth.setdefault(o.id, []).append((o.x, o.y))
    io.atomic_write_text(args.out, trajectory_svg(tracks, truth))
    if args.csv:
        stats: list[dict[str, Any]] = []
        if snaps:
            clear_mot(gt, snaps, log.times, args.dist_threshold, frame_stats=stats)
        lines = ["t,gt,matches,fp,fn,idsw,mean_error"]
        for s in stats:
            err = "" if s["mean_error"] is None else repr(s["mean_error"])
            lines.append(f"{s['t']!r},{s['gt']},{s['matches']},{s['fp']},{s['fn']},{s['idsw']},{err}")
        io.atomic_write_text(args.csv, "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    if args.mode:
        cfg = dataclasses.replace(cfg, mode=args.mode)
    seeds = [cfg.seed + k for k in range(args.seeds)]
    per_seed = []
    for s in seeds:  # sequential, so results merge in seed order
        reports = run_pipeline(dataclasses.replace(cfg, seed=s), args.fail or ())
        per_seed.append({"seed": s, **report_document(reports)})
    summary: dict[str, dict[str, Any]] = {}
    for b in branches_for(cfg.mode):
        summary[b] = {}
        for key in ("mota", "motp", "fnr", "fpr", "idswr"):
            vals = [r["branches"][b][key] for r in per_seed if r["branches"][b][key] is not None]
            if vals:
                m, hw = mean_interval(vals)
                summary[b][key] = {"mean": m, "ci95_half_width": hw, "n": len(vals)}
    print(f"{'branch':<8} {'metric':<6} {'mean':>9} {'+/-95%':>9}")
    for b, metrics in summary.items():
        for key, v in metrics.items():
            print(f"{b:<8} {key:<6} {_fmt(v['mean']):>9} {_fmt(v['ci95_half_width']):>9}")
    if args.out:
        doc = {"seeds": seeds, "summary": summary, "runs": per_seed}
        io.atomic_write_text(args.out, json.dumps(doc, indent=2, allow_nan=False) + "\n")
    return EXIT_OK


# --- parser -----------------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # route usage errors through run_cli's exit-code handling
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rcmot", description="Radar-camera fusion multi-object tracking toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed=True):
        sp.add_argument("--config", help="run configuration JSON (unknown keys rejected)")
        if seed:
            sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--degrees", action="store_true", help="display angles in degrees (files stay in radians)")

    sp = sub.add_parser("simulate", help="synthesize a scene: frame log and ground truth")
    common(sp)
    sp.add_argument("--scenario", choices=("wandering", "converge"))
    sp.add_argument("--objects", type=_positive_int)
    sp.add_argument("--duration", type=float)
    sp.add_argument("--fail", type=_failure, action="append", metavar="SENSOR:START:END",
                    help="sensor blackout window, repeatable")
    sp.add_argument("--frames", default="frames.jsonl")
    sp.add_argument("--gt", default="gt.jsonl")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("calibrate", help="estimate image-to-radar homographies from a frame log")
    common(sp)
    sp.add_argument("frames")
    sp.add_argument("--out", default="calib.json")
    sp.add_argument("--single", action="store_true", help="fit one homography for the whole image")
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("track", help="run the radar, camera and/or fusion trackers")
    common(sp)
    sp.add_argument("frames")
    sp.add_argument("--calib", required=True)
    sp.add_argument("--mode", choices=(*BRANCHES, "all"))
    sp.add_argument("--out", default="tracks.jsonl")
    sp.set_defaults(func=cmd_track)

    sp = sub.add_parser("evaluate", help="CLEAR-MOT scores of a track log against ground truth")
    common(sp)
    sp.add_argument("tracks")
    sp.add_argument("--gt", required=True)
    sp.add_argument("--out", default="report.json")
    sp.add_argument("--dist-threshold", type=float)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("plot", help="trajectory SVG and optional per-frame error CSV")
    common(sp, seed=False)
    sp.add_argument("tracks")
    sp.add_argument("--gt", required=True)
    sp.add_argument("--branch", choices=BRANCHES, default="fusion")
    sp.add_argument("--out", default="trajectories.svg")
    sp.add_argument("--csv")
    sp.add_argument("--dist-threshold", type=float, default=3.0)
    sp.set_defaults(func=cmd_plot)

    sp = sub.add_parser("bench", help="repeat the full pipeline over seeds; mean and 95%% t-interval")
    common(sp)
    sp.add_argument("--seeds", type=_positive_int, default=5)
    sp.add_argument("--mode", choices=(*BRANCHES, "all"))
    sp.add_argument("--fail", type=_failure, action="append", metavar="SENSOR:START:END")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_bench)
    return p


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"rcmot: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (RcmotError, OSError, ValueError) as exc:
        print(f"rcmot: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
