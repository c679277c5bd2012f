"""Command-line front end: ``droplens <subcommand> ...``."""

import argparse
import io
import json
import math
import sys
from pathlib import Path

from PIL import Image
from PIL.PngImagePlugin import PngInfo

from . import __version__, efficacy, imageproc, photometry, physics, synth, tracking
from .errors import DropletError, InvalidField, SpecViolation, StrideExceedsStack, exit_code_table
from .imageproc import DetectionConfig, round_half_up
from .ingest import load_stack, save_stack
from .output import (
    bar_chart_svg,
    csv_text,
    fmt,
    json_text,
    line_plot_svg,
    montage_image,
    overlay_image,
    write_bytes_atomic,
    write_csv,
    write_json,
    write_text_atomic,
)

DEFAULT_INTERVAL_MS = 38.0
DEFAULT_THRESHOLD = "20"


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _non_negative_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _positive_float(text):
    value = float(text)
    if not (math.isfinite(value) and value > 0):
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _fraction(low_open, high):
    def parse(text):
        value = float(text)
        if not (value > 0 if low_open else value >= 0) or not value < high:
            bracket = "(" if low_open else "["
            raise argparse.ArgumentTypeError(f"must lie in {bracket}0, {high}), got {text}")
        return value

    return parse


def _threshold(text):
    if text == "otsu":
        return text
    try:
        level = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("threshold must be 'otsu' or an integer 0-255") from None
    if not 0 <= level <= 255:
        raise argparse.ArgumentTypeError("threshold level must lie in [0, 255]")
    return level


def _illumination(text):
    if text == "uniform":
        return synth.Illumination()
    kind, _, gains = text.partition(":")
    if kind != "gradient" or not gains:
        raise argparse.ArgumentTypeError("illumination must be 'uniform' or 'gradient:TOP,BOTTOM'")
    try:
        top, bottom = (float(g) for g in gains.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("gradient needs two gains, e.g. gradient:1,0.25") from None
    return synth.Illumination.linear_gradient(top, bottom)


def _global_flags(suppress):
    parser = argparse.ArgumentParser(add_help=False)
    default = (lambda value: argparse.SUPPRESS) if suppress else (lambda value: value)
    parser.add_argument("--out", default=default(None), metavar="DIR",
                        help="output directory (default: current directory)")
    parser.add_argument("--threads", type=_positive_int, default=default(1), metavar="N",
                        help="worker threads; never changes results (default: 1)")
    parser.add_argument("--seed", type=int, default=default(0), metavar="N",
                        help="random seed for synthetic scenes (default: 0)")
    return parser


def _add_series_args(parser):
    parser.add_argument("--decay-fraction", type=_fraction(True, 1.0),
                        default=photometry.DEFAULT_DECAY_FRACTION,
                        help="dissipation cut-off above baseline, fraction of peak excess (default: 0.1)")
    parser.add_argument("--baseline-frames", type=_positive_int,
                        default=photometry.DEFAULT_BASELINE_FRAMES,
                        help="leading frames averaged into the baseline (default: 5)")


def _add_detection_args(parser):
    parser.add_argument("--threshold", type=_threshold, default=_threshold(DEFAULT_THRESHOLD),
                        help="'otsu' or a fixed level; pixels strictly above it are foreground "
                             f"(default: {DEFAULT_THRESHOLD})")
    parser.add_argument("--min-area", type=_positive_int, default=imageproc.DEFAULT_MIN_AREA,
                        help="smallest component kept, in pixels (default: 3)")
    parser.add_argument("--connectivity", type=int, choices=(4, 8),
                        default=imageproc.DEFAULT_CONNECTIVITY)
    parser.add_argument("--bridge-px", type=_non_negative_int, default=0,
                        help="merge components separated by up to 2*N background pixels (default: 0)")
    parser.add_argument("--flat-field", type=_non_negative_int, default=0, metavar="K",
                        help="flat-field correct using the first K (droplet-free) frames; 0 disables")
    parser.add_argument("--gate-px", type=_positive_float, default=tracking.DEFAULT_GATE_PX,
                        help="largest centroid jump linked between frames (default: 25)")
    parser.add_argument("--max-gap", type=_non_negative_int, default=tracking.DEFAULT_MAX_GAP_FRAMES,
                        help="missed frames bridged within one track (default: 2)")
    parser.add_argument("--margin-px", type=float, default=tracking.DEFAULT_MARGIN_PX,
                        help="distance from an edge that counts as leaving the frame (default: 3)")


def build_parser():
    codes = "\n".join(f"  {code:<5d}{name}" for code, name in exit_code_table())
    epilog = (
        "exit codes:\n  0    success\n  1    unexpected droplens error\n"
        "  2    invalid command-line usage\n" + codes
    )
    parser = argparse.ArgumentParser(
        prog="droplens",
        description="Analyse slow-motion frame stacks of fluorescent droplet recordings.",
        epilog=epilog,
        formatter_class=argparse.RawDescriptionHelpFormatter,
        parents=[_global_flags(suppress=False)],
    )
    parser.add_argument("--version", action="version", version=f"droplens {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")
    common = _global_flags(suppress=True)

    p = sub.add_parser("series", parents=[common],
                       help="brightness time series, peak and dissipation metrics")
    p.add_argument("stack_dir")
    p.add_argument("--region", choices=photometry.REGIONS, default="full")
    _add_series_args(p)

    p = sub.add_parser("montage", parents=[common], help="grid of contrast-stretched frames")
    p.add_argument("stack_dir")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--stride", type=_positive_int, help="frames between panels")
    group.add_argument("--interval-ms", type=_positive_float,
                       help=f"milliseconds between panels (default: {DEFAULT_INTERVAL_MS:g})")
    p.add_argument("--columns", type=_positive_int, default=4)
    p.add_argument("--saturation-fraction", type=_fraction(False, 0.5),
                   default=imageproc.DEFAULT_SATURATION_FRACTION)

    p = sub.add_parser("track", parents=[common],
                       help="detect, link and measure falling droplets")
    p.add_argument("stack_dir")
    _add_detection_args(p)

    p = sub.add_parser("masks", parents=[common], help="compare mask efficacy across trials")
    p.add_argument("trial_dirs", nargs="+")
    p.add_argument("--control-label", default=efficacy.CONTROL_LABEL)
    p.add_argument("--no-efficiency", action="store_true",
                   help="skip blocking efficiency (no control group needed)")
    p.add_argument("--expected-order", default=None,
                   help="comma-separated labels, best first; report whether the ranking agrees")
    p.add_argument("--radii", action="store_true",
                   help="also track droplets and list per-mask radius estimates")
    _add_series_args(p)
    _add_detection_args(p)

    p = sub.add_parser("physics", parents=[common], help="Stokes sedimentation time table (CSV)")
    p.add_argument("action", nargs="?", choices=("table",), default="table",
                   help="what to compute; only 'table' exists (default)")
    p.add_argument("--radii", type=float, nargs="*", default=[], metavar="UM")
    p.add_argument("--heights", type=float, nargs="*", default=[1.5e6], metavar="UM")
    p.add_argument("--eta", type=_positive_float, default=physics.WATER_IN_AIR.eta)
    p.add_argument("--rho", type=_positive_float, default=physics.WATER_IN_AIR.rho)
    p.add_argument("--g", type=_positive_float, default=physics.WATER_IN_AIR.g)

    p = sub.add_parser("synth", parents=[common],
                       help="render a synthetic droplet scene as a frame directory")
    p.add_argument("--scene", default=None, help="JSON scene description (overrides the flags below)")
    p.add_argument("--droplets", type=_non_negative_int, default=5)
    p.add_argument("--radius-min", type=_positive_float, default=20.0)
    p.add_argument("--radius-max", type=_positive_float, default=100.0)
    p.add_argument("--width", type=_positive_int, default=640)
    p.add_argument("--height", type=_positive_int, default=480)
    p.add_argument("--frames", type=_positive_int, default=240)
    p.add_argument("--fps", type=_positive_float, default=240.0)
    p.add_argument("--frame-height-um", type=_positive_float, default=40_000.0)
    p.add_argument("--noise", type=_non_negative_int, default=0)
    p.add_argument("--transmission", type=float, default=1.0)
    p.add_argument("--background", type=float, default=0.0)
    p.add_argument("--illumination", type=_illumination, default=synth.Illumination())
    p.add_argument("--trial-id", default="synth")
    p.add_argument("--mask-label", default=None)
    p.add_argument("--loudness-db", type=float, default=None)
    return parser


def _out_dir(args):
    return Path(args.out if args.out is not None else ".")


def _detection_config(args):
    if args.threshold == "otsu":
        method, level = "otsu", None
    else:
        method, level = "fixed", args.threshold
    return DetectionConfig(method, level, args.min_area, args.connectivity,
                           args.flat_field or None, args.bridge_px)


def _track_config(args):
    out = _detection_config(args).to_dict()
    out.update(gate_px=args.gate_px, max_gap_frames=args.max_gap, margin_px=args.margin_px)
    return out


def _run_tracking(stack, args):
    detections, degenerate = imageproc.detect_stack(stack, _detection_config(args), args.threads)
    tracks = tracking.link_detections(detections, args.gate_px, args.max_gap)
    return detections, degenerate, tracking.measure_tracks(tracks, stack, margin_px=args.margin_px)


def cmd_series(args):
    stack = load_stack(args.stack_dir, args.threads)
    series = photometry.brightness_series(stack, args.region, args.baseline_frames)
    metrics = photometry.series_metrics(series, args.decay_fraction)
    config = {
        "trial_id": stack.manifest.trial_id,
        "region": args.region,
        "decay_fraction": args.decay_fraction,
        "baseline_frames": series.baseline_frames,
        "fps": stack.fps,
        "n_frames": stack.n_frames,
    }
    out = _out_dir(args)
    tid = stack.manifest.trial_id
    write_csv(out / "series.csv", ["trial_id", "frame_index", "time_s", "mean_brightness"],
              [(tid, i, t, v) for i, t, v in series.samples()], "series", config)
    write_csv(out / "metrics.csv", METRICS_HEADER, [metrics_row(metrics)], "series", config)
    svg = line_plot_svg(series.times, series.values, f"Mean brightness: {tid} ({args.region})",
                        "time (s)", "mean brightness", marker=(metrics.peak_time_s, metrics.peak_value))
    write_text_atomic(out / "series.svg", _svg_with_config(svg, "series", config))
    return 0


METRICS_HEADER = ["trial_id", "peak_value", "peak_frame", "peak_time_s", "dissipation_s",
                  "baseline", "flags"]


def metrics_row(m):
    return (m.trial_id, m.peak_value, m.peak_frame, m.peak_time_s, m.dissipation_s, m.baseline,
            m.flags)


def _svg_with_config(svg, command, config):
    comment = "<!-- " + " ".join(f"{k}={fmt(config[k])}" for k in sorted(config)) + " -->"
    head, _, rest = svg.partition("\n")
    return f"{head}\n<!-- droplens {__version__} {command} -->\n{comment}\n{rest}"


def _png_with_config(image, command, config):
    info = PngInfo()
    info.add_text("droplens", json.dumps({"command": command, "version": __version__,
                                          "config": config}, sort_keys=True))
    buf = io.BytesIO()
    image.save(buf, format="PNG", pnginfo=info)
    return buf.getvalue()


def montage_stride(fps, stride=None, interval_ms=None):
    if stride is not None:
        return stride
    interval = DEFAULT_INTERVAL_MS if interval_ms is None else interval_ms
    return max(1, int(round_half_up(interval * fps / 1000.0)))


def cmd_montage(args):
    stack = load_stack(args.stack_dir, args.threads)
    stride = montage_stride(stack.fps, args.stride, args.interval_ms)
    if stride > stack.n_frames:
        raise StrideExceedsStack(f"stride {stride} exceeds the {stack.n_frames}-frame stack")
    indices = list(range(0, stack.n_frames, stride))
    canvas, _ = montage_image(stack.frames, indices, args.columns, 2, args.saturation_fraction)
    config = {
        "trial_id": stack.manifest.trial_id,
        "stride_frames": stride,
        "interval_ms": args.interval_ms if args.interval_ms is not None else (
            DEFAULT_INTERVAL_MS if args.stride is None else None),
        "columns": args.columns,
        "saturation_fraction": args.saturation_fraction,
        "panels": indices,
    }
    image = Image.fromarray(canvas, mode="L")
    write_bytes_atomic(_out_dir(args) / "montage.png", _png_with_config(image, "montage", config))
    return 0


DETECTIONS_HEADER = ["trial_id", "frame_index", "x_px", "y_px", "area_px", "mean_intensity",
                     "peak_intensity"]
TRACKS_HEADER = ["trial_id", "track_id", "start_frame", "end_frame", "fall_px", "fall_um",
                 "duration_s", "radius_um_est", "flags"]


def track_rows(trial_id, tracks):
    return [(trial_id, t.track_id, t.start_frame, t.end_frame, t.fall_px, t.fall_um,
             t.duration_s, t.radius_um_est, t.flags) for t in tracks]


def cmd_track(args):
    stack = load_stack(args.stack_dir, args.threads)
    detections, degenerate, tracks = _run_tracking(stack, args)
    tid = stack.manifest.trial_id
    config = _track_config(args)
    config.update(trial_id=tid, fps=stack.fps, um_per_pixel=stack.um_per_pixel,
                  degenerate_frames=degenerate)
    out = _out_dir(args)
    det_rows = [(tid, d.frame_index, d.centroid_x_px, d.centroid_y_px, d.area_px,
                 d.mean_intensity, d.peak_intensity) for frame in detections for d in frame]
    write_csv(out / "detections.csv", DETECTIONS_HEADER, det_rows, "track", config)
    write_csv(out / "tracks.csv", TRACKS_HEADER, track_rows(tid, tracks), "track", config)
    image = overlay_image(stack.frames[-1], tracks)
    write_bytes_atomic(out / "overlay.png", _png_with_config(image, "track", config))
    return 0


REPORT_HEADER = ["mask_label", "n_trials", "mean_peak", "std_peak", "cv", "mean_baseline",
                 "mean_excess", "blocking_efficiency", "rank", "flags"]


def cmd_masks(args):
    trials = []
    for directory in args.trial_dirs:
        stack = load_stack(directory, args.threads)
        if stack.manifest.mask_label is None:
            raise InvalidField(f"{directory}: manifest has no mask_label")
        series = photometry.brightness_series(stack, "full", args.baseline_frames)
        metrics = photometry.series_metrics(series, args.decay_fraction)
        radii = ()
        if args.radii:
            _, _, tracks = _run_tracking(stack, args)
            radii = tuple(t.radius_um_est for t in tracks if t.radius_um_est is not None)
        trials.append(efficacy.TrialRecord(stack.manifest.trial_id, stack.manifest.mask_label,
                                           metrics, stack.manifest.loudness_db, radii))
    report = efficacy.build_report(trials, args.control_label, not args.no_efficiency)
    config = {
        "control_label": report.control_label,
        "decay_fraction": args.decay_fraction,
        "baseline_frames": args.baseline_frames,
        "n_trials": len(trials),
    }
    if args.radii:
        config.update(_track_config(args))
    verdict = None
    if args.expected_order:
        expected = [s for s in args.expected_order.split(",") if s]
        verdict = efficacy.rank_consistency(report, expected)
        config["expected_order"] = expected
        config["rank_consistent"] = verdict
    rows = []
    for rank, label in enumerate(report.ranking, start=1):
        m = report.masks[label]
        rows.append((label, m.n_trials, m.mean_peak, m.std_peak, m.cv, m.mean_baseline,
                     m.mean_excess, m.blocking_efficiency, rank, m.flags))
    out = _out_dir(args)
    write_csv(out / "report.csv", REPORT_HEADER, rows, "masks", config)
    doc = report.to_dict()
    doc["config"] = config
    doc["trials"] = [
        {"trial_id": t.trial_id, "mask_label": t.mask_label, "loudness_db": t.loudness_db,
         **dict(zip(METRICS_HEADER[1:], metrics_row(t.metrics)[1:]))}
        for t in sorted(trials, key=lambda t: t.trial_id)
    ]
    for entry in doc["trials"]:
        entry["flags"] = list(entry["flags"])
    write_json(out / "report.json", doc)
    labels = list(report.ranking)
    svg = bar_chart_svg(labels, [report.masks[label].mean_peak for label in labels],
                        "Mean peak brightness by mask (lower is better)", "mean peak brightness")
    write_text_atomic(out / "ranking.svg", _svg_with_config(svg, "masks", config))
    if verdict is not None:
        print(f"ranking consistent with expected order: {fmt(verdict)}")
    return 0


def cmd_physics(args):
    model = physics.SedimentationModel(args.eta, args.rho, args.g)
    rows = physics.sedimentation_table(args.radii, args.heights, model)
    config = {"eta": model.eta, "rho": model.rho, "g": model.g, "phi_um_s": model.phi}
    text = csv_text(["radius_um", "height_um", "time_s"], rows, "physics", config)
    sys.stdout.write(text)
    if args.out is not None:
        write_text_atomic(Path(args.out) / "physics.csv", text)
    return 0


def _scene_from_args(args):
    if args.scene is not None:
        try:
            raw = json.loads(Path(args.scene).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise SpecViolation(f"cannot read scene {args.scene}: {exc}") from None
        if not isinstance(raw, dict):
            raise SpecViolation("scene description must be a JSON object")
        raw.setdefault("seed", args.seed)
        return synth.SceneSpec.from_dict(raw)
    if args.radius_max < args.radius_min:
        raise InvalidField("--radius-max must be >= --radius-min")
    return synth.column_scene(
        args.droplets,
        seed=args.seed,
        radius_range=(args.radius_min, args.radius_max),
        width=args.width,
        height=args.height,
        n_frames=args.frames,
        spawn_y_px=min(20.0, args.height - 1.0),
        fps=args.fps,
        frame_height_um=args.frame_height_um,
        noise_amplitude=args.noise,
        transmission_factor=args.transmission,
        background_level=args.background,
        illumination=args.illumination,
        trial_id=args.trial_id,
        mask_label=args.mask_label,
        loudness_db=args.loudness_db,
    )


def cmd_synth(args):
    spec = _scene_from_args(args)
    stack, truth = synth.render_scene(spec, threads=args.threads)
    out = _out_dir(args)
    save_stack(stack, out)
    write_json(out / "truth.json", truth.to_dict())
    write_text_atomic(out / "scene.json", json_text(spec.to_dict()))
    return 0


COMMANDS = {
    "series": cmd_series,
    "montage": cmd_montage,
    "track": cmd_track,
    "masks": cmd_masks,
    "physics": cmd_physics,
    "synth": cmd_synth,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except DropletError as exc:
        print(f"droplens {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
