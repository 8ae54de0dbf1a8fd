"""
Command-line entry point.

Subcommands:
    unwrap-reg   unwrap image tracks by composing a frame-to-frame transform chain
    unwrap-sfm   unwrap image tracks by lifting them onto the SfM ground plane
    eval-trees   landmark dispersion report for unwrapped landmark tracks
    metrics      herd behaviour metrics for unwrapped animal tracks
    synth        write a synthetic scene with ground truth
    compare      run every unwrapping method and rank them by landmark dispersion

Data goes to files, messages to standard error. Exit codes: 0 success,
1 input or validation error (including usage errors), 2 internal error.
"""

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

import config
from behavior import bin_speed_polarization, body_vectors, clean_tracks, compute_herd_metrics, write_metrics
from errors import ConfigError, SchemaError, UnwrapError
from landmarks import weighted_dispersion, write_report
from synth import SCENE_FILES, generate_scene, load_scene_config, scene_config, write_scene
from tracks import GapReport, filter_landmark_tracks, read_tracks, read_world_tracks, write_tracks
from unwrap_registration import AxisConvention, AXIS_CONVENTIONS, estimate_chain_from_landmarks, load_chain, unwrap_registration
from unwrap_sfm import (
    RotationStrategy,
    build_ground_model,
    densify_poses,
    load_keyframes,
    read_deltas,
    read_points,
    unwrap_sfm,
)

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
SUMMARY_HEADER = ["method", "weighted_mean", "body_length", "tracks"]
METHODS = ("registration", "sfm_slerp", "sfm_inplane")

# flags that never change results and are left out of the manifest
_UNRECORDED = {"handler", "command", "threads", "verbose", "quiet"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def file_digest(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


@dataclass
class RunManifest:
    subcommand: str
    parameters: dict
    inputs: Dict[str, dict] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    version: str = config.VERSION
    seed: Optional[int] = None
    gaps: Dict[str, dict] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)

    def add_input(self, role: str, path) -> None:
        if path is not None:
            self.inputs[role] = {"path": str(path), "sha256": file_digest(path)}

    def add_output(self, path) -> None:
        self.outputs[os.path.basename(path)] = file_digest(path)

    def write(self, out_dir) -> str:
        path = os.path.join(out_dir or ".", MANIFEST_FILE)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)
            f.write("\n")
        return path


def _manifest(args, **extra) -> RunManifest:
    parameters = {k: v for k, v in sorted(vars(args).items()) if k not in _UNRECORDED}
    return RunManifest(args.command, parameters, **extra)


def _output_dir(path) -> str:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    return directory


def _write_gaps(report: GapReport, args) -> str:
    """Write the gap report to --report, or next to --out as <stem>_gaps.json."""
    path = args.report or _gaps_path(args.out)
    _output_dir(path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def _gaps_path(out) -> str:
    return os.path.splitext(out)[0] + "_gaps.json"


# ---------------------------------------------------------------------------
# Shared pipeline steps
# ---------------------------------------------------------------------------

def _load_sfm_inputs(args):
    stride = args.stride if args.stride is not None else config.KEYFRAME_STRIDE
    keyframes, reconstruction_points = load_keyframes(args.poses, args.intrinsics, stride)
    points = read_points(args.points) if args.points else reconstruction_points
    if points is None or len(points) < 3:
        raise SchemaError("a ground point cloud with at least 3 points is required (--points)")
    return keyframes, build_ground_model(points)


def _strategy(rotation: str, deltas_path) -> RotationStrategy:
    if rotation == "inplane":
        if not deltas_path:
            raise ConfigError("--rotation inplane needs --deltas")
        return RotationStrategy("inplane_delta", read_deltas(deltas_path))
    return RotationStrategy("slerp")


def _sfm_unwrap(tracks, keyframes, strategy, ground, threads):
    first, last = keyframes.frames[0], keyframes.frames[-1]
    frames = [int(f) for f in np.unique(tracks.frame) if first <= f <= last]
    poses = densify_poses(keyframes, strategy, frames)
    return unwrap_sfm(tracks, poses, keyframes.intrinsics, ground, threads)


def _reference_body_length(animals_world, args) -> float:
    if args.body_length is not None:
        if not args.body_length > 0:
            raise ConfigError(f"--body-length must be positive, got {args.body_length}")
        return float(args.body_length)
    return clean_tracks(animals_world, args.conf_threshold, args.jump_factor).body_length


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_unwrap_reg(args) -> int:
    q = AxisConvention.named(args.q)
    if not (args.chain or args.landmarks):
        raise ConfigError("unwrap-reg needs --chain or --landmarks")
    tracks = read_tracks(args.tracks)
    if args.chain:
        if args.landmarks:
            logger.warning("Both --chain and --landmarks given; using the chain")
            args.landmarks = None
        chain = load_chain(args.chain)
    else:
        chain = estimate_chain_from_landmarks(read_tracks(args.landmarks), args.min_pairs, q)
    world, report = unwrap_registration(tracks, chain, q, args.threads)

    out_dir = _output_dir(args.out)
    write_tracks(world, args.out)
    gaps_path = _write_gaps(report, args)
    manifest = _manifest(args, gaps={"tracks": report.to_dict()})
    for role in ("tracks", "chain", "landmarks"):
        manifest.add_input(role, getattr(args, role))
    manifest.add_output(args.out)
    manifest.add_output(gaps_path)
    manifest.write(out_dir)
    return 0


def cmd_unwrap_sfm(args) -> int:
    keyframes, ground = _load_sfm_inputs(args)
    strategy = _strategy(args.rotation, args.deltas)
    tracks = read_tracks(args.tracks)
    world, report = _sfm_unwrap(tracks, keyframes, strategy, ground, args.threads)

    out_dir = _output_dir(args.out)
    write_tracks(world, args.out)
    gaps_path = _write_gaps(report, args)
    manifest = _manifest(args, gaps={"tracks": report.to_dict()})
    for role in ("tracks", "poses", "intrinsics", "points", "deltas"):
        manifest.add_input(role, getattr(args, role))
    manifest.add_output(args.out)
    manifest.add_output(gaps_path)
    manifest.write(out_dir)
    return 0


def cmd_eval_trees(args) -> int:
    world = read_world_tracks(args.world)
    if args.landmark_images:
        kept = filter_landmark_tracks(read_tracks(args.landmark_images), args.min_samples, args.max_jump)
        world = world.select(np.isin(world.individual, kept.individuals()))
    if args.body_length is None and not args.animals:
        raise ConfigError("eval-trees needs --body-length or --animals")
    body_length = _reference_body_length(read_world_tracks(args.animals) if args.animals else None, args)
    report = weighted_dispersion(world, body_length)

    out_dir = _output_dir(args.out)
    write_report(report, args.out)
    manifest = _manifest(args)
    for role in ("world", "animals", "landmark_images"):
        manifest.add_input(role, getattr(args, role))
    manifest.add_output(args.out)
    manifest.write(out_dir)
    return 0


def cmd_metrics(args) -> int:
    world = read_world_tracks(args.world)
    fps = args.fps if args.fps is not None else world.fps
    clean = clean_tracks(world, args.conf_threshold, args.jump_factor)
    vecs = body_vectors(clean, args.sigma)
    metrics = compute_herd_metrics(clean, vecs, fps, args.threads)
    bins = bin_speed_polarization(metrics, args.bin)
    paths = write_metrics(metrics, bins, args.out_dir, args.window, args.order)

    removed = dict(clean.removal_counts())
    for removal in vecs.removals:
        removed[removal.reason] = removed.get(removal.reason, 0) + 1
    manifest = _manifest(args, gaps={"removed": dict(sorted(removed.items()))})
    manifest.parameters["body_length"] = clean.body_length
    manifest.add_input("world", args.world)
    for path in paths:
        manifest.add_output(path)
    manifest.write(args.out_dir)
    return 0


def cmd_synth(args) -> int:
    settings = load_scene_config(args.config) if args.config else scene_config()
    if args.seed is not None:
        settings["seed"] = args.seed
    scene = generate_scene(settings)
    paths = write_scene(scene, args.out_dir)

    manifest = _manifest(args, seed=scene.seed)
    manifest.add_input("config", args.config)
    for role in sorted(paths):
        manifest.add_output(paths[role])
        if os.path.exists(paths[role] + ".meta"):
            manifest.add_output(paths[role] + ".meta")
    manifest.write(args.out_dir)
    return 0


def _scene_defaults(args) -> None:
    """Fill unset compare inputs from a synth output directory."""
    if not args.scene_dir:
        return
    defaults = {
        "tracks": "image_animals", "landmarks": "image_landmarks", "chain": "chain",
        "poses": "keyframes", "intrinsics": "intrinsics", "points": "points", "deltas": "deltas",
    }
    for flag, role in defaults.items():
        candidate = os.path.join(args.scene_dir, SCENE_FILES[role])
        if getattr(args, flag) is None and os.path.exists(candidate):
            setattr(args, flag, candidate)
    if args.stride is None:
        scene_file = os.path.join(args.scene_dir, SCENE_FILES["config"])
        if os.path.exists(scene_file):
            with open(scene_file, "r", encoding="utf-8") as f:
                args.stride = json.load(f).get("keyframe_stride")


def cmd_compare(args) -> int:
    _scene_defaults(args)
    for flag in ("tracks", "landmarks", "poses"):
        if getattr(args, flag) is None:
            raise ConfigError(f"compare needs --{flag} (or --scene-dir)")
    if args.stride is None:
        args.stride = config.KEYFRAME_STRIDE

    q = AxisConvention.named(args.q)
    animals = read_tracks(args.tracks)
    landmarks_raw = read_tracks(args.landmarks)
    landmarks = filter_landmark_tracks(landmarks_raw, args.min_samples, args.max_jump)
    keyframes, ground = _load_sfm_inputs(args)

    runs = []
    chain = load_chain(args.chain) if args.chain else estimate_chain_from_landmarks(landmarks_raw, args.min_pairs, q)
    runs.append(("registration", lambda tracks: unwrap_registration(tracks, chain, q, args.threads)))
    runs.append(("sfm_slerp", lambda tracks: _sfm_unwrap(tracks, keyframes, RotationStrategy("slerp"), ground, args.threads)))
    warnings = []
    if args.deltas:
        inplane = RotationStrategy("inplane_delta", read_deltas(args.deltas))
        runs.append(("sfm_inplane", lambda tracks: _sfm_unwrap(tracks, keyframes, inplane, ground, args.threads)))
    else:
        warnings.append("no --deltas given; sfm_inplane skipped")
        logger.warning(warnings[-1])

    os.makedirs(args.out_dir, exist_ok=True)
    summary, gaps, outputs = [], {}, []
    for method, unwrap in runs:
        animals_world, animal_gaps = unwrap(animals)
        landmarks_world, landmark_gaps = unwrap(landmarks)
        body_length = _reference_body_length(animals_world, args)
        report = weighted_dispersion(landmarks_world, body_length)
        report_path = os.path.join(args.out_dir, f"{method}_report.csv")
        write_report(report, report_path)
        outputs.append(report_path)
        gaps[method] = {"animals": animal_gaps.to_dict(), "landmarks": landmark_gaps.to_dict()}
        summary.append({
            "method": method,
            "weighted_mean": report.weighted_mean,
            "body_length": body_length,
            "tracks": len(report.rows),
            "rows": report.to_dict()["rows"],
        })
        logger.info(f"{method}: weighted mean {report.weighted_mean:.6g} BL over {len(report.rows)} landmarks")

    summary_csv = os.path.join(args.out_dir, "summary.csv")
    with open(summary_csv, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SUMMARY_HEADER)
        for entry in summary:
            writer.writerow([entry["method"], format(entry["weighted_mean"], f".{config.FLOAT_DIGITS}g"),
                             format(entry["body_length"], f".{config.FLOAT_DIGITS}g"), entry["tracks"]])
    summary_json = os.path.join(args.out_dir, "summary.json")
    with open(summary_json, "w", encoding="utf-8") as f:
        json.dump({"methods": summary, "gaps": gaps}, f, indent=2, sort_keys=True)
        f.write("\n")
    outputs.extend([summary_csv, summary_json])

    manifest = _manifest(args, gaps=gaps, warnings=warnings)
    for role in ("tracks", "landmarks", "chain", "poses", "intrinsics", "points", "deltas"):
        manifest.add_input(role, getattr(args, role))
    for path in outputs:
        manifest.add_output(path)
    manifest.write(args.out_dir)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _common(parser) -> None:
    parser.add_argument("--threads", type=int, default=config.THREADS, help="worker threads, 0 = all cores")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress (INFO)")
    parser.add_argument("-q", "--quiet", action="store_true", help="log errors only")


def _cleaning_flags(parser) -> None:
    parser.add_argument("--conf-threshold", type=float, default=config.CONFIDENCE_THRESHOLD)
    parser.add_argument("--jump-factor", type=float, default=config.JUMP_FACTOR)


def _landmark_flags(parser) -> None:
    parser.add_argument("--min-samples", type=int, default=config.LANDMARK_MIN_SAMPLES)
    parser.add_argument("--max-jump", type=float, default=config.LANDMARK_MAX_JUMP, help="pixels")


def _sfm_flags(parser, required: bool) -> None:
    parser.add_argument("--poses", required=required, help="SfM reconstruction JSON or keyframe pose CSV")
    parser.add_argument("--intrinsics", help="intrinsics file (with a pose CSV)")
    parser.add_argument("--points", help="ground point cloud CSV (default: the reconstruction's points)")
    parser.add_argument("--deltas", help="in-plane delta CSV")
    parser.add_argument("--stride", type=int, default=None, help="keyframe stride of a pose CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="unwrap", description="Unwrap drone-video animal tracks into ground coordinates.")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("unwrap-reg", help="registration-chain unwrapping")
    p.add_argument("--tracks", required=True)
    p.add_argument("--chain", help="chain CSV (preferred when --landmarks is also given)")
    p.add_argument("--landmarks", help="landmark image tracks to estimate the chain from")
    p.add_argument("--q", choices=sorted(AXIS_CONVENTIONS), default="yflip")
    p.add_argument("--min-pairs", type=int, default=config.MIN_CHAIN_PAIRS)
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="gap report JSON (default: <out stem>_gaps.json)")
    _common(p)
    p.set_defaults(handler=cmd_unwrap_reg)

    p = sub.add_parser("unwrap-sfm", help="SfM ground-plane unwrapping")
    p.add_argument("--tracks", required=True)
    _sfm_flags(p, required=True)
    p.add_argument("--rotation", choices=["slerp", "inplane"], default="slerp")
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="gap report JSON (default: <out stem>_gaps.json)")
    _common(p)
    p.set_defaults(handler=cmd_unwrap_sfm)

    p = sub.add_parser("eval-trees", help="landmark dispersion report")
    p.add_argument("--world", required=True)
    p.add_argument("--body-length", type=float)
    p.add_argument("--animals", help="unwrapped animal tracks to take the median body length from")
    p.add_argument("--landmark-images", help="landmark image tracks for the quality filter")
    _landmark_flags(p)
    _cleaning_flags(p)
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(handler=cmd_eval_trees)

    p = sub.add_parser("metrics", help="herd behaviour metrics")
    p.add_argument("--world", required=True)
    p.add_argument("--fps", type=float)
    _cleaning_flags(p)
    p.add_argument("--sigma", type=float, default=config.BODY_VECTOR_SIGMA)
    p.add_argument("--bin", type=int, default=config.BIN_FRAMES)
    p.add_argument("--window", type=int, default=config.SAVGOL_WINDOW)
    p.add_argument("--order", type=int, default=config.SAVGOL_ORDER)
    p.add_argument("--out-dir", required=True)
    _common(p)
    p.set_defaults(handler=cmd_metrics)

    p = sub.add_parser("synth", help="synthetic scene")
    p.add_argument("--config", help="scene JSON (defaults for anything omitted)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", required=True)
    _common(p)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("compare", help="rank the unwrapping methods by landmark dispersion")
    p.add_argument("--scene-dir", help="synth output directory providing default inputs")
    p.add_argument("--tracks")
    p.add_argument("--landmarks")
    p.add_argument("--chain")
    _sfm_flags(p, required=False)
    p.add_argument("--q", choices=sorted(AXIS_CONVENTIONS), default="yflip")
    p.add_argument("--min-pairs", type=int, default=config.MIN_CHAIN_PAIRS)
    p.add_argument("--body-length", type=float)
    _landmark_flags(p)
    _cleaning_flags(p)
    p.add_argument("--out-dir", required=True)
    _common(p)
    p.set_defaults(handler=cmd_compare)
    return parser


def _configure_logging(args) -> None:
    level = config.LOG_LEVEL
    if args.verbose:
        level = "INFO"
    if args.quiet:
        level = "ERROR"
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, str(level).upper(), logging.WARNING),
        format="%(levelname)s - %(name)s - %(message)s",
        force=True,
    )


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        sys.stderr.write(f"unwrap: error: {e}\n")
        return 1
    except SystemExit as e:
        return int(e.code or 0)

    _configure_logging(args)
    logger.info(f"Running {args.command} with {_manifest(args).parameters}")
    try:
        return args.handler(args)
    except (UnwrapError, OSError, ValueError) as e:
        logger.error(f"{args.command}: {e}")
        return 1
    except Exception as e:
        logger.debug("Internal error", exc_info=True)
        logger.error(f"{args.command}: internal error: {e}")
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
