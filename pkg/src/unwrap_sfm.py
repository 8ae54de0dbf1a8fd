"""
Pose-based unwrapping.

Keyframe camera poses (from an SfM reconstruction or the native pose CSV) are
densified to every frame, each tracked pixel is cast as a viewing ray, the ray
is intersected with the best-fit ground plane, and the 3D hit is charted into
2D plane coordinates.

SfM export adapter: shots store an axis-angle rotation R and translation t of
the camera-from-world map x_cam = R x_world + t, with camera axes +x right,
+y down, +z forward (the same camera convention used here). The camera
centre is -R^T t and the camera-to-world rotation is R^T.
"""

import bisect
import csv
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
from dotenv import dotenv_values
from scipy.spatial.transform import Rotation

import config
from errors import (
    ExtrapolationError,
    GapError,
    IntegrityError,
    NamingError,
    SchemaError,
    TrackParseError,
)
from geometry import (
    RAY_BEHIND,
    RAY_PARALLEL,
    CameraIntrinsics,
    Plane,
    PlaneBasis,
    Pose3D,
    UnitQuaternion,
    fit_plane,
    intersect_rays_with_plane,
    interpolate_pose,
    pixels_to_rays,
    plane_basis,
    project_to_plane_2d,
)
from parallel import map_chunks
from schema_validator import get_validator
from tracks import GapReport, ImageTrackSet, WorldTrackSet, format_float

logger = logging.getLogger(__name__)

POSE_HEADER = ["frame", "qw", "qx", "qy", "qz", "x", "y", "z"]
POINTS_HEADER = ["x", "y", "z"]
DELTAS_HEADER = ["frame", "delta_rad"]
INTRINSICS_KEYS = ["fx", "fy", "cx", "cy", "k1", "k2", "width", "height"]

ROTATION_MODES = ("slerp", "inplane_delta")


@dataclass(frozen=True)
class KeyframePoseSet:
    poses: Dict[int, Pose3D]
    intrinsics: CameraIntrinsics
    keyframe_stride: int = config.KEYFRAME_STRIDE

    def __post_init__(self):
        if len(self.poses) < 2:
            raise ValueError(f"at least 2 keyframes are required, got {len(self.poses)}")
        object.__setattr__(self, "poses", dict(sorted(self.poses.items())))

    @property
    def frames(self) -> list:
        return list(self.poses)

    def __len__(self) -> int:
        return len(self.poses)


@dataclass(frozen=True, eq=False)
class GroundModel:
    points: np.ndarray
    plane: Plane
    basis: PlaneBasis


@dataclass(frozen=True)
class RotationStrategy:
    """``slerp`` or ``inplane_delta`` (roll about the optical axis relative to the preceding keyframe)."""

    mode: str = "slerp"
    deltas: Dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ROTATION_MODES:
            raise ValueError(f"rotation mode must be one of {ROTATION_MODES}, got {self.mode!r}")


# ---------------------------------------------------------------------------
# SfM reconstruction adapter
# ---------------------------------------------------------------------------

def frame_from_shot_name(name: str) -> int:
    """Frame number = last run of digits in the shot name's stem."""
    digits = re.findall(r"\d+", Path(name).stem)
    if not digits:
        raise NamingError(name)
    return int(digits[-1])


def intrinsics_from_camera(camera: dict) -> CameraIntrinsics:
    width, height = int(camera["width"]), int(camera["height"])
    size = max(width, height)
    projection = camera.get("projection_type", "perspective")
    if projection == "perspective":
        if "focal" not in camera:
            raise SchemaError("perspective camera has no 'focal'")
        fx = fy = camera["focal"] * size
        c_x = c_y = 0.0
    else:
        if "focal_x" not in camera or "focal_y" not in camera:
            raise SchemaError("brown camera needs 'focal_x' and 'focal_y'")
        for name in ("p1", "p2", "k3"):
            if camera.get(name, 0.0) != 0.0:
                raise SchemaError(f"unsupported non-zero distortion coefficient {name}={camera[name]}")
        fx, fy = camera["focal_x"] * size, camera["focal_y"] * size
        c_x, c_y = camera.get("c_x", 0.0), camera.get("c_y", 0.0)
    return CameraIntrinsics(
        fx=fx, fy=fy,
        cx=width / 2.0 - 0.5 + c_x * size,
        cy=height / 2.0 - 0.5 + c_y * size,
        k1=camera.get("k1", 0.0), k2=camera.get("k2", 0.0),
        width=width, height=height,
    )


def parse_reconstruction(path) -> Tuple[KeyframePoseSet, np.ndarray]:
    """Read keyframe poses, single-camera intrinsics and sparse points from an SfM JSON export."""
    with open(path, "r", encoding="utf-8") as f:
        document = json.load(f)
    get_validator().require("reconstruction", document)

    if len(document) > 1:
        logger.warning(f"{path} holds {len(document)} reconstructions; using the one with the most shots")
    reconstruction = max(document, key=lambda r: len(r["shots"]))

    used_cameras = sorted({shot["camera"] for shot in reconstruction["shots"].values()})
    if len(used_cameras) > 1:
        raise SchemaError(f"shots use {len(used_cameras)} cameras; a single shared camera is required")
    if used_cameras and used_cameras[0] not in reconstruction["cameras"]:
        raise SchemaError(f"shots reference unknown camera {used_cameras[0]!r}")
    camera_id = used_cameras[0] if used_cameras else next(iter(reconstruction["cameras"]))
    intrinsics = intrinsics_from_camera(reconstruction["cameras"][camera_id])

    poses = {}
    for name, shot in reconstruction["shots"].items():
        frame = frame_from_shot_name(name)
        if frame in poses:
            raise SchemaError(f"two shots map to frame {frame} (second: {name!r})")
        camera_from_world = Rotation.from_rotvec(shot["rotation"]).as_matrix()
        centre = -camera_from_world.T @ np.asarray(shot["translation"], dtype=float)
        poses[frame] = Pose3D(UnitQuaternion.from_matrix(camera_from_world.T), tuple(centre))
    if len(poses) < 2:
        raise SchemaError(f"reconstruction has {len(poses)} shot(s); at least 2 keyframes are required")

    points = np.array(
        [p["coordinates"] for p in reconstruction.get("points", {}).values()], dtype=float
    ).reshape(-1, 3)
    frames = sorted(poses)
    stride = int(np.median(np.diff(frames)))
    logger.info(f"Parsed {len(poses)} keyframes and {len(points)} points from {path}")
    return KeyframePoseSet(poses, intrinsics, stride), points


# ---------------------------------------------------------------------------
# Ground model
# ---------------------------------------------------------------------------

def build_ground_model(points) -> GroundModel:
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    plane = fit_plane(points)
    basis = plane_basis(plane, points.mean(axis=0))
    residual = np.abs(plane.signed_distance(points))
    logger.info(f"Ground plane normal {np.round(plane.normal, 6).tolist()}, max residual {residual.max():.3g}")
    return GroundModel(points, plane, basis)


# ---------------------------------------------------------------------------
# Pose densification
# ---------------------------------------------------------------------------

def keyframe_schedule(n_frames: int, stride: int) -> list:
    """Frames {0, stride, 2*stride, ...} plus the last frame."""
    if stride < 1:
        raise ValueError(f"keyframe stride must be >= 1, got {stride}")
    if n_frames < 1:
        return []
    return sorted(set(range(0, n_frames, stride)) | {n_frames - 1})


def densify_poses(
    keyframes: KeyframePoseSet,
    strategy: RotationStrategy,
    frame_range: Optional[Iterable[int]] = None,
) -> Dict[int, Pose3D]:
    """Pose for every frame in ``frame_range`` (default: first to last keyframe)."""
    frames = keyframes.frames
    first, last = frames[0], frames[-1]
    if frame_range is None:
        frame_range = range(first, last + 1)

    densified = {}
    missing = []
    for f in frame_range:
        if f < first or f > last:
            raise ExtrapolationError(f, first, last)
        i = bisect.bisect_right(frames, f) - 1
        k0 = frames[i]
        p0 = keyframes.poses[k0]
        if f == k0:
            densified[f] = p0
            continue
        k1 = frames[i + 1]
        p1 = keyframes.poses[k1]
        u = (f - k0) / (k1 - k0)
        if strategy.mode == "slerp":
            densified[f] = interpolate_pose(p0, p1, u)
            continue
        delta = strategy.deltas.get(f)
        if delta is None:
            missing.append(f)
            continue
        position = (1.0 - u) * np.asarray(p0.position) + u * np.asarray(p1.position)
        roll = UnitQuaternion.from_axis_angle((0.0, 0.0, 1.0), delta)
        densified[f] = Pose3D(p0.rotation * roll, tuple(position))
    if missing:
        raise GapError(missing[0], f"no in-plane delta for frame {missing[0]} ({len(missing)} frame(s) missing)")
    return densified


# ---------------------------------------------------------------------------
# Unwrapping
# ---------------------------------------------------------------------------

def unwrap_sfm(
    tracks: ImageTrackSet,
    poses: Dict[int, Pose3D],
    intr: CameraIntrinsics,
    ground: GroundModel,
    threads: int = config.THREADS,
) -> Tuple[WorldTrackSet, GapReport]:
    """Lift every entry to the ground plane and chart it; failures are dropped and reported."""
    report = GapReport()
    has_pose = np.array([int(f) in poses for f in tracks.frame], dtype=bool)
    report.add("missing_pose", tracks.frame[~has_pose])
    kept = tracks.select(has_pose)

    pose_frames = sorted(poses)
    position_of = {f: i for i, f in enumerate(pose_frames)}
    rotations = np.array([poses[f].matrix for f in pose_frames]).reshape(-1, 3, 3)
    centres = np.array([poses[f].position for f in pose_frames], dtype=float).reshape(-1, 3)
    pose_index = np.array([position_of[int(f)] for f in kept.frame], dtype=np.int64)

    def unwrap_chunk(rows: slice):
        idx = pose_index[rows]
        origins, directions = pixels_to_rays(intr, rotations[idx], centres[idx], kept.xy[rows])
        points, status = intersect_rays_with_plane(origins, directions, ground.plane)
        return points, status

    starts = np.flatnonzero(np.diff(kept.frame, prepend=-1)) if len(kept) else None
    parts = map_chunks(unwrap_chunk, len(kept), threads, boundaries=starts)
    points3d = np.concatenate([p for p, _ in parts]) if parts else np.empty((0, 3))
    status = np.concatenate([s for _, s in parts]) if parts else np.empty(0, dtype=np.int8)

    report.add("parallel_ray", kept.frame[status == RAY_PARALLEL])
    report.add("behind_camera", kept.frame[status == RAY_BEHIND])
    ok = status == 0
    points3d = points3d[ok]
    kept = kept.select(ok)
    chart = project_to_plane_2d(points3d, ground.basis).reshape(-1, 2)

    if report.total:
        logger.warning(f"Dropped {report.total} entries during SfM unwrapping: {report.dropped}")
    world = WorldTrackSet(kept.fps, kept.n_frames, kept.frame, kept.individual, kept.keypoint,
                          chart, kept.confidence, points3d)
    return world, report


# ---------------------------------------------------------------------------
# Native file formats
# ---------------------------------------------------------------------------

def _read_csv_rows(path, header):
    path = Path(path)
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        found = next(reader, None)
        if found is None or [h.strip() for h in found] != header:
            raise TrackParseError(path, 1, f"expected header {','.join(header)}")
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise TrackParseError(path, reader.line_num, f"expected {len(header)} fields, got {len(row)}")
            try:
                values = [float(v) for v in row]
            except ValueError as e:
                raise TrackParseError(path, reader.line_num, str(e))
            if not all(math.isfinite(v) for v in values):
                raise TrackParseError(path, reader.line_num, "non-finite value")
            yield reader.line_num, values


def _frame_of(path, line, value) -> int:
    if value != int(value) or value < 0:
        raise TrackParseError(path, line, f"frame must be a non-negative integer, got {value}")
    return int(value)


def read_poses(path) -> Dict[int, Pose3D]:
    poses = {}
    for line, values in _read_csv_rows(path, POSE_HEADER):
        frame = _frame_of(path, line, values[0])
        if frame in poses:
            raise IntegrityError(path, line, f"duplicate pose for frame {frame}")
        poses[frame] = Pose3D(UnitQuaternion(*values[1:5]), tuple(values[5:8]))
    return poses


def write_poses(poses: Dict[int, Pose3D], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(POSE_HEADER)
        for frame in sorted(poses):
            pose = poses[frame]
            q = pose.rotation
            writer.writerow([frame] + [format_float(v) for v in (q.w, q.x, q.y, q.z, *pose.position)])


def read_intrinsics(path) -> CameraIntrinsics:
    values = dotenv_values(path)
    missing = [k for k in INTRINSICS_KEYS if not values.get(k)]
    if missing:
        raise SchemaError(f"intrinsics file {path} lacks {', '.join(missing)}")
    try:
        parsed = {k: float(values[k]) for k in INTRINSICS_KEYS}
    except ValueError as e:
        raise SchemaError(f"intrinsics file {path}: {e}")
    parsed["width"], parsed["height"] = int(parsed["width"]), int(parsed["height"])
    return CameraIntrinsics(**parsed)


def write_intrinsics(intr: CameraIntrinsics, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for key in INTRINSICS_KEYS:
            value = getattr(intr, key)
            f.write(f"{key}={value if isinstance(value, int) else format_float(value)}\n")


def read_points(path) -> np.ndarray:
    return np.array([values for _, values in _read_csv_rows(path, POINTS_HEADER)], dtype=float).reshape(-1, 3)


def write_points(points, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(POINTS_HEADER)
        for p in np.asarray(points, dtype=float).reshape(-1, 3):
            writer.writerow([format_float(v) for v in p])


def read_deltas(path) -> Dict[int, float]:
    deltas = {}
    for line, values in _read_csv_rows(path, DELTAS_HEADER):
        frame = _frame_of(path, line, values[0])
        if frame in deltas:
            raise IntegrityError(path, line, f"duplicate delta for frame {frame}")
        deltas[frame] = values[1]
    return deltas


def write_deltas(deltas: Dict[int, float], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(DELTAS_HEADER)
        for frame in sorted(deltas):
            writer.writerow([frame, format_float(deltas[frame])])


def load_keyframes(poses_path, intrinsics_path=None, stride: int = config.KEYFRAME_STRIDE) -> Tuple[KeyframePoseSet, Optional[np.ndarray]]:
    """Keyframes from an SfM JSON export, or from the pose CSV plus an intrinsics file."""
    if str(poses_path).lower().endswith(".json"):
        return parse_reconstruction(poses_path)
    if intrinsics_path is None:
        raise SchemaError("the pose CSV needs an intrinsics file")
    return KeyframePoseSet(read_poses(poses_path), read_intrinsics(intrinsics_path), stride), None
