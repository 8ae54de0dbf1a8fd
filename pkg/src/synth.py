"""
Synthetic drone scenes with known ground truth.

A herd walks on the plane z = 0 while a drone flies over it. Head, tail and
landmark points are projected through the true camera poses into per-frame
pixel tracks. The scene also carries the inputs of every unwrapping method
(keyframe poses, in-plane deltas, a registration chain and a ground point
cloud), each with its own configurable estimation noise.

All randomness comes from one ``numpy.random.default_rng(seed)``; the draws
happen in a fixed order, so a config always yields the same scene.
"""

import copy
import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.ndimage import gaussian_filter1d
from scipy.spatial.transform import Rotation

import config
from errors import ConfigError, EmptyChainError, NotRepresentableError
from geometry import (
    CameraIntrinsics,
    Plane,
    Pose3D,
    Rigid2D,
    UnitQuaternion,
    plane_basis,
    project_points,
    rotation_2d,
)
from schema_validator import get_validator
from tracks import ImageTrackSet, WorldTrackSet, write_tracks
from unwrap_registration import DEFAULT_Q, AxisConvention, TransformChain, estimate_chain_from_landmarks, write_chain
from unwrap_sfm import (
    GroundModel,
    KeyframePoseSet,
    keyframe_schedule,
    write_deltas,
    write_intrinsics,
    write_points,
    write_poses,
)

logger = logging.getLogger(__name__)

# camera looking straight down with yaw 0: image x = world x, image y = world -y
NADIR = np.diag([1.0, -1.0, -1.0])
NADIR_TOLERANCE = 1e-12
HEIGHT_TOLERANCE = 1e-9

DEFAULT_SCENE = {
    "seed": 0,
    "n_individuals": 44,
    "n_landmarks": 45,
    "n_frames": 6294,
    "fps": config.DEFAULT_FPS,
    "body_length": 2.0,
    "keyframe_stride": config.KEYFRAME_STRIDE,
    "ground_points": 200,
    "landmark_extent": 25.0,
    "intrinsics": {
        "fx": 1000.0, "fy": 1000.0, "cx": 959.5, "cy": 539.5,
        "k1": 0.0, "k2": 0.0, "width": 1920, "height": 1080,
    },
    "drone": {
        "interpolation": "spline",
        "waypoints": [[0.0, 0.0, 80.0], [50.0, 8.0, 80.0], [100.0, -4.0, 80.0], [150.0, 0.0, 80.0]],
        "yaw_deg": [0.0, 20.0, -10.0],
        "pitch_deg": [0.0],
    },
    "herd": {
        "start": [0.0, 0.0],
        "spread": 15.0,
        "heading_deg": 0.0,
        "speed": 1.5,
        "waves": 4,
        "heading_sigma_deg": 20.0,
        "smoothing_frames": 60.0,
    },
    "noise": {
        "pixel_sigma": 0.0,
        "pose_rotation_sigma_deg": 0.0,
        "pose_translation_sigma": 0.0,
        "registration_sigma_deg": 0.0,
        "registration_translation_sigma": 0.0,
    },
}


def _merge(base: dict, overrides: dict) -> dict:
    merged = copy.deepcopy(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def scene_config(overrides: Optional[dict] = None, **top_level) -> dict:
    """DEFAULT_SCENE with nested ``overrides`` and top-level keyword overrides applied."""
    return _merge(_merge(DEFAULT_SCENE, overrides or {}), top_level)


def load_scene_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return scene_config(json.load(f))


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    config: dict
    intrinsics: CameraIntrinsics
    poses: Tuple[Pose3D, ...]
    estimated_poses: Tuple[Pose3D, ...]
    truth_animals: WorldTrackSet
    truth_landmarks: WorldTrackSet
    image_animals: ImageTrackSet
    image_landmarks: ImageTrackSet
    animal_visible: np.ndarray
    landmark_visible: np.ndarray
    ground_points: np.ndarray
    chain: Optional[TransformChain] = None
    deltas: Dict[int, float] = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return int(self.config["seed"])

    @property
    def n_frames(self) -> int:
        return int(self.config["n_frames"])

    @property
    def fps(self) -> float:
        return float(self.config["fps"])

    @property
    def body_length(self) -> float:
        return float(self.config["body_length"])

    @property
    def keyframe_stride(self) -> int:
        return int(self.config["keyframe_stride"])

    @property
    def plane(self) -> Plane:
        return Plane((0.0, 0.0, 1.0), 0.0)

    def ground_model(self) -> GroundModel:
        """The exact plane with a chart whose coordinates are world (x, y)."""
        return GroundModel(self.ground_points, self.plane, plane_basis(self.plane, (0.0, 0.0, 0.0)))

    def pose_dict(self, estimated: bool = False) -> Dict[int, Pose3D]:
        return dict(enumerate(self.estimated_poses if estimated else self.poses))

    def visible_truth_animals(self) -> WorldTrackSet:
        return self.truth_animals.select(self.animal_visible)

    def visible_truth_landmarks(self) -> WorldTrackSet:
        return self.truth_landmarks.select(self.landmark_visible)

    def extent(self) -> float:
        """Largest coordinate span of the ground truth, used to scale tolerances."""
        xyz = np.concatenate([self.truth_animals.xyz, self.truth_landmarks.xyz, self.ground_points])
        return float(np.max(xyz.max(axis=0) - xyz.min(axis=0))) if len(xyz) else 1.0


# ---------------------------------------------------------------------------
# Flight and herd models
# ---------------------------------------------------------------------------

def _profile(values, n_frames: int) -> np.ndarray:
    """Piecewise-linear profile through evenly spaced control values."""
    values = np.asarray(values, dtype=float)
    if len(values) == 1 or n_frames == 1:
        return np.full(n_frames, values[0])
    knots = np.linspace(0.0, n_frames - 1, len(values))
    return np.interp(np.arange(n_frames), knots, values)


def flight_path(drone: dict, n_frames: int) -> np.ndarray:
    """Camera centre per frame from the waypoint list."""
    waypoints = np.asarray(drone["waypoints"], dtype=float)
    if len(waypoints) == 1 or n_frames == 1:
        return np.repeat(waypoints[:1], n_frames, axis=0)
    knots = np.linspace(0.0, n_frames - 1, len(waypoints))
    frames = np.arange(n_frames, dtype=float)
    if drone.get("interpolation", "spline") == "linear":
        return np.stack([np.interp(frames, knots, waypoints[:, k]) for k in range(3)], axis=1)
    return CubicSpline(knots, waypoints, axis=0, bc_type="natural")(frames)


def camera_rotations(yaw: np.ndarray, pitch: np.ndarray) -> np.ndarray:
    """Camera-to-world matrices Rz(yaw) · Rx(pitch) · NADIR, stacked."""
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    n = len(yaw)
    rz = np.zeros((n, 3, 3))
    rz[:, 0, 0], rz[:, 0, 1], rz[:, 1, 0], rz[:, 1, 1], rz[:, 2, 2] = cy, -sy, sy, cy, 1.0
    rx = np.zeros((n, 3, 3))
    rx[:, 0, 0], rx[:, 1, 1], rx[:, 1, 2], rx[:, 2, 1], rx[:, 2, 2] = 1.0, cp, -sp, sp, cp
    return rz @ rx @ NADIR


def herd_paths(herd: dict, n_individuals: int, n_frames: int, fps: float, rng) -> Tuple[np.ndarray, np.ndarray]:
    """(centres, headings) with shapes (n_individuals, n_frames, 2) and (n_individuals, n_frames).

    Each individual follows its own smoothed random heading walk; all share
    the wave speed envelope, which rises and falls ``waves`` times.
    """
    start = np.asarray(herd.get("start", [0.0, 0.0]), dtype=float)
    spread = float(herd.get("spread", 0.0))
    radius = spread * np.sqrt(rng.uniform(0.0, 1.0, n_individuals))
    angle = rng.uniform(0.0, 2.0 * math.pi, n_individuals)
    origins = start + np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)

    sigma = math.radians(float(herd.get("heading_sigma_deg", 0.0)))
    walk = rng.normal(0.0, 1.0, (n_individuals, n_frames))
    smoothing = float(herd.get("smoothing_frames", 0.0))
    if smoothing > 0:
        walk = gaussian_filter1d(walk, smoothing, axis=1, mode="nearest")
    spread_of_walk = walk.std() if walk.size else 0.0
    walk = walk * (sigma / spread_of_walk) if spread_of_walk > 0 else np.zeros_like(walk)
    headings = math.radians(float(herd.get("heading_deg", 0.0))) + walk

    waves = int(herd.get("waves", 0))
    t = np.arange(n_frames) / max(n_frames - 1, 1)
    envelope = 0.5 * (1.0 - np.cos(2.0 * math.pi * waves * t)) if waves > 0 else np.ones(n_frames)
    step = float(herd.get("speed", 0.0)) * envelope / fps
    velocity = np.stack([np.cos(headings), np.sin(headings)], axis=-1) * step[None, :, None]
    displacement = np.concatenate([np.zeros((n_individuals, 1, 2)), np.cumsum(velocity[:, 1:], axis=1)], axis=1)
    return origins[:, None, :] + displacement, headings


# ---------------------------------------------------------------------------
# Scene generation
# ---------------------------------------------------------------------------

def _truth_set(fps, n_frames, frames, ids, keypoints, xy) -> WorldTrackSet:
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    xyz = np.concatenate([xy, np.zeros((len(xy), 1))], axis=1)
    return WorldTrackSet(fps, n_frames, frames, ids, keypoints, xy, np.ones(len(xy)), xyz)


def _observe(truth: WorldTrackSet, intr, rotations, positions, pixel_sigma, rng) -> Tuple[ImageTrackSet, np.ndarray]:
    pixels, depth = project_points(intr, rotations[truth.frame], positions[truth.frame], truth.xyz)
    if pixel_sigma > 0:
        pixels = pixels + rng.normal(0.0, pixel_sigma, pixels.shape)
    with np.errstate(invalid="ignore"):
        visible = (depth > 0) & intr.in_bounds(pixels) & np.all(np.isfinite(pixels), axis=1)
    image = ImageTrackSet(
        truth.fps, truth.n_frames, truth.frame[visible], truth.individual[visible],
        truth.keypoint[visible], pixels[visible], truth.confidence[visible],
    )
    return image, visible


def _jitter(poses: List[Pose3D], rotation_sigma: float, translation_sigma: float, rng) -> List[Pose3D]:
    if rotation_sigma <= 0 and translation_sigma <= 0:
        return list(poses)
    rotvecs = rng.normal(0.0, rotation_sigma, (len(poses), 3))
    offsets = rng.normal(0.0, translation_sigma, (len(poses), 3))
    jitter = Rotation.from_rotvec(rotvecs).as_matrix()
    return [
        Pose3D(UnitQuaternion.from_matrix(pose.matrix @ jitter[i]), tuple(np.asarray(pose.position) + offsets[i]))
        for i, pose in enumerate(poses)
    ]


def generate_scene(settings: dict) -> SyntheticScene:
    cfg = _merge(DEFAULT_SCENE, settings)
    get_validator().require("scene_config", cfg)
    rng = np.random.default_rng(int(cfg["seed"]))
    n_frames, fps = int(cfg["n_frames"]), float(cfg["fps"])
    intr = CameraIntrinsics(**{k: cfg["intrinsics"][k] for k in ("fx", "fy", "cx", "cy", "width", "height")},
                            k1=cfg["intrinsics"].get("k1", 0.0), k2=cfg["intrinsics"].get("k2", 0.0))
    noise = cfg["noise"]

    positions = flight_path(cfg["drone"], n_frames)
    if np.any(positions[:, 2] <= 0):
        frame = int(np.argmax(positions[:, 2] <= 0))
        raise ConfigError(f"drone path reaches the ground plane at frame {frame} (z={positions[frame, 2]:.6g})")
    yaw = np.radians(_profile(cfg["drone"].get("yaw_deg", [0.0]), n_frames))
    pitch = np.radians(_profile(cfg["drone"].get("pitch_deg", [0.0]), n_frames))
    poses = [
        Pose3D(UnitQuaternion.from_matrix(r), tuple(c))
        for r, c in zip(camera_rotations(yaw, pitch), positions)
    ]
    rotations = np.array([p.matrix for p in poses])

    # herd
    n_ind, half = int(cfg["n_individuals"]), 0.5 * float(cfg["body_length"])
    centres, headings = herd_paths(cfg["herd"], n_ind, n_frames, fps, rng)
    forward = np.stack([np.cos(headings), np.sin(headings)], axis=-1) * half
    ids = np.repeat([f"ind{i + 1:02d}" for i in range(n_ind)], n_frames)
    frames = np.tile(np.arange(n_frames), n_ind)
    truth_animals = _truth_set(
        fps, n_frames,
        np.concatenate([frames, frames]), np.concatenate([ids, ids]),
        np.repeat(["head", "tail"], len(frames)),
        np.concatenate([(centres + forward).reshape(-1, 2), (centres - forward).reshape(-1, 2)]),
    )

    # static landmarks, scattered around the ground track of the drone
    n_lm, extent = int(cfg["n_landmarks"]), float(cfg["landmark_extent"])
    anchor = positions[rng.integers(0, n_frames, n_lm), :2]
    landmark_xy = anchor + rng.uniform(-extent, extent, (n_lm, 2))
    lm_ids = np.repeat([f"lm{i + 1:02d}" for i in range(n_lm)], n_frames)
    truth_landmarks = _truth_set(
        fps, n_frames, np.tile(np.arange(n_frames), n_lm), lm_ids,
        np.full(n_lm * n_frames, "point"), np.repeat(landmark_xy, n_frames, axis=0),
    )

    low, high = positions[:, :2].min(axis=0) - extent, positions[:, :2].max(axis=0) + extent
    n_ground = int(cfg["ground_points"])
    ground_points = np.concatenate([rng.uniform(low, high, (n_ground, 2)), np.zeros((n_ground, 1))], axis=1)

    estimated = _jitter(poses, math.radians(noise["pose_rotation_sigma_deg"]), noise["pose_translation_sigma"], rng)

    image_animals, animal_visible = _observe(truth_animals, intr, rotations, positions, noise["pixel_sigma"], rng)
    image_landmarks, landmark_visible = _observe(truth_landmarks, intr, rotations, positions, noise["pixel_sigma"], rng)

    scene_obj = SyntheticScene(
        cfg, intr, tuple(poses), tuple(estimated),
        truth_animals, truth_landmarks, image_animals, image_landmarks,
        animal_visible, landmark_visible, ground_points,
    )

    keyframes = keyframe_schedule(n_frames, int(cfg["keyframe_stride"]))
    deltas = inplane_deltas(scene_obj, keyframes, math.radians(noise["registration_sigma_deg"]), rng)
    try:
        chain = exact_chain(scene_obj)
    except NotRepresentableError as e:
        logger.info(f"No exact registration chain ({e}); estimating it from the landmark tracks")
        try:
            chain = estimate_chain_from_landmarks(image_landmarks)
        except EmptyChainError:
            chain = None
    if chain is not None:
        chain = perturb_chain(chain, math.radians(noise["registration_sigma_deg"]),
                              noise["registration_translation_sigma"], rng)

    logger.info(
        f"Generated scene: {n_frames} frames, {n_ind} individuals, {n_lm} landmarks, "
        f"{len(image_animals)} animal and {len(image_landmarks)} landmark observations"
    )
    return replace(scene_obj, chain=chain, deltas=deltas)


# ---------------------------------------------------------------------------
# Derived method inputs
# ---------------------------------------------------------------------------

def keyframe_subsample(scene: SyntheticScene, stride: Optional[int] = None) -> KeyframePoseSet:
    """Estimated poses at frames {0, stride, 2*stride, ...} plus the last frame."""
    stride = scene.keyframe_stride if stride is None else int(stride)
    frames = keyframe_schedule(scene.n_frames, stride)
    return KeyframePoseSet({f: scene.estimated_poses[f] for f in frames}, scene.intrinsics, stride)


def exact_chain(scene: SyntheticScene, q: AxisConvention = DEFAULT_Q) -> TransformChain:
    """Frame-to-previous-frame image transforms derived from the true poses.

    Only a nadir camera at constant height with square pixels and no lens
    distortion moves the image rigidly; anything else raises
    NotRepresentableError.
    """
    intr = scene.intrinsics
    if intr.has_distortion:
        raise NotRepresentableError(0, "lens distortion")
    if intr.fx != intr.fy:
        raise NotRepresentableError(0, "non-square pixels")
    rotations = np.array([p.matrix for p in scene.poses])
    positions = np.array([p.position for p in scene.poses])
    tilted = np.flatnonzero(np.abs(rotations[:, 2, 2] + 1.0) > NADIR_TOLERANCE)
    if len(tilted):
        raise NotRepresentableError(int(tilted[0]), "camera is not nadir")
    height = positions[0, 2]
    climbing = np.flatnonzero(np.abs(positions[:, 2] - height) > HEIGHT_TOLERANCE * height)
    if len(climbing):
        raise NotRepresentableError(int(climbing[0]), "camera height changes")

    yaw = np.arctan2(rotations[:, 1, 0], rotations[:, 0, 0])
    principal = np.array([intr.cx, intr.cy])
    scale = intr.fx / height
    flip = np.diag([1.0, -1.0])
    transforms = {}
    for f in range(1, scene.n_frames):
        rotation = rotation_2d(yaw[f - 1] - yaw[f])
        shift = scale * flip @ rotation_2d(-yaw[f - 1]) @ (positions[f, :2] - positions[f - 1, :2])
        image_step = Rigid2D.from_matrix(rotation, principal - rotation @ principal + shift)
        transforms[f] = image_step.conjugate(q.q)
    return TransformChain(transforms)


def inplane_deltas(scene: SyntheticScene, keyframes, sigma: float = 0.0, rng=None) -> Dict[int, float]:
    """Roll about the optical axis of each non-keyframe relative to its preceding keyframe."""
    keyframes = sorted(keyframes)
    deltas = {}
    for k0, k1 in zip(keyframes[:-1], keyframes[1:]):
        base = scene.poses[k0].matrix
        for f in range(k0 + 1, k1):
            relative = base.T @ scene.poses[f].matrix
            deltas[f] = math.atan2(relative[1, 0], relative[0, 0])
    if sigma > 0 and deltas:
        if rng is None:
            raise ValueError("a random generator is required for noisy deltas")
        noise = rng.normal(0.0, sigma, len(deltas))
        deltas = {f: d + n for (f, d), n in zip(sorted(deltas.items()), noise)}
    return deltas


def perturb_chain(chain: TransformChain, sigma_theta: float, sigma_t: float, rng) -> TransformChain:
    """Independent Gaussian noise on every entry's angle and translation."""
    if sigma_theta <= 0 and sigma_t <= 0:
        return chain
    frames = sorted(chain.transforms)
    d_theta = rng.normal(0.0, sigma_theta, len(frames)) if sigma_theta > 0 else np.zeros(len(frames))
    d_t = rng.normal(0.0, sigma_t, (len(frames), 2)) if sigma_t > 0 else np.zeros((len(frames), 2))
    transforms = {}
    for i, f in enumerate(frames):
        entry = chain.transforms[f]
        transforms[f] = Rigid2D(entry.theta + d_theta[i], (entry.t[0] + d_t[i, 0], entry.t[1] + d_t[i, 1]))
    return TransformChain(transforms, chain.gaps)


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

SCENE_FILES = {
    "truth_animals": "truth_tracks.csv",
    "truth_landmarks": "truth_landmarks.csv",
    "image_animals": "image_tracks.csv",
    "image_landmarks": "landmark_tracks.csv",
    "poses": "poses.csv",
    "keyframes": "keyframes.csv",
    "intrinsics": "intrinsics.txt",
    "chain": "chain.csv",
    "deltas": "deltas.csv",
    "points": "points.csv",
    "config": "scene.json",
}


def write_scene(scene: SyntheticScene, out_dir) -> Dict[str, str]:
    """Write every scene file into ``out_dir``; returns {role: path}."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {role: os.path.join(out_dir, name) for role, name in SCENE_FILES.items()}

    write_tracks(scene.truth_animals, paths["truth_animals"])
    write_tracks(scene.truth_landmarks, paths["truth_landmarks"])
    write_tracks(scene.image_animals, paths["image_animals"])
    write_tracks(scene.image_landmarks, paths["image_landmarks"])
    write_poses(scene.pose_dict(), paths["poses"])
    write_poses(keyframe_subsample(scene).poses, paths["keyframes"])
    write_intrinsics(scene.intrinsics, paths["intrinsics"])
    write_deltas(scene.deltas, paths["deltas"])
    write_points(scene.ground_points, paths["points"])
    if scene.chain is not None:
        write_chain(scene.chain, paths["chain"])
    else:
        logger.warning("Scene has no registration chain; chain.csv not written")
        del paths["chain"]
    with open(paths["config"], "w", encoding="utf-8") as f:
        json.dump(scene.config, f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info(f"Wrote synthetic scene to {out_dir}")
    return paths
