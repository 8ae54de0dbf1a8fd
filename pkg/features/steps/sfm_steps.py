# features/steps/sfm_steps.py
"""
Step definitions for unwrap_sfm.feature
"""

import copy
import json
import math
import os

import numpy as np
from behave import given, then, when

from step_helpers import assert_close, assert_vector_close, attempt, parse_numbers, small_scene_config, succeeded

from geometry import CameraIntrinsics, Plane, Pose3D, UnitQuaternion, plane_basis, project_to_plane_2d, rotation_x, rotation_z
from landmarks import weighted_dispersion
from synth import NADIR, generate_scene, keyframe_subsample
from unwrap_sfm import (
    GroundModel,
    KeyframePoseSet,
    RotationStrategy,
    build_ground_model,
    densify_poses,
    load_keyframes,
    parse_reconstruction,
    unwrap_sfm,
    write_intrinsics,
    write_poses,
)

DEFAULT_INTRINSICS = CameraIntrinsics(1000.0, 1000.0, 959.5, 539.5, width=1920, height=1080)


def _camera_rotation(yaw_deg, pitch_deg):
    return rotation_z(math.radians(yaw_deg)) @ rotation_x(math.radians(pitch_deg)) @ NADIR


def _pose(position, yaw_deg=0.0, pitch_deg=0.0):
    return Pose3D(UnitQuaternion.from_matrix(_camera_rotation(yaw_deg, pitch_deg)), tuple(position))


# ---------------------------------------------------------------------------
# SfM exports
# ---------------------------------------------------------------------------

def _reconstruction(context, camera):
    context.reconstruction = {"cameras": {"camera_0": camera}, "shots": {}, "points": {}}


@given(u'an SfM reconstruction with a perspective camera of focal {focal:g} and a {w:d}x{h:d} sensor')
def step_perspective_reconstruction(context, focal, w, h):
    _reconstruction(context, {"projection_type": "perspective", "width": w, "height": h, "focal": focal})


@given(u'an SfM reconstruction with a brown camera of focal {focal:g} and principal offset ({c_x:g}, {c_y:g})')
def step_brown_reconstruction(context, focal, c_x, c_y):
    _reconstruction(context, {
        "projection_type": "brown", "width": 1920, "height": 1080,
        "focal_x": focal, "focal_y": focal, "c_x": c_x, "c_y": c_y, "k1": 0.0, "k2": 0.0,
    })


@given(u'an SfM reconstruction with a brown camera of focal {focal:g} and tangential distortion p1 = {p1:g}')
def step_brown_tangential(context, focal, p1):
    _reconstruction(context, {
        "projection_type": "brown", "width": 1920, "height": 1080,
        "focal_x": focal, "focal_y": focal, "p1": p1,
    })


@given(u'the reconstruction shots')
def step_reconstruction_shots(context):
    for row in context.table:
        context.reconstruction["shots"][row['name']] = {
            "rotation": parse_numbers(row['rotation']),
            "translation": parse_numbers(row['translation']),
            "camera": "camera_0",
        }


@given(u'the reconstruction points')
def step_reconstruction_points(context):
    for i, row in enumerate(context.table):
        context.reconstruction["points"][str(i)] = {
            "coordinates": [float(row['x']), float(row['y']), float(row['z'])],
        }


@given(u'the shot "{name}" has no translation')
def step_shot_without_translation(context, name):
    del context.reconstruction["shots"][name]["translation"]


@given(u'shot "{name}" uses a second camera')
def step_second_camera(context, name):
    cameras = context.reconstruction["cameras"]
    cameras["camera_1"] = copy.deepcopy(cameras["camera_0"])
    context.reconstruction["shots"][name]["camera"] = "camera_1"


@when(u'I parse the reconstruction')
def step_parse_reconstruction(context):
    path = os.path.join(context.workdir, "reconstruction.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump([context.reconstruction], f)
    attempt(context, parse_reconstruction, path)
    if context.error is None:
        context.keyframe_set, context.reconstruction_points = context.result


@when(u'I build the ground model from the reconstruction points')
def step_ground_from_reconstruction(context):
    succeeded(context)
    attempt(context, build_ground_model, context.reconstruction_points)


@then(u'the reconstruction has {n:d} keyframes with stride {stride:d} and {points:d} points')
def step_reconstruction_counts(context, n, stride, points):
    succeeded(context)
    keyframes = context.keyframe_set
    if len(keyframes) != n or keyframes.keyframe_stride != stride or len(context.reconstruction_points) != points:
        raise AssertionError(
            f"expected {n} keyframes, stride {stride} and {points} points; got {len(keyframes)}, "
            f"{keyframes.keyframe_stride} and {len(context.reconstruction_points)}"
        )


@then(u'keyframe {frame:d} has its camera centre at ({x:g}, {y:g}, {z:g}) within {tol:g}')
def step_keyframe_centre(context, frame, x, y, z, tol):
    succeeded(context)
    assert_vector_close(context.keyframe_set.poses[frame].position, (x, y, z), tol, f"keyframe {frame} centre")


@then(u'keyframe {frame:d} looks straight down within {tol:g}')
def step_keyframe_nadir(context, frame, tol):
    succeeded(context)
    axis = context.keyframe_set.poses[frame].matrix[:, 2]
    assert_vector_close(axis, (0.0, 0.0, -1.0), tol, "optical axis")


@then(u'the reconstruction intrinsics are fx {fx:g}, fy {fy:g}, cx {cx:g}, cy {cy:g}')
def step_reconstruction_intrinsics(context, fx, fy, cx, cy):
    succeeded(context)
    intr = context.keyframe_set.intrinsics
    for name, expected in (("fx", fx), ("fy", fy), ("cx", cx), ("cy", cy)):
        assert_close(getattr(intr, name), expected, 1e-9, name)


# ---------------------------------------------------------------------------
# Native pose files
# ---------------------------------------------------------------------------

@given(u'a pose file "{name}" for frames {frames}')
def step_pose_file(context, name, frames):
    poses = {int(f): _pose((f, 0.0, 100.0)) for f in parse_numbers(frames)}
    write_poses(poses, os.path.join(context.workdir, name))


@given(u'an intrinsics file "{name}" with focal length {focal:g} and a {w:d}x{h:d} sensor')
def step_intrinsics_file(context, name, focal, w, h):
    intr = CameraIntrinsics(focal, focal, w / 2.0 - 0.5, h / 2.0 - 0.5, width=w, height=h)
    write_intrinsics(intr, os.path.join(context.workdir, name))


@when(u'I load keyframes from "{name}" without intrinsics')
def step_load_keyframes_bare(context, name):
    attempt(context, load_keyframes, os.path.join(context.workdir, name), None, 20)


@when(u'I load keyframes from "{name}" with intrinsics "{intrinsics}"')
def step_load_keyframes(context, name, intrinsics):
    attempt(context, load_keyframes, os.path.join(context.workdir, name), os.path.join(context.workdir, intrinsics), 20)


@then(u'the loaded keyframes cover frames {frames}')
def step_loaded_frames(context, frames):
    keyframes, points = succeeded(context)
    expected = [int(f) for f in parse_numbers(frames)]
    if keyframes.frames != expected or points is not None:
        raise AssertionError(f"expected keyframes {expected} without points, got {keyframes.frames}")


# ---------------------------------------------------------------------------
# Ground model
# ---------------------------------------------------------------------------

@when(u'I build the ground model from the points')
def step_build_ground(context):
    attempt(context, build_ground_model, context.points3d)


@then(u'the ground plane has normal ({nx:g}, {ny:g}, {nz:g}) and offset {d:g} within {tol:g}')
def step_ground_plane(context, nx, ny, nz, d, tol):
    ground = succeeded(context)
    assert_vector_close(ground.plane.normal, (nx, ny, nz), tol, "ground normal")
    assert_close(ground.plane.offset, d, tol, "ground offset")


@then(u'the ground chart axes lie in the plane within {tol:g}')
def step_ground_axes(context, tol):
    ground = succeeded(context)
    n = np.asarray(ground.plane.normal)
    u, v = np.asarray(ground.basis.u_axis), np.asarray(ground.basis.v_axis)
    assert_close(u @ n, 0.0, tol, "u.n")
    assert_close(v @ n, 0.0, tol, "v.n")
    assert_close(u @ v, 0.0, tol, "u.v")
    assert_close(ground.plane.signed_distance(ground.basis.origin), 0.0, tol, "chart origin height")


@then(u'ground chart distances equal 3D distances within {tol:g}')
def step_ground_isometry(context, tol):
    ground = succeeded(context)
    chart = project_to_plane_2d(context.points3d, ground.basis)
    d2 = np.linalg.norm(chart[1:] - chart[0], axis=1)
    d3 = np.linalg.norm(context.points3d[1:] - context.points3d[0], axis=1)
    assert_vector_close(d2, d3, tol, "chart distances")


# ---------------------------------------------------------------------------
# Densification
# ---------------------------------------------------------------------------

@given(u'keyframe poses')
def step_keyframe_poses(context):
    poses = {
        int(row['frame']): _pose((float(row['x']), float(row['y']), float(row['z'])), float(row['yaw']), float(row['pitch']))
        for row in context.table
    }
    frames = sorted(poses)
    context.keyframe_set = KeyframePoseSet(poses, DEFAULT_INTRINSICS, int(min(np.diff(frames))))
    context.deltas = {}


@given(u'in-plane deltas of {deg:g} degree for every frame between keyframes')
@given(u'in-plane deltas of {deg:g} degrees for every frame between keyframes')
def step_uniform_deltas(context, deg):
    frames = context.keyframe_set.frames
    context.deltas = {f: math.radians(deg) for f in range(frames[0], frames[-1] + 1) if f not in frames}


@given(u'the in-plane delta for frame {frame:d} is missing')
def step_missing_delta(context, frame):
    del context.deltas[frame]


def _densify(context, strategy, frame_range=None):
    attempt(context, densify_poses, context.keyframe_set, strategy, frame_range)
    if context.error is None:
        context.dense_poses = context.result


@when(u'I densify the keyframe poses with slerp')
def step_densify_slerp(context):
    _densify(context, RotationStrategy("slerp"))


@when(u'I densify the keyframe poses with in-plane deltas')
def step_densify_inplane(context):
    _densify(context, RotationStrategy("inplane_delta", context.deltas))


@when(u'I densify the keyframe poses with slerp for frames {first:d} to {last:d}')
def step_densify_range(context, first, last):
    _densify(context, RotationStrategy("slerp"), range(first, last + 1))


@then(u'the densified pose at frame {frame:d} is keyframe {keyframe:d}')
def step_dense_is_keyframe(context, frame, keyframe):
    if succeeded(context)[frame] is not context.keyframe_set.poses[keyframe]:
        raise AssertionError(f"frame {frame} is not the keyframe {keyframe} pose")


@then(u'there are {n:d} densified poses')
def step_dense_count(context, n):
    found = len(succeeded(context))
    if found != n:
        raise AssertionError(f"expected {n} densified poses, got {found}")


@then(u'the densified pose at frame {frame:d} is at ({x:g}, {y:g}, {z:g}) with yaw {yaw:g} degrees and pitch {pitch:g} degrees within {tol:g}')
def step_dense_pose(context, frame, x, y, z, yaw, pitch, tol):
    pose = succeeded(context)[frame]
    assert_vector_close(pose.position, (x, y, z), tol, "position")
    assert_vector_close(pose.matrix, _camera_rotation(yaw, pitch), tol, "rotation")


@then(u'the densified pose at frame {frame:d} is at ({x:g}, {y:g}, {z:g}) within {tol:g}')
def step_dense_position(context, frame, x, y, z, tol):
    assert_vector_close(succeeded(context)[frame].position, (x, y, z), tol, "position")


@then(u'the densified pose at frame {frame:d} equals keyframe {keyframe:d} rolled by {deg:g} degrees about the optical axis within {tol:g}')
def step_dense_rolled(context, frame, keyframe, deg, tol):
    pose = succeeded(context)[frame]
    expected = context.keyframe_set.poses[keyframe].matrix @ rotation_z(math.radians(deg))
    assert_vector_close(pose.matrix, expected, tol, "rolled rotation")


# ---------------------------------------------------------------------------
# Unwrapping
# ---------------------------------------------------------------------------

@given(u'the flat ground z = {height:g}')
def step_flat_ground(context, height):
    plane = Plane((0.0, 0.0, 1.0), height)
    context.ground = GroundModel(np.empty((0, 3)), plane, plane_basis(plane, (0.0, 0.0, height)))


@given(u'nadir camera poses for frames 0 to {last:d} at ({x:g}, {y:g}, {z:g})')
def step_nadir_poses(context, last, x, y, z):
    context.dense_poses = {f: _pose((x, y, z)) for f in range(last + 1)}


@given(u'the camera at frame {frame:d} is pitched {deg:g} degrees')
def step_pitched_camera(context, frame, deg):
    context.dense_poses[frame] = _pose(context.dense_poses[frame].position, 0.0, deg)


@given(u'the camera at frame {frame:d} is at ({x:g}, {y:g}, {z:g})')
def step_moved_camera(context, frame, x, y, z):
    context.dense_poses[frame] = Pose3D(context.dense_poses[frame].rotation, (x, y, z))


@given(u'the camera pose for frame {frame:d} is missing')
def step_missing_pose(context, frame):
    del context.dense_poses[frame]


@when(u'I unwrap the tracks through the camera poses')
def step_unwrap_sfm(context):
    attempt(context, unwrap_sfm, context.image_tracks, context.dense_poses, context.intrinsics, context.ground)


@then(u'the unwrapped entry ({frame:d}, "{individual}", "{keypoint}") has the 3D point ({x:g}, {y:g}, {z:g}) within {tol:g}')
def step_unwrapped_3d(context, frame, individual, keypoint, x, y, z, tol):
    world, _ = succeeded(context)
    idx = np.flatnonzero((world.frame == frame) & (world.individual == individual) & (world.keypoint == keypoint))
    if len(idx) != 1:
        raise AssertionError(f"entry ({frame}, {individual}, {keypoint}) is missing")
    assert_vector_close(world.xyz[idx[0]], (x, y, z), tol, "3D point")


@then(u'the gap report counts {n:d} for "{reason}"')
def step_gap_count(context, n, reason):
    _, report = succeeded(context)
    found = report.dropped.get(reason, 0)
    if found != n:
        raise AssertionError(f"expected {n} drops for {reason}, got {report.dropped}")


# ---------------------------------------------------------------------------
# Synthetic scenes
# ---------------------------------------------------------------------------

def _unwrap_scene(context, tracks, poses):
    scene = context.scene
    attempt(context, unwrap_sfm, tracks, poses, scene.intrinsics, scene.ground_model())


@when(u'I unwrap the scene animals through the true camera poses')
def step_scene_animals_true(context):
    _unwrap_scene(context, context.scene.image_animals, context.scene.pose_dict())


@when(u'I unwrap the scene landmarks through the true camera poses')
def step_scene_landmarks_true(context):
    _unwrap_scene(context, context.scene.image_landmarks, context.scene.pose_dict())


@when(u'I unwrap the scene animals through the densified poses')
def step_scene_animals_dense(context):
    _unwrap_scene(context, context.scene.image_animals, context.dense_poses)


@when(u'I densify the scene keyframes with stride {stride:d} using slerp')
def step_scene_densify_slerp(context, stride):
    context.dense_poses = densify_poses(keyframe_subsample(context.scene, stride), RotationStrategy("slerp"))


@when(u'I densify the scene keyframes with stride {stride:d} using the scene in-plane deltas')
def step_scene_densify_inplane(context, stride):
    if stride != context.scene.keyframe_stride:
        raise AssertionError(f"the scene deltas were derived for stride {context.scene.keyframe_stride}")
    strategy = RotationStrategy("inplane_delta", context.scene.deltas)
    context.dense_poses = densify_poses(keyframe_subsample(context.scene, stride), strategy)


@then(u'every densified pose matches the true pose within {tol:g}')
def step_dense_matches_truth(context, tol):
    truth = context.scene.poses
    if sorted(context.dense_poses) != list(range(len(truth))):
        raise AssertionError("densified poses do not cover every frame")
    for f, pose in context.dense_poses.items():
        assert_vector_close(pose.position, truth[f].position, tol, f"frame {f} position")
        assert_vector_close(pose.matrix, truth[f].matrix, tol, f"frame {f} rotation")


@then(u'every unwrapped animal matches the ground truth within {relative:g} of the scene extent')
def step_animals_match_truth(context, relative):
    world, report = succeeded(context)
    if report.total:
        raise AssertionError(f"unexpected drops: {report.to_dict()}")
    truth = context.scene.visible_truth_animals()
    if len(world) == 0 or len(world) != len(truth):
        raise AssertionError(f"expected {len(truth)} unwrapped entries, got {len(world)}")
    if not (np.array_equal(world.frame, truth.frame) and np.array_equal(world.individual, truth.individual)
            and np.array_equal(world.keypoint, truth.keypoint)):
        raise AssertionError("unwrapped entries do not line up with the visible ground truth")
    scale = context.scene.extent()
    assert_vector_close(world.xy, truth.xy, relative * scale, "chart positions")
    assert_vector_close(world.xyz, truth.xyz, relative * scale, "3D positions")


@then(u'the landmark weighted dispersion is below {limit:g} body lengths')
def step_landmark_dispersion_below(context, limit):
    world, _ = succeeded(context)
    report = weighted_dispersion(world, context.scene.body_length)
    if not report.weighted_mean < limit:
        raise AssertionError(f"weighted dispersion {report.weighted_mean} BL is not below {limit}")


CURVED_FLIGHT = {
    "n_frames": 400,
    "n_individuals": 2,
    "drone": {
        "interpolation": "spline",
        "waypoints": [[0.0, 0.0, 80.0], [30.0, 15.0, 82.0], [60.0, -10.0, 79.0], [90.0, 5.0, 80.0]],
        "yaw_deg": [0.0, 25.0, -15.0],
        "pitch_deg": [0.0, 4.0],
    },
}


@given(u'smooth curved flights of {n:d} frames for seeds {first:d} to {last:d}')
def step_curved_flights(context, n, first, last):
    context.scenes = [
        generate_scene(small_scene_config(CURVED_FLIGHT, n_frames=n, seed=seed)) for seed in range(first, last + 1)
    ]


@when(u'I unwrap the landmarks of each flight through slerp keyframes every {strides} frames')
def step_stride_sweep(context, strides):
    context.strides = [int(s) for s in parse_numbers(strides)]
    means = []
    for stride in context.strides:
        values = []
        for scene in context.scenes:
            poses = densify_poses(keyframe_subsample(scene, stride), RotationStrategy("slerp"))
            world, _ = unwrap_sfm(scene.image_landmarks, poses, scene.intrinsics, scene.ground_model())
            values.append(weighted_dispersion(world, scene.body_length).weighted_mean)
        means.append(float(np.mean(values)))
    context.stride_means = means


@then(u'the mean landmark dispersion does not increase as the keyframes get denser')
def step_stride_monotone(context):
    means = context.stride_means
    for (s0, m0), (s1, m1) in zip(zip(context.strides, means), zip(context.strides[1:], means[1:])):
        if m1 > m0 + 1e-12:
            raise AssertionError(f"dispersion grows from {m0} at stride {s0} to {m1} at stride {s1}")
