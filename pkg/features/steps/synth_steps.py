# features/steps/synth_steps.py
"""
Step definitions for synth_scene.feature
"""

import math
import os

import numpy as np
from behave import given, then, when

from step_helpers import assert_close, assert_vector_close, attempt, parse_numbers, succeeded

from geometry import wrap_angle
from landmarks import weighted_dispersion
from synth import exact_chain, generate_scene, keyframe_subsample, load_scene_config, write_scene
from tracks import read_tracks
from unwrap_sfm import keyframe_schedule, read_poses


def _assert_still(tracks, tol):
    if len(tracks) == 0:
        raise AssertionError("the scene has no observations")
    for individual, keypoint, idx in tracks.iter_tracks():
        assert_vector_close(tracks.xy[idx], np.repeat(tracks.xy[idx[:1]], len(idx), axis=0), tol,
                            f"{individual}/{keypoint} pixels")


@then(u'every image track of the scene stays at one pixel within {tol:g}')
def step_animals_still(context, tol):
    _assert_still(context.scene.image_animals, tol)


@then(u'every landmark image track of the scene stays at one pixel within {tol:g}')
def step_landmarks_still_in_image(context, tol):
    _assert_still(context.scene.image_landmarks, tol)


@then(u'the image of "{individual}" at frame {frame:d} has its head at ({hx:g}, {hy:g}) and its tail at ({tx:g}, {ty:g}) within {tol:g}')
def step_animal_pixels(context, individual, frame, hx, hy, tx, ty, tol):
    image = context.scene.image_animals
    for keypoint, expected in (("head", (hx, hy)), ("tail", (tx, ty))):
        found = image.get(frame, individual, keypoint)
        if found is None:
            raise AssertionError(f"{individual} {keypoint} is not observed at frame {frame}")
        assert_vector_close(found[:2], expected, tol, f"{keypoint} pixel")


@then(u'some animal points of the scene are not visible')
def step_some_hidden(context):
    if context.scene.animal_visible.all():
        raise AssertionError("every animal point is visible")


@then(u'every observed animal point lies inside the image')
def step_observed_inside(context):
    scene = context.scene
    if not scene.intrinsics.in_bounds(scene.image_animals.xy).all():
        raise AssertionError("an observed animal point lies outside the image")


@then(u'the scene observes exactly its visible animal points')
def step_observed_count(context):
    scene = context.scene
    if len(scene.image_animals) != int(np.count_nonzero(scene.animal_visible)):
        raise AssertionError(f"{len(scene.image_animals)} observations for {int(scene.animal_visible.sum())} visible points")


# ---------------------------------------------------------------------------
# Determinism and ground truth
# ---------------------------------------------------------------------------

@when(u'I generate the same scene again')
def step_regenerate(context):
    context.other_scene = generate_scene(context.scene_config)


@when(u'I generate the scene again with seed {seed:d}')
def step_regenerate_seed(context, seed):
    context.other_scene = generate_scene(dict(context.scene_config, seed=seed))


@then(u'both scenes have identical image tracks and chains')
def step_identical(context):
    a, b = context.scene, context.other_scene
    if not (a.image_animals.equals(b.image_animals) and a.image_landmarks.equals(b.image_landmarks)):
        raise AssertionError("image tracks differ between runs")
    if sorted(a.chain.transforms) != sorted(b.chain.transforms):
        raise AssertionError("chains cover different frames")
    for f, transform in a.chain.transforms.items():
        if not transform.is_close(b.chain.get(f), 0.0):
            raise AssertionError(f"chain entry {f} differs between runs")


@then(u'the two scenes have different animal tracks')
def step_different(context):
    a, b = context.scene.truth_animals, context.other_scene.truth_animals
    if np.array_equal(a.xy, b.xy):
        raise AssertionError("different seeds gave the same herd")


@then(u'the ground truth landmark dispersion is {value:g} within {tol:g}')
def step_truth_dispersion(context, value, tol):
    report = weighted_dispersion(context.scene.visible_truth_landmarks(), context.scene.body_length)
    assert_close(report.weighted_mean, value, tol, "ground truth dispersion")


@then(u'the estimated poses are the true poses')
def step_poses_exact(context):
    scene = context.scene
    for f, (true, estimated) in enumerate(zip(scene.poses, scene.estimated_poses)):
        assert_vector_close(estimated.position, true.position, 0.0, f"frame {f} position")
        assert_vector_close(estimated.matrix, true.matrix, 0.0, f"frame {f} rotation")


@then(u'every estimated pose differs from its true pose')
def step_poses_noisy(context):
    scene = context.scene
    for f, (true, estimated) in enumerate(zip(scene.poses, scene.estimated_poses)):
        if np.allclose(estimated.position, true.position) or np.allclose(estimated.matrix, true.matrix):
            raise AssertionError(f"frame {f} pose is not perturbed")


# ---------------------------------------------------------------------------
# Keyframes, chains and deltas
# ---------------------------------------------------------------------------

@then(u'the keyframe schedule of {n:d} frames every {stride:d} frames has {count:d} keyframes ending at frame {last:d}')
def step_schedule(context, n, stride, count, last):
    frames = keyframe_schedule(n, stride)
    if len(frames) != count or frames[-1] != last or frames[0] != 0:
        raise AssertionError(f"schedule has {len(frames)} keyframes from {frames[0]} to {frames[-1]}")


@when(u'I take the scene keyframes every {stride:d} frames')
def step_scene_keyframes(context, stride):
    context.keyframe_set = keyframe_subsample(context.scene, stride)


@then(u'the keyframes are at frames {frames}')
def step_keyframe_frames(context, frames):
    expected = [int(f) for f in parse_numbers(frames)]
    if context.keyframe_set.frames != expected:
        raise AssertionError(f"keyframes at {context.keyframe_set.frames}, expected {expected}")
    for f in expected:
        if context.keyframe_set.poses[f] is not context.scene.estimated_poses[f]:
            raise AssertionError(f"keyframe {f} is not the scene pose")


@when(u'I derive the exact chain of the scene')
def step_exact_chain(context):
    attempt(context, exact_chain, context.scene)
    if context.error is None:
        context.chain = context.result


@then(u'every chain entry has angle {deg:g} degrees within {tol:g}')
def step_chain_angle(context, deg, tol):
    succeeded(context)
    if len(context.chain) == 0:
        raise AssertionError("the chain is empty")
    for f, transform in context.chain.transforms.items():
        assert_close(wrap_angle(transform.theta - math.radians(deg)), 0.0, tol, f"frame {f} angle")


@then(u'the scene in-plane delta for frame {frame:d} is {deg:g} degrees within {tol:g}')
def step_scene_delta(context, frame, deg, tol):
    assert_close(wrap_angle(context.scene.deltas[frame] - math.radians(deg)), 0.0, tol, f"frame {frame} delta")


# ---------------------------------------------------------------------------
# Configuration and output
# ---------------------------------------------------------------------------

@given(u'a scene configuration file "{name}" with content')
def step_scene_config_file(context, name):
    with open(os.path.join(context.workdir, name), "w", encoding="utf-8") as f:
        f.write(context.text)


@when(u'I load the scene configuration "{name}"')
def step_load_scene_config(context, name):
    attempt(context, load_scene_config, os.path.join(context.workdir, name))


@then(u'the scene configuration has {frames:d} frames, {individuals:d} individuals and herd speed {speed:g}')
def step_config_values(context, frames, individuals, speed):
    cfg = succeeded(context)
    if cfg["n_frames"] != frames or cfg["n_individuals"] != individuals or cfg["herd"]["speed"] != speed:
        raise AssertionError(f"configuration is {cfg['n_frames']} frames, {cfg['n_individuals']} individuals, speed {cfg['herd']['speed']}")


@then(u'the scene configuration keeps the default herd spread of {spread:g}')
def step_config_default(context, spread):
    assert_close(succeeded(context)["herd"]["spread"], spread, 0.0, "herd spread")


@when(u'I write the scene to "{name}"')
def step_write_scene(context, name):
    context.scene_dir = os.path.join(context.workdir, name)
    attempt(context, write_scene, context.scene, context.scene_dir)


@then(u'the scene directory holds "{names}"')
def step_scene_files(context, names):
    succeeded(context)
    missing = [n.strip() for n in names.split(",") if not os.path.isfile(os.path.join(context.scene_dir, n.strip()))]
    if missing:
        raise AssertionError(f"scene directory lacks {missing}")


@then(u'the written image tracks read back as the scene image tracks within {tol:g}')
def step_scene_tracks_round_trip(context, tol):
    loaded = read_tracks(os.path.join(context.scene_dir, "image_tracks.csv"))
    expected = context.scene.image_animals
    if len(loaded) != len(expected) or not np.array_equal(loaded.individual, expected.individual):
        raise AssertionError("written image tracks hold different entries")
    assert_vector_close(loaded.xy, expected.xy, tol, "image points")


@then(u'the written poses cover all {n:d} frames')
def step_scene_poses_written(context, n):
    poses = read_poses(os.path.join(context.scene_dir, "poses.csv"))
    if sorted(poses) != list(range(n)):
        raise AssertionError(f"poses.csv covers {len(poses)} frames")
