# features/steps/track_steps.py
"""
Step definitions for track_model.feature
"""

import math
import os
import textwrap

import numpy as np
from behave import given, then, when

from step_helpers import assert_close, assert_vector_close, attempt, succeeded, track_set_from_table

from tracks import (
    ImageTrackSet,
    WorldTrackSet,
    filter_landmark_tracks,
    metadata_path,
    read_tracks,
    read_world_tracks,
    write_tracks,
)


def _workfile(context, name):
    return os.path.join(context.workdir, name)


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(textwrap.dedent(text).strip("\n") + "\n")


def _entry(context, frame, individual, keypoint):
    track_set = succeeded(context)
    idx = np.flatnonzero(
        (track_set.frame == frame) & (track_set.individual == individual) & (track_set.keypoint == keypoint)
    )
    if len(idx) != 1:
        raise AssertionError(f"expected one entry ({frame}, {individual}, {keypoint}), found {len(idx)}")
    return track_set, int(idx[0])


# ---------------------------------------------------------------------------
# Reading
# ---------------------------------------------------------------------------

@given(u'a track file "{name}" with content')
def step_track_file(context, name):
    _write_text(_workfile(context, name), context.text)


@given(u'a metadata file for "{name}" with content')
def step_metadata_file(context, name):
    _write_text(metadata_path(_workfile(context, name)), context.text)


@when(u'I read the image tracks from "{name}"')
def step_read_image_tracks(context, name):
    attempt(context, read_tracks, _workfile(context, name))


@when(u'I read the world tracks from "{name}"')
def step_read_world_tracks(context, name):
    attempt(context, read_world_tracks, _workfile(context, name))


@then(u'the track set has {n:d} entries')
def step_entry_count(context, n):
    found = len(succeeded(context))
    if found != n:
        raise AssertionError(f"expected {n} entries, got {found}")


@then(u'the track set has fps {fps:g} and {n:d} frames')
def step_fps_frames(context, fps, n):
    track_set = succeeded(context)
    assert_close(track_set.fps, fps, 0, "fps")
    if track_set.n_frames != n:
        raise AssertionError(f"expected {n} frames, got {track_set.n_frames}")


@then(u'entry ({frame:d}, "{individual}", "{keypoint}") is at ({x:g}, {y:g}) with confidence {conf:g}')
def step_entry_values(context, frame, individual, keypoint, x, y, conf):
    track_set, i = _entry(context, frame, individual, keypoint)
    assert_vector_close(track_set.xy[i], (x, y), 0, "coordinates")
    assert_close(track_set.confidence[i], conf, 0, "confidence")


@then(u'entry ({frame:d}, "{individual}", "{keypoint}") has no confidence')
def step_entry_no_confidence(context, frame, individual, keypoint):
    track_set, i = _entry(context, frame, individual, keypoint)
    if not math.isnan(track_set.confidence[i]):
        raise AssertionError(f"expected a missing confidence, got {track_set.confidence[i]}")
    if track_set.get(frame, individual, keypoint)[2] is not None:
        raise AssertionError("get() should report a missing confidence as None")


@then(u'entry ({frame:d}, "{individual}", "{keypoint}") has 3D point ({x:g}, {y:g}, {z:g})')
def step_entry_3d(context, frame, individual, keypoint, x, y, z):
    track_set, i = _entry(context, frame, individual, keypoint)
    if not isinstance(track_set, WorldTrackSet) or track_set.xyz is None:
        raise AssertionError("expected a world track set with 3D points")
    assert_vector_close(track_set.xyz[i], (x, y, z), 0, "3D point")


@then(u'the entries are ordered as "{order}"')
def step_entry_order(context, order):
    track_set = succeeded(context)
    found = [f"{f} {i} {k}" for f, i, k in zip(track_set.frame, track_set.individual, track_set.keypoint)]
    expected = [item.strip() for item in order.split(",")]
    if found != expected:
        raise AssertionError(f"expected order {expected}, got {found}")


# ---------------------------------------------------------------------------
# Writing
# ---------------------------------------------------------------------------

def _random_track_set(n, seed, with_3d):
    rng = np.random.default_rng(seed)
    frames = np.arange(n) // 4
    individuals = [f"ind{(i % 4) // 2 + 1:02d}" for i in range(n)]
    keypoints = ["head" if i % 2 == 0 else "tail" for i in range(n)]
    xy = rng.integers(-500000, 500000, (n, 2)) / 1000.0
    confidence = rng.integers(0, 1001, n) / 1000.0
    confidence[rng.random(n) < 0.1] = math.nan
    xyz = rng.integers(-500000, 500000, (n, 3)) / 1000.0 if with_3d else None
    cls = WorldTrackSet if with_3d else ImageTrackSet
    return cls(25.0, int(frames[-1]) + 1, frames, individuals, keypoints, xy, confidence, xyz)


@given(u'a random track set of {n:d} entries from seed {seed:d}')
def step_random_track_set(context, n, seed):
    context.track_set = _random_track_set(n, seed, with_3d=False)


@given(u'a random track set of {n:d} entries with 3D points from seed {seed:d}')
def step_random_track_set_3d(context, n, seed):
    context.track_set = _random_track_set(n, seed, with_3d=True)


@given(u'an empty track set with fps {fps:g} and {n:d} frames')
def step_empty_track_set(context, fps, n):
    context.track_set = ImageTrackSet.empty(fps, n)


@when(u'I write the track set to "{name}" and read it back')
def step_write_read(context, name):
    path = _workfile(context, name)
    reader = read_world_tracks if isinstance(context.track_set, WorldTrackSet) else read_tracks

    def round_trip():
        write_tracks(context.track_set, path)
        return reader(path)

    attempt(context, round_trip)


@when(u'I write the track set into a missing directory')
def step_write_missing_dir(context):
    attempt(context, write_tracks, context.track_set, _workfile(context, os.path.join("missing", "tracks.csv")))


@then(u'the read track set equals the written one')
def step_round_trip_equal(context):
    read_back = succeeded(context)
    if not read_back.equals(context.track_set):
        raise AssertionError(f"round trip changed the track set ({len(read_back)} vs {len(context.track_set)} entries)")


# ---------------------------------------------------------------------------
# Landmark filter
# ---------------------------------------------------------------------------

def _add_landmark(context, individual, frames, xs):
    if not hasattr(context, 'landmark_rows'):
        context.landmark_rows = []
    context.landmark_rows.extend((int(f), individual, float(x)) for f, x in zip(frames, xs))


def _landmark_set(context):
    rows = context.landmark_rows
    frames = [r[0] for r in rows]
    return ImageTrackSet(
        29.97, max(frames) + 1, frames, [r[1] for r in rows], ["point"] * len(rows),
        [(r[2], 0.0) for r in rows], np.ones(len(rows)),
    )


@given(u'a landmark track "{individual}" of {n:d} samples moving {step:g} pixel per frame')
@given(u'a landmark track "{individual}" of {n:d} samples moving {step:g} pixels per frame')
def step_landmark_track(context, individual, n, step):
    _add_landmark(context, individual, range(n), step * np.arange(n))


@given(u'a landmark track "{individual}" of {n:d} samples moving 1 pixel per frame with one step of {jump:g} pixels')
def step_landmark_track_jump(context, individual, n, jump):
    k = np.arange(n, dtype=float)
    xs = np.where(k < n // 2, k, k - 1.0 + jump)
    _add_landmark(context, individual, range(n), xs)


@given(u'a landmark track "{individual}" of {n:d} samples that skips frames {a:d} to {b:d} and moves {jump:g} pixels across the skip')
def step_landmark_track_skip(context, individual, n, a, b, jump):
    frames = [f for f in range(n + b - a + 1) if not a <= f <= b]
    xs = [float(f) if f < a else float(f) + jump for f in frames]
    _add_landmark(context, individual, frames, xs)


@when(u'I filter the landmark tracks keeping more than {min_samples:d} samples and jumps up to {max_jump:g} pixels')
def step_filter_landmarks(context, min_samples, max_jump):
    context.filter_args = (min_samples, max_jump)
    attempt(context, filter_landmark_tracks, _landmark_set(context), min_samples, max_jump)


@then(u'the filter keeps no tracks')
def step_filter_keeps_none(context):
    kept = succeeded(context)
    if len(kept):
        raise AssertionError(f"expected no tracks, kept {kept.individuals()}")


@then(u'the filter keeps "{ids}"')
def step_filter_keeps(context, ids):
    expected = sorted(item.strip() for item in ids.split(","))
    found = succeeded(context).individuals()
    if found != expected:
        raise AssertionError(f"expected tracks {expected}, kept {found}")


@then(u'filtering the result again changes nothing')
def step_filter_idempotent(context):
    once = succeeded(context)
    twice = filter_landmark_tracks(once, *context.filter_args)
    if not twice.equals(once):
        raise AssertionError("a second filter pass changed the track set")


@given(u'the track entries')
def step_track_entries(context):
    context.track_set = track_set_from_table(context.table, cls=ImageTrackSet)


@when(u'I split the track entries into tracks')
def step_split_tracks(context):
    context.tracks = list(context.track_set.iter_tracks())


@then(u'the tracks are "{expected}"')
def step_tracks_are(context, expected):
    found = ", ".join(f"{individual}/{keypoint}: {len(idx)}" for individual, keypoint, idx in context.tracks)
    if found != expected:
        raise AssertionError(f"expected tracks {expected}, got {found}")


@then(u'every track holds the entries of one individual and keypoint in frame order')
def step_tracks_consistent(context):
    track_set = context.track_set
    seen = np.concatenate([idx for _, _, idx in context.tracks])
    if sorted(seen.tolist()) != list(range(len(track_set))):
        raise AssertionError(f"tracks cover entries {sorted(seen.tolist())}")
    for individual, keypoint, idx in context.tracks:
        if set(track_set.individual[idx]) != {individual} or set(track_set.keypoint[idx]) != {keypoint}:
            raise AssertionError(f"track {individual}/{keypoint} mixes entries of other tracks")
        if np.any(np.diff(track_set.frame[idx]) <= 0):
            raise AssertionError(f"track {individual}/{keypoint} is not in frame order")


@when(u'I filter the track entries keeping more than {min_samples:d} samples and jumps up to {max_jump:g} pixels')
def step_filter_track_entries(context, min_samples, max_jump):
    attempt(context, filter_landmark_tracks, context.track_set, min_samples, max_jump)
