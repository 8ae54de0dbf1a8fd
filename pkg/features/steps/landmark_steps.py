# features/steps/landmark_steps.py
"""
Step definitions for eval_landmarks.feature
"""

import math
import os

import numpy as np
from behave import given, then, when

from step_helpers import assert_close, attempt, parse_numbers, succeeded

from geometry import rotation_2d
from landmarks import DispersionRow, read_dispersion_table, summarize_rows, weighted_dispersion, write_report
from tracks import WorldTrackSet


def _world_tracks(ids, xy) -> WorldTrackSet:
    frames = np.concatenate([np.arange(n) for n in ids.values()]) if ids else np.empty(0, dtype=int)
    individuals = [name for name, n in ids.items() for _ in range(n)]
    n_frames = max(ids.values()) if ids else 0
    return WorldTrackSet(29.97, n_frames, frames, individuals, ["point"] * len(individuals),
                         np.asarray(xy, dtype=float).reshape(-1, 2), np.ones(len(individuals)))


def _moved(tracks: WorldTrackSet, xy) -> WorldTrackSet:
    return WorldTrackSet(tracks.fps, tracks.n_frames, tracks.frame, tracks.individual, tracks.keypoint,
                         xy, tracks.confidence)


@given(u'a world landmark track "{landmark}" with points {points}')
def step_world_landmark(context, landmark, points):
    values = np.array(parse_numbers(points)).reshape(-1, 2)
    context.world_tracks = _world_tracks({landmark: len(values)}, values)


@given(u'{n:d} random landmark tracks of {m:d} samples from seed {seed:d}')
def step_random_landmarks(context, n, m, seed):
    rng = np.random.default_rng(seed)
    centres = rng.uniform(-100.0, 100.0, (n, 2))
    xy = np.concatenate([c + rng.normal(0.0, 0.5, (m, 2)) for c in centres])
    context.world_tracks = _world_tracks({f"lm{i + 1:02d}": m for i in range(n)}, xy)


@given(u'an empty world track set')
def step_empty_world(context):
    context.world_tracks = WorldTrackSet.empty()


@when(u'I evaluate the landmark dispersion with body length {body_length:g}')
def step_evaluate(context, body_length):
    context.body_length = body_length
    attempt(context, weighted_dispersion, context.world_tracks, body_length)


def _row(report, landmark):
    for row in report.rows:
        if row.landmark_id == landmark:
            return row
    raise AssertionError(f"no row for landmark {landmark}")


@then(u'landmark "{landmark}" has mean {mean:g}, max {dmax:g}, min {dmin:g} and std {std:g} within {tol:g}')
def step_landmark_row(context, landmark, mean, dmax, dmin, std, tol):
    row = _row(succeeded(context), landmark)
    for name, expected in (("mean", mean), ("max", dmax), ("min", dmin), ("std", std)):
        assert_close(getattr(row, name), expected, tol, name)


@then(u'landmark "{landmark}" has {n:d} samples')
def step_landmark_samples(context, landmark, n):
    row = _row(succeeded(context), landmark)
    if row.samples != n:
        raise AssertionError(f"expected {n} samples, got {row.samples}")


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

@given(u'the dispersion rows')
def step_dispersion_rows(context):
    context.dispersion_rows = [
        DispersionRow(r['tree_id'], float(r['mean']), float(r['max']), float(r['min']), float(r['std']), int(r['samples']))
        for r in context.table
    ]


@given(u'the dispersion table fixture "{name}"')
def step_fixture_table(context, name):
    context.dispersion_rows = read_dispersion_table(os.path.join(context.fixtures_dir, name))


@given(u'a dispersion table "{name}" with content')
def step_table_content(context, name):
    with open(os.path.join(context.workdir, name), "w", encoding="utf-8", newline="\n") as f:
        f.write(context.text.strip("\n") + "\n")


@when(u'I read the dispersion table "{name}"')
def step_read_table(context, name):
    attempt(context, read_dispersion_table, os.path.join(context.workdir, name))


@when(u'I summarize the dispersion rows')
def step_summarize(context):
    attempt(context, summarize_rows, context.dispersion_rows)


@then(u'the weighted mean dispersion is {value:g} within {tol:g}')
def step_weighted_mean(context, value, tol):
    assert_close(succeeded(context).weighted_mean, value, tol, "weighted mean")


@then(u'the report lists landmarks "{ids}"')
def step_report_order(context, ids):
    found = [row.landmark_id for row in succeeded(context).rows]
    expected = [i.strip() for i in ids.split(",")]
    if found != expected:
        raise AssertionError(f"expected order {expected}, got {found}")


# ---------------------------------------------------------------------------
# Invariance and round trip
# ---------------------------------------------------------------------------

def _assert_same_report(a, b, tol):
    if [r.landmark_id for r in a.rows] != [r.landmark_id for r in b.rows]:
        raise AssertionError("reports cover different landmarks")
    for ra, rb in zip(a.rows, b.rows):
        for name in ("mean", "max", "min", "std"):
            assert_close(getattr(rb, name), getattr(ra, name), tol, f"{ra.landmark_id} {name}")
        if ra.samples != rb.samples:
            raise AssertionError(f"{ra.landmark_id}: {ra.samples} vs {rb.samples} samples")
    assert_close(b.weighted_mean, a.weighted_mean, tol, "weighted mean")


@then(u'moving every landmark by a rotation of {deg:g} degrees and translation ({tx:g}, {ty:g}) gives the same report within {tol:g}')
def step_rigid_invariance(context, deg, tx, ty, tol):
    report = succeeded(context)
    tracks = context.world_tracks
    moved = tracks.xy @ rotation_2d(math.radians(deg)).T + np.array([tx, ty])
    _assert_same_report(report, weighted_dispersion(_moved(tracks, moved), context.body_length), tol)


@then(u'scaling the landmarks and the body length by {factor:g} gives the same report within {tol:g}')
def step_scale_invariance(context, factor, tol):
    report = succeeded(context)
    tracks = context.world_tracks
    scaled = weighted_dispersion(_moved(tracks, tracks.xy * factor), context.body_length * factor)
    _assert_same_report(report, scaled, tol)


@then(u'the weighted mean dispersion lies within the range of the landmark means')
def step_mean_in_range(context):
    report = succeeded(context)
    means = [row.mean for row in report.rows]
    if not min(means) <= report.weighted_mean <= max(means):
        raise AssertionError(f"weighted mean {report.weighted_mean} outside [{min(means)}, {max(means)}]")


@when(u'I write the dispersion report to "{name}" and read the table back')
def step_report_round_trip(context, name):
    context.written_report = succeeded(context)
    path = os.path.join(context.workdir, name)
    write_report(context.written_report, path)
    attempt(context, read_dispersion_table, path)


@then(u'the table read back matches the report within {tol:g}')
def step_report_matches(context, tol):
    written = context.written_report
    _assert_same_report(written, summarize_rows(succeeded(context), written.body_length), tol)
