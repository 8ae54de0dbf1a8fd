# features/steps/behavior_steps.py
"""
Step definitions for behavior_metrics.feature
"""

import csv
import math
import os

import numpy as np
from behave import given, then, when

from step_helpers import assert_close, assert_vector_close, attempt, body_track_set, parse_numbers, succeeded, track_set_from_table

from behavior import (
    alignment_per_individual,
    bin_speed_polarization,
    body_vectors,
    centroid_kinematics,
    clean_tracks,
    compute_herd_metrics,
    pearson_r,
    position_alignment_correlation,
    savgol_smooth,
    spacing_metrics,
    write_metrics,
)
from geometry import rotation_2d

FPS = 29.97


# ---------------------------------------------------------------------------
# Herd set-up
# ---------------------------------------------------------------------------

def _body(centre, heading_deg, length):
    u = np.array([math.cos(math.radians(heading_deg)), math.sin(math.radians(heading_deg))])
    centre = np.asarray(centre, dtype=float)
    return centre + 0.5 * length * u, centre - 0.5 * length * u


def _herd_tracks(context):
    if getattr(context, 'herd_tracks', None) is not None:
        return context.herd_tracks
    entries = [(f, ind, head, tail) for (f, ind), (head, tail) in sorted(context.herd_entries.items())]
    return body_track_set(entries, fps=FPS)


@given(u'the herd tracks')
def step_herd_table(context):
    context.herd_tracks = track_set_from_table(context.table, fps=FPS)


@given(u'a herd where "{individual}" has head ({hx:g}, {hy:g}) and tail ({tx:g}, {ty:g}) in frames {first:d} to {last:d}')
def step_static_individual(context, individual, hx, hy, tx, ty, first, last):
    context.herd_entries = {(f, individual): ((hx, hy), (tx, ty)) for f in range(first, last + 1)}


@given(u'the head of "{individual}" is at ({x:g}, {y:g}) in frame {frame:d}')
def step_move_head(context, individual, x, y, frame):
    _, tail = context.herd_entries[(frame, individual)]
    context.herd_entries[(frame, individual)] = ((x, y), tail)


@given(u'the herd in frame {frame:d}')
def step_herd_frame(context, frame):
    context.herd_entries = {
        (frame, row['individual_id']): _body((float(row['x']), float(row['y'])), float(row['heading']), float(row['body_length']))
        for row in context.table
    }


@given(u'a herd of {n:d} individuals heading {deg:g} degrees moving ({dx:g}, {dy:g}) per frame over frames 0 to {last:d}')
def step_moving_herd(context, n, deg, dx, dy, last):
    context.herd_entries = {
        (f, f"ind{i + 1:02d}"): _body((3.0 * i + dx * f, dy * f), deg, 1.0)
        for f in range(last + 1) for i in range(n)
    }


def _random_herd(n, frames, rng):
    centres = rng.uniform(0.0, 20.0, (n, 2)) + np.cumsum(rng.normal(0.0, 0.05, (frames, n, 2)), axis=0)
    headings = rng.uniform(-180.0, 180.0, (frames, n))
    return {
        (f, f"ind{i + 1:02d}"): _body(centres[f, i], headings[f, i], 0.9 if (f + i) % 2 == 0 else 1.1)
        for f in range(frames) for i in range(n)
    }


@given(u'a random herd of {n:d} individuals over {frames:d} frames from seed {seed:d}')
def step_random_herd(context, n, frames, seed):
    context.herd_entries = _random_herd(n, frames, np.random.default_rng(seed))


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

def _metrics(tracks):
    clean = clean_tracks(tracks)
    return compute_herd_metrics(clean, body_vectors(clean), FPS)


@when(u'I clean the herd tracks')
def step_clean(context):
    attempt(context, clean_tracks, _herd_tracks(context))


@when(u'I clean the herd tracks with confidence threshold {threshold:g}')
def step_clean_threshold(context, threshold):
    attempt(context, clean_tracks, _herd_tracks(context), threshold)


@when(u'I compute the body vectors')
def step_body_vectors(context):
    attempt(context, lambda tracks: body_vectors(clean_tracks(tracks)), _herd_tracks(context))


@when(u'I compute the herd metrics')
def step_herd_metrics(context):
    attempt(context, _metrics, _herd_tracks(context))
    context.metrics = context.result


@then(u'{n:d} points are removed as "{reason}"')
def step_removed_points(context, n, reason):
    found = succeeded(context).removal_counts().get(reason, 0)
    if found != n:
        raise AssertionError(f"expected {n} {reason} removals, got {found}")


@then(u'{n:d} points remain after cleaning')
def step_points_remain(context, n):
    found = len(succeeded(context).tracks)
    if found != n:
        raise AssertionError(f"expected {n} points after cleaning, got {found}")


@then(u'the removed "{reason}" points are in frames {frames}')
def step_removed_frames(context, reason, frames):
    found = sorted(r.frame for r in succeeded(context).removals if r.reason == reason)
    expected = [int(f) for f in parse_numbers(frames)]
    if found != expected:
        raise AssertionError(f"expected {reason} removals in frames {expected}, got {found}")


@then(u'the median body length is {value:g} within {tol:g}')
def step_median_body_length(context, value, tol):
    assert_close(succeeded(context).body_length, value, tol, "body length")


@then(u'cleaning the cleaned tracks again removes nothing and keeps the body length')
def step_clean_idempotent(context):
    once = succeeded(context)
    twice = clean_tracks(once.tracks)
    if twice.removals:
        raise AssertionError(f"a second cleaning removed {twice.removal_counts()}")
    assert_close(twice.body_length, once.body_length, 0.0, "body length after a second cleaning")


@then(u'{n:d} body vectors are removed as "{reason}"')
def step_vectors_removed(context, n, reason):
    found = sum(1 for r in succeeded(context).removals if r.reason == reason)
    if found != n:
        raise AssertionError(f"expected {n} {reason} body vectors, got {found}")


@then(u'{n:d} body vectors remain')
def step_vectors_remain(context, n):
    found = len(succeeded(context))
    if found != n:
        raise AssertionError(f"expected {n} body vectors, got {found}")


# ---------------------------------------------------------------------------
# Per-frame and per-individual values
# ---------------------------------------------------------------------------

def _frame_row(metrics, frame):
    rows = np.flatnonzero(metrics.frames == frame)
    if len(rows) != 1:
        raise AssertionError(f"no herd metrics for frame {frame}")
    return rows[0]


def _entry_row(metrics, frame, individual):
    rows = np.flatnonzero((metrics.entry_frame == frame) & (metrics.entry_individual == individual))
    if len(rows) != 1:
        raise AssertionError(f"no metrics for {individual} at frame {frame}")
    return rows[0]


def _undefined(value, what):
    if not math.isnan(value):
        raise AssertionError(f"{what} should be undefined, got {value}")


@then(u'the polarization at frame {frame:d} is {value:g} within {tol:g}')
def step_polarization(context, frame, value, tol):
    metrics = succeeded(context)
    assert_close(metrics.polarization[_frame_row(metrics, frame)], value, tol, "polarization")


@then(u'the alignment of "{individual}" at frame {frame:d} is {value:g} within {tol:g}')
def step_alignment(context, individual, frame, value, tol):
    metrics = succeeded(context)
    assert_close(metrics.alignment[_entry_row(metrics, frame, individual)], value, tol, "alignment")


@then(u'the alignment of "{individual}" at frame {frame:d} is undefined')
def step_alignment_undefined(context, individual, frame):
    metrics = succeeded(context)
    _undefined(metrics.alignment[_entry_row(metrics, frame, individual)], "alignment")


@then(u'the speed of "{individual}" at frame {frame:d} is {value:g} body lengths per second within {tol:g}')
def step_speed(context, individual, frame, value, tol):
    metrics = succeeded(context)
    assert_close(metrics.speed[_entry_row(metrics, frame, individual)], value, tol, "speed")


@then(u'the speed of "{individual}" at frame {frame:d} is undefined')
def step_speed_undefined(context, individual, frame):
    metrics = succeeded(context)
    _undefined(metrics.speed[_entry_row(metrics, frame, individual)], "speed")


@then(u'the mean pair distance at frame {frame:d} is {mean:g} and the largest is {largest:g} within {tol:g}')
def step_pair_distance(context, frame, mean, largest, tol):
    metrics = succeeded(context)
    row = _frame_row(metrics, frame)
    assert_close(metrics.mean_pair_dist[row], mean, tol, "mean pair distance")
    assert_close(metrics.max_pair_dist[row], largest, tol, "largest pair distance")


@then(u'the nearest neighbour of "{individual}" at frame {frame:d} is {value:g} body lengths away within {tol:g}')
def step_nearest_neighbour(context, individual, frame, value, tol):
    metrics = succeeded(context)
    assert_close(metrics.nn_dist[_entry_row(metrics, frame, individual)], value, tol, "nearest neighbour")


@then(u'the distance of "{individual}" to the herd centroid at frame {frame:d} is {value:g} body lengths within {tol:g}')
def step_centroid_distance(context, individual, frame, value, tol):
    metrics = succeeded(context)
    assert_close(metrics.dist_centroid[_entry_row(metrics, frame, individual)], value, tol, "distance to centroid")


@then(u'the position-alignment correlation at frame {frame:d} is undefined')
def step_correlation_undefined(context, frame):
    metrics = succeeded(context)
    _undefined(metrics.pearson_r[_frame_row(metrics, frame)], "position-alignment correlation")


@when(u'I correlate {xs} with {ys}')
def step_correlate(context, xs, ys):
    attempt(context, pearson_r, parse_numbers(xs), parse_numbers(ys))


@then(u'the correlation is {value:g} within {tol:g}')
def step_correlation(context, value, tol):
    assert_close(succeeded(context), value, tol, "correlation")


@then(u'the correlation is undefined')
def step_correlation_none(context):
    if succeeded(context) is not None:
        raise AssertionError(f"expected no correlation, got {context.result}")


# ---------------------------------------------------------------------------
# Smoothing and bins
# ---------------------------------------------------------------------------

@given(u'a quadratic series of {n:d} values')
def step_quadratic_series(context, n):
    t = np.arange(n, dtype=float)
    context.series = 0.3 * t ** 2 - 2.0 * t + 5.0


@given(u'a constant series of {n:d} values equal to {value:g}')
def step_constant_series(context, n, value):
    context.series = np.full(n, value)


@given(u'a random series of {n:d} values from seed {seed:d}')
def step_random_series(context, n, seed):
    context.series = np.random.default_rng(seed).normal(0.0, 1.0, n)


@given(u'value {index:d} of the series is missing')
def step_series_gap(context, index):
    context.series = context.series.copy()
    context.series[index] = np.nan


@when(u'I smooth the series with window {window:d} and order {order:d}')
def step_smooth(context, window, order):
    context.window, context.order = window, order
    attempt(context, savgol_smooth, context.series, window, order)


@then(u'the smoothed series equals the original within {tol:g}')
def step_smoothed_unchanged(context, tol):
    smoothed, _ = succeeded(context)
    assert_vector_close(smoothed, context.series, tol, "smoothed series")


def _assert_local_fits(smoothed, y, order, window, tol, offset=0):
    t = np.arange(len(y), dtype=float)
    half = window // 2
    for i in range(len(y)):
        start = min(max(i - half, 0), len(y) - window)
        coefficients = np.polyfit(t[start:start + window], y[start:start + window], order)
        assert_close(smoothed[i], np.polyval(coefficients, t[i]), tol, f"value {offset + i}")


@then(u'every smoothed value equals a local polynomial fit of order {order:d} over {window:d} values within {tol:g}')
def step_local_fit(context, order, window, tol):
    smoothed, _ = succeeded(context)
    _assert_local_fits(smoothed, context.series, order, window, tol)


@then(u'every run of values around the gap equals local polynomial fits of order {order:d} over {window:d} values within {tol:g}')
def step_local_fit_runs(context, order, window, tol):
    smoothed, _ = succeeded(context)
    y = context.series
    gaps = np.flatnonzero(~np.isfinite(y))
    for start, stop in zip(np.concatenate(([0], gaps + 1)), np.concatenate((gaps, [len(y)]))):
        if stop - start < window:
            assert_vector_close(smoothed[start:stop], y[start:stop], 0.0, f"run {start}..{stop - 1}")
        else:
            _assert_local_fits(smoothed[start:stop], y[start:stop], order, window, tol, offset=start)


@then(u'values {first:d} to {last:d} of the smoothed series equal the original')
def step_smoothed_slice_unchanged(context, first, last):
    smoothed, _ = succeeded(context)
    assert_vector_close(smoothed[first:last + 1], context.series[first:last + 1], 0.0, f"values {first} to {last}")


@then(u'value {index:d} of the smoothed series is missing')
def step_smoothed_gap(context, index):
    smoothed, _ = succeeded(context)
    _undefined(smoothed[index], f"smoothed value {index}")


@then(u'the series is reported too short')
def step_too_short(context):
    _, too_short = succeeded(context)
    if not too_short:
        raise AssertionError("series was not reported too short")


@when(u'I bin the herd metrics every {size:d} frames')
def step_bin(context, size):
    context.bins = bin_speed_polarization(context.metrics, size)


@then(u'there are {n:d} bins starting at frames {starts}')
def step_bin_starts(context, n, starts):
    found = [b.start_frame for b in context.bins]
    expected = [int(s) for s in parse_numbers(starts)]
    if len(context.bins) != n or found != expected:
        raise AssertionError(f"expected {n} bins starting at {expected}, got {found}")


@then(u'every bin has mean speed {value:g} body lengths per second within {tol:g}')
def step_bin_speed(context, value, tol):
    for b in context.bins:
        assert_close(b.mean_speed, value, tol, f"bin {b.index} speed")


@then(u'every bin has mean polarization {value:g} within {tol:g}')
def step_bin_polarization(context, value, tol):
    for b in context.bins:
        assert_close(b.mean_polarization, value, tol, f"bin {b.index} polarization")


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------

def _direct_metrics(entries, fps):
    """Per-frame and per-entry metrics by plain loops over the raw head/tail entries."""
    body_length = float(np.median([np.linalg.norm(np.subtract(h, t)) for h, t in entries.values()]))
    frames = sorted({f for f, _ in entries})
    herd, individual = {}, {}
    for frame in frames:
        names = sorted(i for f, i in entries if f == frame)
        centres = {i: (np.add(*entries[(frame, i)]) / 2.0) / body_length for i in names}
        units = {i: np.subtract(*entries[(frame, i)]) / np.linalg.norm(np.subtract(*entries[(frame, i)])) for i in names}
        mean_unit = np.mean([units[i] for i in names], axis=0)
        direction = mean_unit / np.linalg.norm(mean_unit)
        pairs = [np.linalg.norm(centres[a] - centres[b]) for k, a in enumerate(names) for b in names[k + 1:]]
        herd_centre = np.mean([centres[i] for i in names], axis=0)
        alignment = {i: float(units[i] @ direction) for i in names}
        dist = {i: float(np.linalg.norm(centres[i] - herd_centre)) for i in names}
        r = np.corrcoef([dist[i] for i in names], [alignment[i] for i in names])[0, 1] if len(names) >= 3 else math.nan
        herd[frame] = (float(np.linalg.norm(mean_unit)), float(np.mean(pairs)), float(np.max(pairs)), float(r))
        for i in names:
            previous = entries.get((frame - 1, i))
            speed = math.nan
            if previous is not None:
                speed = float(np.linalg.norm(centres[i] - (np.add(*previous) / 2.0) / body_length)) * fps
            nearest = min(np.linalg.norm(centres[i] - centres[j]) for j in names if j != i)
            individual[(frame, i)] = (alignment[i], speed, dist[i], float(nearest))
    return herd, individual


def _close(a, b, tol):
    return (math.isnan(a) and math.isnan(b)) or abs(a - b) <= tol


@then(u'the herd metrics match a direct computation within {tol:g}')
def step_direct_oracle(context, tol):
    metrics = succeeded(context)
    herd, individual = _direct_metrics(context.herd_entries, FPS)
    if metrics.frames.tolist() != sorted(herd):
        raise AssertionError(f"metrics cover frames {metrics.frames.tolist()}")
    for row, frame in enumerate(metrics.frames.tolist()):
        found = (metrics.polarization[row], metrics.mean_pair_dist[row], metrics.max_pair_dist[row], metrics.pearson_r[row])
        for name, a, b in zip(("polarization", "mean pair", "max pair", "pearson"), found, herd[frame]):
            if not _close(float(a), b, tol):
                raise AssertionError(f"frame {frame} {name}: {a} vs {b}")
    if len(metrics.entry_frame) != len(individual):
        raise AssertionError(f"expected {len(individual)} entries, got {len(metrics.entry_frame)}")
    for row, (frame, name) in enumerate(zip(metrics.entry_frame.tolist(), metrics.entry_individual.tolist())):
        found = (metrics.alignment[row], metrics.speed[row], metrics.dist_centroid[row], metrics.nn_dist[row])
        for what, a, b in zip(("alignment", "speed", "distance to centroid", "nearest neighbour"), found, individual[(frame, name)]):
            if not _close(float(a), b, tol):
                raise AssertionError(f"{name} at frame {frame} {what}: {a} vs {b}")


@then(u'the single-frame metrics agree with the herd metrics within {tol:g}')
def step_single_frame(context, tol):
    metrics = succeeded(context)
    clean = clean_tracks(_herd_tracks(context))
    vecs = body_vectors(clean)
    centroids = centroid_kinematics(clean, FPS)
    for row, frame in enumerate(metrics.frames.tolist()):
        entries = np.flatnonzero(metrics.entry_frame == frame)
        names = metrics.entry_individual[entries].tolist()

        alignment = alignment_per_individual(vecs, frame)
        for name, value in zip(names, metrics.alignment[entries]):
            if not _close(alignment.get(name, math.nan), float(value), tol):
                raise AssertionError(f"{name} at frame {frame} alignment: {alignment.get(name)} vs {value}")

        spacing = spacing_metrics(centroids, frame)
        for what, single, herd in (("mean pair", spacing.mean_pair_dist, metrics.mean_pair_dist[row]),
                                   ("max pair", spacing.max_pair_dist, metrics.max_pair_dist[row])):
            if not _close(math.nan if single is None else single, float(herd), tol):
                raise AssertionError(f"frame {frame} {what}: {single} vs {herd}")
        for name, nn, dc in zip(names, metrics.nn_dist[entries], metrics.dist_centroid[entries]):
            if not _close(spacing.nn_dist.get(name, math.nan), float(nn), tol):
                raise AssertionError(f"{name} at frame {frame} nearest neighbour: {spacing.nn_dist.get(name)} vs {nn}")
            if not _close(spacing.dist_centroid[name], float(dc), tol):
                raise AssertionError(f"{name} at frame {frame} distance to centroid: {spacing.dist_centroid[name]} vs {dc}")

        r = position_alignment_correlation(metrics, frame)
        if not _close(math.nan if r is None else r, float(metrics.pearson_r[row]), tol):
            raise AssertionError(f"frame {frame} position-alignment correlation: {r} vs {metrics.pearson_r[row]}")


def _transformed(tracks, theta, shift, scale):
    xy = scale * tracks.xy @ rotation_2d(theta).T + shift
    return type(tracks)(tracks.fps, tracks.n_frames, tracks.frame, tracks.individual, tracks.keypoint, xy, tracks.confidence)


def _metric_arrays(metrics):
    return {
        "polarization": metrics.polarization, "mean pair": metrics.mean_pair_dist, "max pair": metrics.max_pair_dist,
        "pearson": metrics.pearson_r, "alignment": metrics.alignment, "speed": metrics.speed,
        "distance to centroid": metrics.dist_centroid, "nearest neighbour": metrics.nn_dist,
    }


@when(u'I compare the herd metrics of {n:d} random herds with randomly rotated, shifted and scaled copies')
def step_invariance_cases(context, n):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for case in range(n):
        entries = _random_herd(int(rng.integers(3, 8)), int(rng.integers(2, 6)), rng)
        tracks = body_track_set([(f, i, h, t) for (f, i), (h, t) in sorted(entries.items())], fps=FPS)
        moved = _transformed(tracks, rng.uniform(-math.pi, math.pi), rng.uniform(-500.0, 500.0, 2), rng.uniform(0.1, 10.0))
        original, copy = _metric_arrays(_metrics(tracks)), _metric_arrays(_metrics(moved))
        for name, values in original.items():
            other = copy[name]
            if not np.array_equal(np.isnan(values), np.isnan(other)):
                raise AssertionError(f"case {case}: {name} is defined for different entries")
            finite = ~np.isnan(values)
            if finite.any():
                worst = max(worst, float(np.max(np.abs(values[finite] - other[finite]))))
    context.invariance_error = worst


@then(u'every compared metric agrees within {tol:g}')
def step_invariance(context, tol):
    if not context.invariance_error <= tol:
        raise AssertionError(f"largest metric difference {context.invariance_error} exceeds {tol}")


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------

@when(u'I write the herd metrics to "{name}"')
def step_write_metrics(context, name):
    context.metrics_dir = os.path.join(context.workdir, name)
    attempt(context, write_metrics, context.metrics, context.bins, context.metrics_dir)


@then(u'the metric file "{name}" has header "{header}" and {n:d} rows')
def step_metric_file(context, name, header, n):
    succeeded(context)
    with open(os.path.join(context.metrics_dir, name), "r", encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    if ",".join(rows[0]) != header:
        raise AssertionError(f"{name} header is {rows[0]}")
    if len(rows) - 1 != n:
        raise AssertionError(f"{name} has {len(rows) - 1} rows, expected {n}")
