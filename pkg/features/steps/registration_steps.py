# features/steps/registration_steps.py
"""
Step definitions for unwrap_registration.feature
"""

import math
import os

import numpy as np
from behave import given, then, when

from step_helpers import assert_close, assert_vector_close, attempt, parse_numbers, succeeded, track_set_from_table

from geometry import Rigid2D, rotation_2d, wrap_angle
from landmarks import dispersion_per_track, weighted_dispersion
from synth import perturb_chain
from tracks import ImageTrackSet
from unwrap_registration import (
    AxisConvention,
    TransformChain,
    estimate_chain_from_landmarks,
    load_chain,
    unwrap_registration,
    write_chain,
)


def _workfile(context, name):
    return os.path.join(context.workdir, name)


def _write_chain_rows(path, frames):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("frame,theta_rad,tx,ty\n")
        for frame in frames:
            f.write(f"{frame},0,0,0\n")


# ---------------------------------------------------------------------------
# Chain files
# ---------------------------------------------------------------------------

@given(u'a chain file "{name}" with identity entries for frames {first:d} to {last:d}')
def step_chain_file(context, name, first, last):
    _write_chain_rows(_workfile(context, name), range(first, last + 1))


@given(u'a chain file "{name}" with identity entries for frames {first:d} to {last:d} except frame {gap:d}')
def step_chain_file_gap(context, name, first, last, gap):
    _write_chain_rows(_workfile(context, name), [f for f in range(first, last + 1) if f != gap])


@given(u'a chain file "{name}" with content')
def step_chain_file_content(context, name):
    with open(_workfile(context, name), "w", encoding="utf-8", newline="\n") as f:
        f.write(context.text.strip("\n") + "\n")


@given(u'I load the chain "{name}"')
@when(u'I load the chain "{name}"')
def step_load_chain(context, name):
    attempt(context, load_chain, _workfile(context, name))
    if context.error is None:
        context.chain = context.result


@then(u'the chain has {n:d} entries and no gaps')
def step_chain_no_gaps(context, n):
    chain = context.chain
    if len(chain) != n or chain.gaps:
        raise AssertionError(f"expected {n} entries and no gaps, got {len(chain)} entries and gaps {chain.gaps}")


@then(u'the chain has {n:d} entries and gaps at frames {frames}')
def step_chain_gaps(context, n, frames):
    chain = context.chain
    expected = tuple(int(f) for f in parse_numbers(frames))
    if len(chain) != n or tuple(chain.gaps) != expected:
        raise AssertionError(f"expected {n} entries and gaps {expected}, got {len(chain)} entries and gaps {chain.gaps}")


@given(u'a random chain of {n:d} frames from seed {seed:d}')
def step_random_chain_object(context, n, seed):
    rng = np.random.default_rng(seed)
    context.chain = TransformChain({
        f: Rigid2D(rng.uniform(-0.1, 0.1), tuple(rng.uniform(-20.0, 20.0, 2))) for f in range(1, n + 1)
    })


@when(u'I write the chain to "{name}" and load it back')
def step_write_load_chain(context, name):
    context.written_chain = context.chain
    path = _workfile(context, name)
    write_chain(context.chain, path)
    attempt(context, load_chain, path)


@then(u'the loaded chain equals the written one within {tol:g}')
def step_chain_round_trip(context, tol):
    loaded, written = succeeded(context), context.written_chain
    if sorted(loaded.transforms) != sorted(written.transforms):
        raise AssertionError("loaded chain covers different frames")
    for f, transform in written.transforms.items():
        if not loaded.get(f).is_close(transform, tol):
            raise AssertionError(f"frame {f}: {loaded.get(f)} differs from {transform}")


# ---------------------------------------------------------------------------
# Unwrapping
# ---------------------------------------------------------------------------

@given(u'an identity chain for frames 1 to {n:d}')
def step_identity_chain(context, n):
    context.chain = TransformChain({f: Rigid2D.identity() for f in range(1, n + 1)})


@given(u'a chain whose frame 1 entry rotates by {deg:g} degrees')
def step_single_rotation_chain(context, deg):
    context.chain = TransformChain({1: Rigid2D(math.radians(deg), (0.0, 0.0))})


@given(u'the image tracks')
def step_image_tracks(context):
    context.image_tracks = track_set_from_table(context.table, cls=ImageTrackSet)


@given(u'{n:d} random image tracks over {frames:d} frames from seed {seed:d}')
def step_random_image_tracks(context, n, frames, seed):
    rng = np.random.default_rng(seed)
    index = np.arange(n)
    individual_index = index // (2 * frames)
    context.image_tracks = ImageTrackSet(
        29.97, frames, index % frames,
        [f"ind{i + 1:02d}" for i in individual_index],
        ["head" if (i // frames) % 2 == 0 else "tail" for i in index],
        rng.uniform((0.0, 0.0), (1920.0, 1080.0), (n, 2)),
        rng.uniform(0.5, 1.0, n),
    )


def _unwrap(tracks, chain, convention):
    return unwrap_registration(tracks, chain, AxisConvention.named(convention))


@when(u'I unwrap the tracks through the chain with the "{convention}" axis convention')
@when(u'I unwrap the tracks through the loaded chain with the "{convention}" axis convention')
def step_unwrap(context, convention):
    attempt(context, _unwrap, context.image_tracks, context.chain, convention)


@then(u'every unwrapped point equals its image point within {tol:g}')
def step_unwrap_unchanged(context, tol):
    world, _ = succeeded(context)
    image = context.image_tracks
    if len(world) != len(image):
        raise AssertionError(f"expected {len(image)} entries, got {len(world)}")
    assert_vector_close(world.xy, image.xy, tol, "unwrapped points")


@then(u'no entries are dropped')
def step_nothing_dropped(context):
    _, report = succeeded(context)
    if report.total:
        raise AssertionError(f"unexpected drops: {report.to_dict()}")


@then(u'the unwrapped entry ({frame:d}, "{individual}", "{keypoint}") is at ({x:g}, {y:g}) within {tol:g}')
def step_unwrapped_entry(context, frame, individual, keypoint, x, y, tol):
    world, _ = succeeded(context)
    found = world.get(frame, individual, keypoint)
    if found is None:
        raise AssertionError(f"entry ({frame}, {individual}, {keypoint}) is missing")
    assert_vector_close(found[:2], (x, y), tol, "unwrapped entry")


@then(u'only entries before frame {frame:d} are unwrapped')
def step_only_before(context, frame):
    world, _ = succeeded(context)
    expected = int(np.count_nonzero(context.image_tracks.frame < frame))
    if len(world) != expected or (len(world) and world.frame.max() >= frame):
        raise AssertionError(f"expected {expected} entries before frame {frame}, got {len(world)}")


@then(u'the entries from frame {frame:d} on are dropped for "{reason}"')
def step_dropped_from(context, frame, reason):
    _, report = succeeded(context)
    later = context.image_tracks.frame >= frame
    expected = int(np.count_nonzero(later))
    if report.dropped != {reason: expected}:
        raise AssertionError(f"expected {expected} drops for {reason}, got {report.dropped}")
    if sorted(report.frames) != sorted(set(context.image_tracks.frame[later].tolist())):
        raise AssertionError(f"gap report frames {sorted(report.frames)} do not match")


# ---------------------------------------------------------------------------
# Chain estimation
# ---------------------------------------------------------------------------

@given(u'{n:d} landmarks seen in frames 0 to {last:d} rotating by {deg:g} degrees per frame about the origin')
def step_rotating_landmarks(context, n, last, deg):
    rng = np.random.default_rng(0)
    base = rng.uniform(-100.0, 100.0, (n, 2))
    context.landmark_rows = {
        (f, f"lm{i + 1:02d}"): rotation_2d(math.radians(deg) * f) @ base[i]
        for f in range(last + 1) for i in range(n)
    }


@given(u'landmark "{landmark}" is not seen in frame {frame:d}')
def step_landmark_hidden(context, landmark, frame):
    del context.landmark_rows[(frame, landmark)]


@given(u'landmark "{landmark}" is tracked as individual "{individual}" with keypoint "{keypoint}"')
def step_landmark_renamed(context, landmark, individual, keypoint):
    if not hasattr(context, 'landmark_names'):
        context.landmark_names = {}
    context.landmark_names[landmark] = (individual, keypoint)


def _landmark_tracks(rows, names=None) -> ImageTrackSet:
    keys = sorted(rows)
    names = [(names or {}).get(i, (i, "point")) for _, i in keys]
    return ImageTrackSet(
        29.97, max(f for f, _ in keys) + 1, [f for f, _ in keys], [n[0] for n in names], [n[1] for n in names],
        np.array([rows[k] for k in keys]), np.ones(len(keys)),
    )


@when(u'I estimate the chain from the landmarks requiring {min_pairs:d} shared landmarks with the "{convention}" axis convention')
def step_estimate_chain(context, min_pairs, convention):
    attempt(context, estimate_chain_from_landmarks, _landmark_tracks(context.landmark_rows, getattr(context, 'landmark_names', None)),
            min_pairs, AxisConvention.named(convention))
    if context.error is None:
        context.chain = context.result


@then(u'every chain entry has angle {deg:g} degrees and translation ({tx:g}, {ty:g}) within {tol:g}')
def step_every_entry(context, deg, tx, ty, tol):
    succeeded(context)
    for f, transform in context.chain.transforms.items():
        assert_close(wrap_angle(transform.theta - math.radians(deg)), 0.0, tol, f"frame {f} angle")
        assert_vector_close(transform.t, (tx, ty), tol, f"frame {f} translation")


# ---------------------------------------------------------------------------
# Synthetic scenes
# ---------------------------------------------------------------------------

@when(u'I unwrap the scene landmarks through the scene chain')
def step_unwrap_scene_chain(context):
    attempt(context, unwrap_registration, context.scene.image_landmarks, context.scene.chain)


@when(u'I estimate the chain from the scene landmarks')
def step_estimate_scene_chain(context):
    context.estimated_chain = estimate_chain_from_landmarks(context.scene.image_landmarks)


@when(u'I unwrap the scene landmarks through the estimated chain')
def step_unwrap_estimated_chain(context):
    attempt(context, unwrap_registration, context.scene.image_landmarks, context.estimated_chain)


@then(u'every unwrapped landmark track stays within {tol:g} of its centroid')
def step_landmarks_still(context, tol):
    world, _ = succeeded(context)
    if len(world) == 0:
        raise AssertionError("no landmark entries were unwrapped")
    for individual, _, idx in world.iter_tracks():
        _, largest, _, _, _ = dispersion_per_track(world.xy[idx])
        if not largest <= tol:
            raise AssertionError(f"landmark {individual} moves up to {largest} from its centroid")


@when(u'I perturb an identity chain of {n:d} frames with {sigma:g} degrees of angle noise for {seeds:d} seeds')
def step_perturb_identity(context, n, sigma, seeds):
    identity = TransformChain({f: Rigid2D.identity() for f in range(1, n + 1)})
    runs = []
    for seed in range(seeds):
        noisy = perturb_chain(identity, math.radians(sigma), 0.0, np.random.default_rng(seed))
        thetas, _, covered = noisy.cumulative(n)
        if covered != n:
            raise AssertionError(f"perturbed chain stops at frame {covered}")
        runs.append(thetas)
    context.composed_angles = np.array(runs)


@then(u'the root mean square angle at frames {frames} is {sigma:g} degrees times the square root of the frame within {pct:g} percent')
def step_random_walk(context, frames, sigma, pct):
    for f in (int(v) for v in parse_numbers(frames)):
        rms = math.sqrt(float(np.mean(context.composed_angles[:, f] ** 2)))
        expected = math.radians(sigma) * math.sqrt(f)
        if not abs(rms / expected - 1.0) <= pct / 100.0:
            raise AssertionError(f"frame {f}: RMS angle {rms} vs expected {expected}")


def _static_landmarks(n_landmarks, n_frames, rng) -> ImageTrackSet:
    base = rng.uniform((-300.0, -200.0), (300.0, 200.0), (n_landmarks, 2))
    frames = np.repeat(np.arange(n_frames), n_landmarks)
    ids = np.tile([f"lm{i + 1:02d}" for i in range(n_landmarks)], n_frames)
    return ImageTrackSet(29.97, n_frames, frames, ids, ["point"] * len(frames),
                         np.tile(base, (n_frames, 1)), np.ones(len(frames)))


@when(u'I unwrap {k:d} static landmarks through identity chains with {sigma:g} degrees and {sigma_t:g} pixels of noise over {lengths} frames for {seeds:d} seeds')
def step_noisy_chain_sweep(context, k, sigma, sigma_t, lengths, seeds):
    context.chain_lengths = [int(n) for n in parse_numbers(lengths)]
    means = []
    for n in context.chain_lengths:
        values = []
        for seed in range(seeds):
            rng = np.random.default_rng(seed)
            tracks = _static_landmarks(k, n, rng)
            identity = TransformChain({f: Rigid2D.identity() for f in range(1, n)})
            noisy = perturb_chain(identity, math.radians(sigma), sigma_t, rng)
            world, _ = unwrap_registration(tracks, noisy)
            values.append(weighted_dispersion(world, 50.0).weighted_mean)
        means.append(float(np.mean(values)))
    context.length_means = means


@then(u'the mean landmark dispersion grows with the number of frames')
def step_dispersion_grows(context):
    pairs = list(zip(context.chain_lengths, context.length_means))
    for (n0, m0), (n1, m1) in zip(pairs, pairs[1:]):
        if not m1 > m0:
            raise AssertionError(f"dispersion {m1} at {n1} frames is not above {m0} at {n0} frames")
