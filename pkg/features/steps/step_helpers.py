# features/steps/step_helpers.py
"""
Helpers shared by the step modules: import paths, error capture,
tolerance assertions, table conversion and small synthetic scene presets.
"""

import math
import os
import sys

import numpy as np

# Add the src directory (and the repository root, for generate_html_report) to the Python path
project_root = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
src_path = os.path.join(project_root, 'src')
for path in (project_root, src_path):
    if path not in sys.path:
        sys.path.insert(0, path)

from synth import _merge, scene_config  # noqa: E402
from tracks import WorldTrackSet  # noqa: E402

# A scene small enough for the default (non-@slow) run
SMALL_SCENE = {
    "n_individuals": 6,
    "n_landmarks": 8,
    "n_frames": 120,
    "ground_points": 50,
    "landmark_extent": 20.0,
    "drone": {
        "interpolation": "spline",
        "waypoints": [[0.0, 0.0, 80.0], [20.0, 3.0, 80.0], [40.0, -2.0, 80.0]],
        "yaw_deg": [0.0, 15.0],
        "pitch_deg": [0.0],
    },
    "herd": {"spread": 10.0},
}


def small_scene_config(overrides=None, **top_level):
    return scene_config(_merge(SMALL_SCENE, overrides or {}), **top_level)


def attempt(context, fn, *args, **kwargs):
    """Call fn, keeping either its result or the exception it raised on the context."""
    context.error = None
    try:
        context.result = fn(*args, **kwargs)
    except Exception as e:
        context.error = e
        context.result = None
    return context.result


def succeeded(context):
    error = getattr(context, 'error', None)
    if error is not None:
        raise AssertionError(f"Unexpected {type(error).__name__}: {error}")
    return context.result


def assert_close(actual, expected, tol, what="value"):
    if actual is None or not abs(float(actual) - float(expected)) <= tol:
        raise AssertionError(f"{what}: expected {expected} within {tol}, got {actual}")


def assert_vector_close(actual, expected, tol, what="vector"):
    actual = np.asarray(actual, dtype=float)
    expected = np.asarray(expected, dtype=float)
    if actual.shape != expected.shape:
        raise AssertionError(f"{what}: expected shape {expected.shape}, got {actual.shape}")
    worst = float(np.max(np.abs(actual - expected))) if actual.size else 0.0
    if not worst <= tol:
        raise AssertionError(f"{what}: max deviation {worst} exceeds {tol} (got {actual.tolist()}, expected {expected.tolist()})")


def parse_numbers(text):
    return [float(v) for v in text.replace("(", "").replace(")", "").split(",") if v.strip()]


def track_set_from_table(table, cls=WorldTrackSet, fps=29.97):
    frames, individuals, keypoints, xy, confidence = [], [], [], [], []
    for row in table:
        frames.append(int(row['frame']))
        individuals.append(row['individual_id'])
        keypoints.append(row['keypoint'])
        xy.append((float(row['x']), float(row['y'])))
        conf = row['confidence'] if 'confidence' in row.headings else '1.0'
        confidence.append(math.nan if conf.strip() == '' else float(conf))
    n_frames = max(frames) + 1 if frames else 0
    return cls(fps, n_frames, frames, individuals, keypoints, np.array(xy).reshape(-1, 2), confidence)


def body_track_set(entries, fps=29.97, cls=WorldTrackSet):
    """Track set from (frame, individual, head_xy, tail_xy) tuples, confidence 1."""
    frames, individuals, keypoints, xy = [], [], [], []
    for frame, individual, head, tail in entries:
        for keypoint, point in (("head", head), ("tail", tail)):
            frames.append(frame)
            individuals.append(individual)
            keypoints.append(keypoint)
            xy.append(point)
    n_frames = max(frames) + 1 if frames else 0
    return cls(fps, n_frames, frames, individuals, keypoints, np.array(xy, dtype=float).reshape(-1, 2), np.ones(len(xy)))
