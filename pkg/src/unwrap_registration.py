"""
Baseline unwrapping by composing frame-to-frame 2D rigid transforms.

A TransformChain holds, for every frame f >= 1, the transform taking frame-f
coordinates to frame-(f-1) coordinates. Chains are expressed in the axis
convention Q: they act on ``Q · x_image``. Unwrapping an image point observed
at frame f computes

    X_world = Q^T · T_{f,0} · (Q · X_image)

which lands in frame-0 image coordinates (pixels).
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

import config
from errors import EmptyChainError, GapError, IntegrityError, TrackParseError
from geometry import Rigid2D, iter_chain_to_frame0, rigid_fit_2d
from parallel import map_chunks
from tracks import GapReport, ImageTrackSet, WorldTrackSet, format_float

logger = logging.getLogger(__name__)

CHAIN_HEADER = ["frame", "theta_rad", "tx", "ty"]

AXIS_CONVENTIONS = {
    "yflip": np.array([[1.0, 0.0], [0.0, -1.0]]),
    "identity": np.eye(2),
}


@dataclass(frozen=True, eq=False)
class AxisConvention:
    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(2, 2)
        if not np.allclose(q.T @ q, np.eye(2), rtol=0.0, atol=1e-12):
            raise ValueError("axis convention matrix must be orthogonal")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @classmethod
    def named(cls, name: str) -> "AxisConvention":
        try:
            return cls(AXIS_CONVENTIONS[name])
        except KeyError:
            raise ValueError(f"unknown axis convention {name!r}; expected one of {sorted(AXIS_CONVENTIONS)}")


DEFAULT_Q = AxisConvention.named("yflip")


@dataclass(frozen=True)
class TransformChain:
    """Frame f (>= 1) -> Rigid2D taking frame-f coordinates to frame-(f-1)."""

    transforms: Dict[int, Rigid2D] = field(default_factory=dict)
    gaps: Tuple[int, ...] = ()

    def __len__(self) -> int:
        return len(self.transforms)

    def get(self, frame: int):
        return self.transforms.get(frame)

    def cumulative(self, last: int) -> Tuple[np.ndarray, np.ndarray, int]:
        """(theta, t) arrays of T_{f,0} for f = 0..covered, and the covered frame.

        Stops at the first missing entry; frames past it are not reachable.
        """
        thetas, translations = [], []
        covered = -1
        try:
            for f, transform in iter_chain_to_frame0(self.transforms, last):
                thetas.append(transform.theta)
                translations.append(transform.t)
                covered = f
        except GapError as e:
            logger.warning(f"Transform chain stops at frame {e.frame}; later frames cannot be unwrapped")
        return np.array(thetas), np.array(translations, dtype=float).reshape(-1, 2), covered


def _find_gaps(frames) -> Tuple[int, ...]:
    if not frames:
        return ()
    present = set(frames)
    return tuple(f for f in range(1, max(frames)) if f not in present)


def load_chain(path) -> TransformChain:
    """Read a chain CSV (``frame,theta_rad,tx,ty``, frame >= 1)."""
    path = Path(path)
    transforms, lines = {}, {}
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != CHAIN_HEADER:
            raise TrackParseError(path, 1, f"expected header {','.join(CHAIN_HEADER)}")
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(CHAIN_HEADER):
                raise TrackParseError(path, line, f"expected {len(CHAIN_HEADER)} fields, got {len(row)}")
            try:
                frame = int(row[0])
                theta, tx, ty = float(row[1]), float(row[2]), float(row[3])
            except ValueError as e:
                raise TrackParseError(path, line, str(e))
            if frame < 1:
                raise TrackParseError(path, line, f"chain frames start at 1, got {frame}")
            if not np.all(np.isfinite([theta, tx, ty])):
                raise TrackParseError(path, line, "non-finite transform value")
            if frame in transforms:
                raise IntegrityError(path, line, f"duplicate chain frame {frame} (first on line {lines[frame]})")
            transforms[frame] = Rigid2D(theta, (tx, ty))
            lines[frame] = line
    gaps = _find_gaps(list(transforms))
    if gaps:
        logger.warning(f"Chain {path} has {len(gaps)} missing frame(s), first at {gaps[0]}")
    logger.info(f"Loaded {len(transforms)} chain entries from {path}")
    return TransformChain(transforms, gaps)


def write_chain(chain: TransformChain, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CHAIN_HEADER)
        for frame in sorted(chain.transforms):
            transform = chain.transforms[frame]
            writer.writerow([frame, format_float(transform.theta), format_float(transform.t[0]), format_float(transform.t[1])])


def _frame_slices(track_set) -> Dict[int, slice]:
    frames, starts = np.unique(track_set.frame, return_index=True)
    ends = np.append(starts[1:], len(track_set))
    return {int(f): slice(int(a), int(b)) for f, a, b in zip(frames, starts, ends)}


def estimate_chain_from_landmarks(
    landmarks: ImageTrackSet,
    min_pairs: int = config.MIN_CHAIN_PAIRS,
    q: AxisConvention = DEFAULT_Q,
) -> TransformChain:
    """Fit frame-f -> frame-(f-1) rigid transforms on co-visible static landmarks."""
    by_frame = _frame_slices(landmarks)
    keys, _ = landmarks.track_codes()
    points = landmarks.xy @ q.q.T
    last = max(by_frame) if by_frame else 0

    transforms, gaps = {}, []
    for f in range(1, last + 1):
        current, previous = by_frame.get(f), by_frame.get(f - 1)
        if current is None or previous is None:
            gaps.append(f)
            continue
        _, i_cur, i_prev = np.intersect1d(keys[current], keys[previous], assume_unique=True, return_indices=True)
        if len(i_cur) < max(min_pairs, 2):
            gaps.append(f)
            continue
        transforms[f] = rigid_fit_2d(points[current][i_cur], points[previous][i_prev])

    if not transforms:
        raise EmptyChainError("no pair of consecutive frames shares enough landmarks to fit a transform")
    if gaps:
        logger.warning(f"Landmark chain has {len(gaps)} gap(s) (fewer than {min_pairs} co-visible landmarks)")
    logger.info(f"Estimated {len(transforms)} chain entries from {len(landmarks.individuals())} landmarks")
    return TransformChain(transforms, tuple(gaps))


def unwrap_registration(
    tracks: ImageTrackSet,
    chain: TransformChain,
    q: AxisConvention = DEFAULT_Q,
    threads: int = config.THREADS,
) -> Tuple[WorldTrackSet, GapReport]:
    """Map every entry into frame-0 coordinates; unreachable frames are dropped and reported."""
    report = GapReport()
    last = int(tracks.frame.max()) if len(tracks) else 0
    thetas, translations, covered = chain.cumulative(last)

    reachable = tracks.frame <= covered
    report.add("chain_gap", tracks.frame[~reachable])
    kept = tracks.select(reachable)

    qm = q.q
    frame = kept.frame
    cos_f, sin_f = np.cos(thetas), np.sin(thetas)

    def unwrap_chunk(rows: slice) -> np.ndarray:
        xy = kept.xy[rows]
        f = frame[rows]
        # Q · x
        ax = qm[0, 0] * xy[:, 0] + qm[0, 1] * xy[:, 1]
        ay = qm[1, 0] * xy[:, 0] + qm[1, 1] * xy[:, 1]
        # T_{f,0}
        c, s = cos_f[f], sin_f[f]
        bx = c * ax - s * ay + translations[f, 0]
        by = s * ax + c * ay + translations[f, 1]
        # Q^T · (...)
        return np.stack([qm[0, 0] * bx + qm[1, 0] * by, qm[0, 1] * bx + qm[1, 1] * by], axis=-1)

    starts = np.flatnonzero(np.diff(frame, prepend=-1)) if len(frame) else None
    parts = map_chunks(unwrap_chunk, len(kept), threads, boundaries=starts)
    world_xy = np.concatenate(parts) if parts else np.empty((0, 2))

    if report.total:
        logger.warning(f"Dropped {report.total} entries past the last reachable chain frame {covered}")
    world = WorldTrackSet(kept.fps, kept.n_frames, kept.frame, kept.individual, kept.keypoint, world_xy, kept.confidence)
    return world, report
