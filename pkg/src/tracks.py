"""
Keypoint track sets (animals and landmarks) and their CSV representation.

A track set is a flat, frame-major table of entries keyed by
(frame, individual_id, keypoint). Image sets hold pixel coordinates; world
sets hold ground-plane chart coordinates and, optionally, the 3D point the
chart coordinate came from.
"""

import csv
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Tuple

import numpy as np
from dotenv import dotenv_values

import config
from errors import IntegrityError, TrackParseError

logger = logging.getLogger(__name__)

KEYPOINTS = ("head", "tail", "point")
HEADER = ["frame", "individual_id", "keypoint", "x", "y", "confidence"]
COLUMNS_3D = ["x3d", "y3d", "z3d"]
METADATA_SUFFIX = ".meta"


def format_float(value: float) -> str:
    return format(float(value), f".{config.FLOAT_DIGITS}g")


@dataclass(frozen=True, eq=False)
class TrackSet:
    """Entries sorted by (frame, individual, keypoint); arrays are read-only."""

    fps: float
    n_frames: int
    frame: np.ndarray
    individual: np.ndarray
    keypoint: np.ndarray
    xy: np.ndarray
    confidence: np.ndarray
    xyz: Optional[np.ndarray] = None

    def __post_init__(self):
        frame = np.asarray(self.frame, dtype=np.int64).reshape(-1)
        individual = np.asarray(self.individual, dtype=str).reshape(-1)
        keypoint = np.asarray(self.keypoint, dtype=str).reshape(-1)
        xy = np.asarray(self.xy, dtype=float).reshape(-1, 2)
        confidence = np.asarray(self.confidence, dtype=float).reshape(-1)
        xyz = None if self.xyz is None else np.asarray(self.xyz, dtype=float).reshape(-1, 3)

        n = len(frame)
        if not (len(individual) == len(keypoint) == len(xy) == len(confidence) == n):
            raise ValueError("track set columns differ in length")
        if xyz is not None and len(xyz) != n:
            raise ValueError("3D coordinates do not match the number of entries")
        if n and (frame.min() < 0 or frame.max() >= self.n_frames):
            raise ValueError(f"frame indices must lie in [0, {self.n_frames})")
        if not np.all(np.isfinite(xy)):
            raise ValueError("track coordinates must be finite")
        present = ~np.isnan(confidence)
        if np.any((confidence[present] < 0) | (confidence[present] > 1)):
            raise ValueError("confidence must lie in [0, 1]")

        order = np.lexsort((keypoint, individual, frame)) if n else np.arange(0)
        frame, individual, keypoint = frame[order], individual[order], keypoint[order]
        xy, confidence = xy[order], confidence[order]
        if xyz is not None:
            xyz = xyz[order]
        if n > 1:
            same = (frame[1:] == frame[:-1]) & (individual[1:] == individual[:-1]) & (keypoint[1:] == keypoint[:-1])
            if np.any(same):
                i = int(np.argmax(same))
                raise ValueError(f"duplicate entry ({frame[i]}, {individual[i]}, {keypoint[i]})")

        for array in (frame, individual, keypoint, xy, confidence) + (() if xyz is None else (xyz,)):
            array.setflags(write=False)
        object.__setattr__(self, "fps", float(self.fps))
        object.__setattr__(self, "n_frames", int(self.n_frames))
        object.__setattr__(self, "frame", frame)
        object.__setattr__(self, "individual", individual)
        object.__setattr__(self, "keypoint", keypoint)
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "confidence", confidence)
        object.__setattr__(self, "xyz", xyz)

    @classmethod
    def empty(cls, fps: float = config.DEFAULT_FPS, n_frames: int = 0):
        return cls(fps, n_frames, [], [], [], np.empty((0, 2)), [])

    def __len__(self) -> int:
        return len(self.frame)

    def individuals(self) -> list:
        return sorted(set(self.individual.tolist()))

    def get(self, frame: int, individual: str, keypoint: str) -> Optional[Tuple[float, float, Optional[float]]]:
        hits = np.flatnonzero((self.frame == frame) & (self.individual == individual) & (self.keypoint == keypoint))
        if len(hits) == 0:
            return None
        i = hits[0]
        conf = self.confidence[i]
        return float(self.xy[i, 0]), float(self.xy[i, 1]), None if math.isnan(conf) else float(conf)

    def track_codes(self) -> Tuple[np.ndarray, list]:
        """Per-entry integer code of its (individual, keypoint) track, and the pair for each code."""
        individuals, individual_code = np.unique(self.individual, return_inverse=True)
        keypoints, keypoint_code = np.unique(self.keypoint, return_inverse=True)
        width = max(len(keypoints), 1)
        combined = individual_code.reshape(-1).astype(np.int64) * width + keypoint_code.reshape(-1)
        unique, codes = np.unique(combined, return_inverse=True)
        pairs = [(str(individuals[u // width]), str(keypoints[u % width])) for u in unique.tolist()]
        return codes.reshape(-1), pairs

    def iter_tracks(self, keypoint: Optional[str] = None) -> Iterator[Tuple[str, str, np.ndarray]]:
        """Yield (individual, keypoint, entry indices in frame order) per track."""
        if len(self) == 0:
            return
        codes, pairs = self.track_codes()
        order = np.argsort(codes, kind="stable")
        bounds = np.searchsorted(codes[order], np.arange(len(pairs) + 1))
        for code, (individual, kp) in enumerate(pairs):
            if keypoint is not None and kp != keypoint:
                continue
            yield individual, kp, order[bounds[code]:bounds[code + 1]]

    def track(self, individual: str, keypoint: str) -> Tuple[np.ndarray, np.ndarray]:
        """Frames and coordinates of one track, in frame order."""
        idx = np.flatnonzero((self.individual == individual) & (self.keypoint == keypoint))
        return self.frame[idx], self.xy[idx]

    def select(self, mask):
        mask = np.asarray(mask)
        return type(self)(
            self.fps, self.n_frames, self.frame[mask], self.individual[mask], self.keypoint[mask],
            self.xy[mask], self.confidence[mask], None if self.xyz is None else self.xyz[mask],
        )

    def equals(self, other: "TrackSet") -> bool:
        if type(self) is not type(other) or len(self) != len(other):
            return False
        if self.fps != other.fps or self.n_frames != other.n_frames:
            return False
        if (self.xyz is None) != (other.xyz is None):
            return False
        same = (
            np.array_equal(self.frame, other.frame)
            and np.array_equal(self.individual, other.individual)
            and np.array_equal(self.keypoint, other.keypoint)
            and np.array_equal(self.xy, other.xy)
            and np.array_equal(self.confidence, other.confidence, equal_nan=True)
        )
        return same and (self.xyz is None or np.array_equal(self.xyz, other.xyz))


class ImageTrackSet(TrackSet):
    """Pixel coordinates of the frame each entry was observed in."""


class WorldTrackSet(TrackSet):
    """Ground-plane chart coordinates, optionally with the 3D point."""


@dataclass
class GapReport:
    """Entries an unwrapping pass could not map, counted per reason."""

    dropped: dict = field(default_factory=dict)
    frames: set = field(default_factory=set)

    def add(self, reason: str, frames) -> None:
        frames = np.asarray(frames, dtype=np.int64).reshape(-1)
        if len(frames) == 0:
            return
        self.dropped[reason] = self.dropped.get(reason, 0) + int(len(frames))
        self.frames.update(int(f) for f in np.unique(frames))

    @property
    def total(self) -> int:
        return sum(self.dropped.values())

    def to_dict(self) -> dict:
        return {
            "dropped_total": self.total,
            "dropped": dict(sorted(self.dropped.items())),
            "frames": sorted(self.frames),
        }


# ---------------------------------------------------------------------------
# Metadata sidecar
# ---------------------------------------------------------------------------

def metadata_path(path) -> Path:
    return Path(str(path) + METADATA_SUFFIX)


def read_metadata(path) -> Tuple[Optional[float], Optional[int]]:
    """Read ``fps`` and ``n_frames`` from the ``<csv>.meta`` sidecar, if any."""
    meta = metadata_path(path)
    if not meta.exists():
        return None, None
    values = dotenv_values(meta)
    try:
        fps = float(values["fps"]) if values.get("fps") else None
        n_frames = int(values["n_frames"]) if values.get("n_frames") else None
    except ValueError as e:
        raise TrackParseError(meta, 0, f"invalid metadata value: {e}")
    if fps is not None and not fps > 0:
        raise TrackParseError(meta, 0, f"fps must be positive, got {fps}")
    return fps, n_frames


def write_metadata(path, fps: float, n_frames: int) -> None:
    with open(metadata_path(path), "w", encoding="utf-8", newline="\n") as f:
        f.write(f"fps={format_float(fps)}\n")
        f.write(f"n_frames={int(n_frames)}\n")


# ---------------------------------------------------------------------------
# CSV reading and writing
# ---------------------------------------------------------------------------

def _parse_float(path, line, name, text) -> float:
    try:
        value = float(text)
    except ValueError:
        raise TrackParseError(path, line, f"{name} is not a number: {text!r}")
    if not math.isfinite(value):
        raise TrackParseError(path, line, f"{name} is not finite: {text!r}")
    return value


def _read(path, cls):
    path = Path(path)
    frames, individuals, keypoints, xys, confs, xyzs = [], [], [], [], [], []
    seen = {}
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:len(HEADER)]] != HEADER:
            raise TrackParseError(path, 1, f"expected header {','.join(HEADER)}")
        header = [h.strip() for h in header]
        has_3d = header[len(HEADER):] == COLUMNS_3D
        if len(header) != len(HEADER) and not has_3d:
            raise TrackParseError(path, 1, f"unexpected columns {header[len(HEADER):]}")
        width = len(header)

        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != width:
                raise TrackParseError(path, line, f"expected {width} fields, got {len(row)}")
            try:
                frame = int(row[0])
            except ValueError:
                raise TrackParseError(path, line, f"frame is not an integer: {row[0]!r}")
            if frame < 0:
                raise TrackParseError(path, line, f"frame must be non-negative, got {frame}")
            individual = row[1].strip()
            if not individual:
                raise TrackParseError(path, line, "individual_id is empty")
            keypoint = row[2].strip()
            if keypoint not in KEYPOINTS:
                raise TrackParseError(path, line, f"keypoint must be one of {'|'.join(KEYPOINTS)}, got {keypoint!r}")
            x = _parse_float(path, line, "x", row[3])
            y = _parse_float(path, line, "y", row[4])
            if row[5].strip() == "":
                conf = math.nan
            else:
                conf = _parse_float(path, line, "confidence", row[5])
                if not 0.0 <= conf <= 1.0:
                    raise TrackParseError(path, line, f"confidence outside [0, 1]: {conf}")

            key = (frame, individual, keypoint)
            if key in seen:
                raise IntegrityError(path, line, f"duplicate entry {key} (first seen on line {seen[key]})")
            seen[key] = line

            frames.append(frame)
            individuals.append(individual)
            keypoints.append(keypoint)
            xys.append((x, y))
            confs.append(conf)
            if has_3d:
                xyzs.append(tuple(_parse_float(path, line, name, text) for name, text in zip(COLUMNS_3D, row[6:9])))

    fps, n_frames = read_metadata(path)
    span = (max(frames) + 1) if frames else 0
    if n_frames is None:
        n_frames = span
    elif n_frames < span:
        raise TrackParseError(metadata_path(path), 0, f"n_frames={n_frames} but the tracks reach frame {span - 1}")
    track_set = cls(
        fps if fps is not None else config.DEFAULT_FPS, n_frames,
        frames, individuals, keypoints, np.array(xys, dtype=float).reshape(-1, 2), confs,
        np.array(xyzs, dtype=float).reshape(-1, 3) if has_3d else None,
    )
    logger.info(f"Loaded {len(track_set)} entries from {path} ({len(track_set.individuals())} individuals)")
    return track_set


def read_tracks(path) -> ImageTrackSet:
    return _read(path, ImageTrackSet)


def read_world_tracks(path) -> WorldTrackSet:
    return _read(path, WorldTrackSet)


def write_tracks(track_set: TrackSet, path) -> None:
    """Write the CSV (9 significant digits) and its metadata sidecar."""
    header = HEADER + (COLUMNS_3D if track_set.xyz is not None else [])
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for i in range(len(track_set)):
            conf = track_set.confidence[i]
            row = [
                int(track_set.frame[i]), track_set.individual[i], track_set.keypoint[i],
                format_float(track_set.xy[i, 0]), format_float(track_set.xy[i, 1]),
                "" if math.isnan(conf) else format_float(conf),
            ]
            if track_set.xyz is not None:
                row.extend(format_float(v) for v in track_set.xyz[i])
            writer.writerow(row)
    write_metadata(path, track_set.fps, track_set.n_frames)
    logger.info(f"Wrote {len(track_set)} entries to {os.fspath(path)}")


# ---------------------------------------------------------------------------
# Landmark quality filter
# ---------------------------------------------------------------------------

def filter_landmark_tracks(
    track_set: TrackSet,
    min_samples: int = config.LANDMARK_MIN_SAMPLES,
    max_jump: float = config.LANDMARK_MAX_JUMP,
):
    """Drop whole tracks with <= min_samples points or any frame-to-frame jump > max_jump."""
    keep = np.zeros(len(track_set), dtype=bool)
    short, jumpy = 0, 0
    for individual, keypoint, idx in track_set.iter_tracks():
        if len(idx) <= min_samples:
            short += 1
            continue
        frames = track_set.frame[idx]
        steps = np.linalg.norm(np.diff(track_set.xy[idx], axis=0), axis=1)
        consecutive = np.diff(frames) == 1
        if np.any(steps[consecutive] > max_jump):
            jumpy += 1
            continue
        keep[idx] = True
    if short or jumpy:
        logger.info(f"Landmark filter dropped {short} short track(s) and {jumpy} track(s) with jumps > {max_jump} px")
    return track_set.select(keep)
