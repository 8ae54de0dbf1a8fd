"""
Landmark dispersion: how far the unwrapped trajectory of a static landmark
wanders around its own centroid, in median-body-length units.
"""

import csv
import logging
import math
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Tuple

import numpy as np

from errors import DispersionError, TrackParseError
from tracks import WorldTrackSet, format_float

logger = logging.getLogger(__name__)

REPORT_HEADER = ["tree_id", "mean", "max", "min", "std", "samples"]


@dataclass(frozen=True)
class DispersionRow:
    landmark_id: str
    mean: float
    max: float
    min: float
    std: float
    samples: int

    def __post_init__(self):
        if self.samples < 1:
            raise DispersionError(f"landmark {self.landmark_id}: samples must be >= 1")
        if self.std < 0:
            raise DispersionError(f"landmark {self.landmark_id}: negative std")


@dataclass(frozen=True)
class DispersionReport:
    rows: Tuple[DispersionRow, ...]
    weighted_mean: float
    body_length: float

    def to_dict(self) -> dict:
        return {
            "weighted_mean": self.weighted_mean,
            "body_length": self.body_length,
            "rows": [asdict(row) for row in self.rows],
        }


def _natural_key(landmark_id: str):
    return [(0, int(part), "") if part.isdigit() else (1, 0, part) for part in re.split(r"(\d+)", landmark_id) if part]


def dispersion_per_track(points) -> Tuple[float, float, float, float, int]:
    """(mean, max, min, std, n) of point distances to the track centroid, raw units."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(points) == 0:
        raise DispersionError("cannot compute the dispersion of an empty track")
    distances = np.linalg.norm(points - points.mean(axis=0), axis=1)
    return (
        float(distances.mean()), float(distances.max()), float(distances.min()),
        float(distances.std()), int(len(points)),
    )


def summarize_rows(rows, body_length: float = 1.0) -> DispersionReport:
    """Sample-weighted mean of per-landmark means; rows must already be normalized."""
    rows = tuple(sorted(rows, key=lambda r: _natural_key(r.landmark_id)))
    if not rows:
        raise DispersionError("no landmark rows to summarize")
    samples = np.array([r.samples for r in rows], dtype=float)
    means = np.array([r.mean for r in rows], dtype=float)
    return DispersionReport(rows, float(np.sum(means * samples) / np.sum(samples)), float(body_length))


def weighted_dispersion(tracks: WorldTrackSet, body_length: float) -> DispersionReport:
    if not (body_length > 0 and math.isfinite(body_length)):
        raise DispersionError(f"body length must be positive, got {body_length}")
    rows: List[DispersionRow] = []
    multi_keypoint = len(set(tracks.keypoint.tolist())) > 1
    for individual, keypoint, idx in tracks.iter_tracks():
        mean, dmax, dmin, std, n = dispersion_per_track(tracks.xy[idx])
        landmark_id = f"{individual}/{keypoint}" if multi_keypoint else individual
        rows.append(DispersionRow(
            landmark_id, mean / body_length, dmax / body_length, dmin / body_length, std / body_length, n,
        ))
    if not rows:
        raise DispersionError("no landmark tracks to evaluate")
    report = summarize_rows(rows, body_length)
    logger.info(f"Weighted dispersion over {len(rows)} landmarks: {report.weighted_mean:.6g} BL")
    return report


def read_dispersion_table(path) -> List[DispersionRow]:
    """Read a per-landmark table; a blank line or ``key=value`` row ends the table."""
    path = Path(path)
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != REPORT_HEADER:
            raise TrackParseError(path, 1, f"expected header {','.join(REPORT_HEADER)}")
        for row in reader:
            if not row or (len(row) == 1 and "=" in row[0]):
                break
            if len(row) != len(REPORT_HEADER):
                raise TrackParseError(path, reader.line_num, f"expected {len(REPORT_HEADER)} fields, got {len(row)}")
            try:
                mean, dmax, dmin, std = (float(v) for v in row[1:5])
                samples = int(row[5])
            except ValueError as e:
                raise TrackParseError(path, reader.line_num, str(e))
            rows.append(DispersionRow(row[0].strip(), mean, dmax, dmin, std, samples))
    return rows


def write_report(report: DispersionReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(REPORT_HEADER)
        for row in report.rows:
            writer.writerow([row.landmark_id] + [format_float(v) for v in (row.mean, row.max, row.min, row.std)] + [row.samples])
        f.write("\n")
        f.write(f"weighted_mean={format_float(report.weighted_mean)}\n")
        f.write(f"body_length={format_float(report.body_length)}\n")
    logger.info(f"Wrote dispersion report for {len(report.rows)} landmarks to {path}")
