"""
Herd behaviour metrics computed from unwrapped head/tail tracks.

Pipeline: clean_tracks -> body_vectors -> compute_herd_metrics ->
bin_speed_polarization -> write_metrics. Distances and speeds are reported in
body lengths (BL), which makes every metric independent of the world scale.
"""

import csv
import logging
import math
import os
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np
from scipy.signal import savgol_filter
from scipy.spatial.distance import pdist, squareform

import config
from errors import BodyLengthUndefinedError
from parallel import map_chunks
from tracks import WorldTrackSet, format_float

logger = logging.getLogger(__name__)

BODY_KEYPOINTS = ("head", "tail")
ZERO_MEAN_TOLERANCE = 1e-12
ZERO_VARIANCE_TOLERANCE = 1e-12
PEARSON_MIN_INDIVIDUALS = 3

HERD_FILE = "herd_metrics.csv"
INDIVIDUAL_FILE = "individual_metrics.csv"
BINNED_FILE = "binned_metrics.csv"
BINNED_SMOOTHED_FILE = "binned_smoothed.csv"

HERD_HEADER = ["frame", "polarization", "mean_dir_x", "mean_dir_y", "mean_pair_dist", "max_pair_dist", "pearson_r"]
INDIVIDUAL_HEADER = ["frame", "individual_id", "alignment", "speed_bl_s", "dist_centroid_bl", "nn_dist_bl"]
BINNED_HEADER = ["bin", "start_frame", "mean_speed_bl_s", "mean_polarization"]


class Removal(NamedTuple):
    frame: int
    individual: str
    keypoint: str
    reason: str


@dataclass(frozen=True, eq=False)
class CleanedTracks:
    tracks: WorldTrackSet
    body_length: float
    removals: Tuple[Removal, ...] = ()

    def removal_counts(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for removal in self.removals:
            counts[removal.reason] = counts.get(removal.reason, 0) + 1
        return counts


@dataclass(frozen=True, eq=False)
class BodyVectorSeries:
    """Tail-to-head vectors sorted by (frame, individual); absent entries are simply missing."""

    frame: np.ndarray
    individual: np.ndarray
    vector: np.ndarray
    unit: np.ndarray
    removals: Tuple[Removal, ...] = ()

    def __len__(self) -> int:
        return len(self.frame)


@dataclass(frozen=True, eq=False)
class FramePolarization:
    frames: np.ndarray
    polarization: np.ndarray
    mean_vector: np.ndarray
    counts: np.ndarray


@dataclass(frozen=True, eq=False)
class CentroidSeries:
    frame: np.ndarray
    individual: np.ndarray
    centroid: np.ndarray
    speed: np.ndarray
    body_length: float


@dataclass(frozen=True)
class SpacingMetrics:
    mean_pair_dist: Optional[float]
    max_pair_dist: Optional[float]
    nn_dist: Dict[str, float]
    dist_centroid: Dict[str, float]


@dataclass(frozen=True, eq=False)
class HerdMetrics:
    fps: float
    body_length: float
    # per frame
    frames: np.ndarray
    polarization: np.ndarray
    mean_direction: np.ndarray
    mean_pair_dist: np.ndarray
    max_pair_dist: np.ndarray
    pearson_r: np.ndarray
    # per (frame, individual)
    entry_frame: np.ndarray
    entry_individual: np.ndarray
    alignment: np.ndarray
    speed: np.ndarray
    dist_centroid: np.ndarray
    nn_dist: np.ndarray


@dataclass(frozen=True)
class SpeedPolarizationBin:
    index: int
    start_frame: int
    mean_speed: float
    mean_polarization: float
    frames: int


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _group_starts(sorted_frames: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Unique frames of a frame-sorted array and the index where each starts."""
    if len(sorted_frames) == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    starts = np.flatnonzero(np.diff(sorted_frames, prepend=sorted_frames[0] - 1))
    return sorted_frames[starts], starts


def _head_tail_pairs(track_set) -> Tuple[np.ndarray, np.ndarray]:
    """Row indices of matching head and tail entries (same frame and individual)."""
    if len(track_set) < 2:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    f, ind, kp = track_set.frame, track_set.individual, track_set.keypoint
    # rows are sorted by (frame, individual, keypoint) and "head" < "tail"
    paired = (kp[:-1] == "head") & (kp[1:] == "tail") & (f[:-1] == f[1:]) & (ind[:-1] == ind[1:])
    head = np.flatnonzero(paired)
    return head, head + 1


def _removals(track_set, mask, reason) -> List[Removal]:
    return [
        Removal(int(track_set.frame[i]), str(track_set.individual[i]), str(track_set.keypoint[i]), reason)
        for i in np.flatnonzero(mask)
    ]


def _entry_keys(frames, individuals, codes: Dict[str, int]) -> np.ndarray:
    ind = np.array([codes[i] for i in individuals.tolist()], dtype=np.int64)
    return np.asarray(frames, dtype=np.int64) * len(codes) + ind


def pearson_r(x, y) -> Optional[float]:
    """Pearson product-moment correlation; None below 3 samples or with zero variance."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < PEARSON_MIN_INDIVIDUALS:
        return None
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    scale_x = max(1.0, float(np.max(np.abs(x))))
    scale_y = max(1.0, float(np.max(np.abs(y))))
    if math.sqrt(sxx / len(x)) <= ZERO_VARIANCE_TOLERANCE * scale_x or math.sqrt(syy / len(y)) <= ZERO_VARIANCE_TOLERANCE * scale_y:
        return None
    return float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))


# ---------------------------------------------------------------------------
# Cleaning and body vectors
# ---------------------------------------------------------------------------

def _median_body_length(body: WorldTrackSet) -> float:
    head, tail = _head_tail_pairs(body)
    if len(head) == 0:
        raise BodyLengthUndefinedError("no frame has both a head and a tail point after filtering")
    body_length = float(np.median(np.linalg.norm(body.xy[head] - body.xy[tail], axis=1)))
    if not body_length > 0:
        raise BodyLengthUndefinedError("median head-tail distance is zero")
    return body_length


def _jumps(body: WorldTrackSet, limit: float) -> np.ndarray:
    jumped = np.zeros(len(body), dtype=bool)
    for _, _, idx in body.iter_tracks():
        frames, xy = body.frame[idx], body.xy[idx]
        steps = np.linalg.norm(np.diff(xy, axis=0), axis=1)
        if not np.any((steps > limit) & (np.diff(frames) == 1)):
            continue
        last = 0
        for j in range(1, len(idx)):
            dx, dy = xy[j] - xy[last]
            if frames[j] == frames[last] + 1 and math.hypot(dx, dy) > limit:
                jumped[idx[j]] = True
            else:
                last = j
    return jumped


def clean_tracks(
    raw: WorldTrackSet,
    conf_threshold: float = config.CONFIDENCE_THRESHOLD,
    jump_factor: float = config.JUMP_FACTOR,
) -> CleanedTracks:
    """Confidence filter, then median body length and jump filter until nothing more jumps.

    A point is a jump when it lies more than ``jump_factor`` body lengths from
    the last kept point of its track and that point is from the previous frame.
    Removing jumps can change the median, so both are repeated until the jump
    filter removes nothing; cleaning the result again is then a no-op.
    """
    body = raw.select(np.isin(raw.keypoint, BODY_KEYPOINTS))
    if len(body) < len(raw):
        logger.info(f"Ignoring {len(raw) - len(body)} entries that are neither head nor tail")

    # absent confidence (NaN) compares False and is kept
    low = body.confidence < conf_threshold
    removals = _removals(body, low, "low_confidence")
    body = body.select(~low)

    passes = 0
    while True:
        body_length = _median_body_length(body)
        jumped = _jumps(body, jump_factor * body_length)
        if not np.any(jumped):
            break
        passes += 1
        removals.extend(_removals(body, jumped, "jump"))
        body = body.select(~jumped)

    cleaned = CleanedTracks(body, body_length, tuple(removals))
    if removals:
        logger.info(f"Cleaning removed {len(removals)} points in {passes} jump pass(es): {cleaned.removal_counts()}")
    logger.info(f"Median body length: {body_length:.6g}")
    return cleaned


def body_vectors(clean: CleanedTracks, sigma_factor: float = config.BODY_VECTOR_SIGMA) -> BodyVectorSeries:
    tracks = clean.tracks
    head, tail = _head_tail_pairs(tracks)
    vectors = tracks.xy[head] - tracks.xy[tail]
    lengths = np.linalg.norm(vectors, axis=1)

    degenerate = lengths == 0.0
    valid = ~degenerate
    outlier = np.zeros(len(lengths), dtype=bool)
    if np.any(valid):
        mu, sigma = lengths[valid].mean(), lengths[valid].std()
        outlier = valid & ((lengths < mu - sigma_factor * sigma) | (lengths > mu + sigma_factor * sigma))
    keep = valid & ~outlier

    removals = []
    for mask, reason in ((degenerate, "degenerate"), (outlier, "length_outlier")):
        removals.extend(
            Removal(int(tracks.frame[i]), str(tracks.individual[i]), "body", reason) for i in head[mask]
        )
    if removals:
        logger.info(f"Body vectors: dropped {int(degenerate.sum())} degenerate and {int(outlier.sum())} outlier(s)")

    kept_vectors = vectors[keep]
    return BodyVectorSeries(
        tracks.frame[head[keep]],
        tracks.individual[head[keep]],
        kept_vectors,
        kept_vectors / lengths[keep][:, None],
        tuple(removals),
    )


# ---------------------------------------------------------------------------
# Per-frame metrics
# ---------------------------------------------------------------------------

def polarization_per_frame(vecs: BodyVectorSeries) -> FramePolarization:
    """|mean unit body vector| for every frame holding at least one vector."""
    frames, starts = _group_starts(vecs.frame)
    if len(frames) == 0:
        return FramePolarization(frames, np.empty(0), np.empty((0, 2)), np.empty(0, dtype=np.int64))
    counts = np.diff(np.append(starts, len(vecs)))
    mean_vector = np.add.reduceat(vecs.unit, starts, axis=0) / counts[:, None]
    polarization = np.minimum(np.linalg.norm(mean_vector, axis=1), 1.0)
    return FramePolarization(frames, polarization, mean_vector, counts)


def _mean_direction(mean_vector: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(mean_vector, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        direction = mean_vector / norm
    direction[norm[..., 0] < ZERO_MEAN_TOLERANCE] = np.nan
    return direction


def alignment_per_individual(vecs: BodyVectorSeries, frame: int) -> Dict[str, float]:
    """Cosine between each body vector and the herd's mean direction; empty when the mean is zero."""
    rows = np.flatnonzero(vecs.frame == frame)
    if len(rows) == 0:
        return {}
    direction = _mean_direction(vecs.unit[rows].mean(axis=0))
    if np.isnan(direction[0]):
        return {}
    cosines = np.clip(vecs.unit[rows] @ direction, -1.0, 1.0)
    return dict(zip(vecs.individual[rows].tolist(), cosines.tolist()))


def centroid_kinematics(clean: CleanedTracks, fps: float) -> CentroidSeries:
    """Head/tail midpoints and backward-difference speed in BL/s (NaN without a previous frame)."""
    if not fps > 0:
        raise ValueError(f"fps must be positive, got {fps}")
    tracks = clean.tracks
    head, tail = _head_tail_pairs(tracks)
    frame = tracks.frame[head]
    individual = tracks.individual[head]
    centroid = (tracks.xy[head] + tracks.xy[tail]) / 2.0

    speed = np.full(len(frame), np.nan)
    order = np.lexsort((frame, individual))
    f, ind, c = frame[order], individual[order], centroid[order]
    follows = (ind[1:] == ind[:-1]) & (f[1:] == f[:-1] + 1)
    step = np.linalg.norm(c[1:] - c[:-1], axis=1) * fps / clean.body_length
    speed[order[1:][follows]] = step[follows]
    return CentroidSeries(frame, individual, centroid, speed, clean.body_length)


def _spacing(points_bl: np.ndarray):
    """(mean pair, max pair, nearest-neighbour per point, distance to centroid per point)."""
    dist_centroid = np.linalg.norm(points_bl - points_bl.mean(axis=0), axis=1)
    if len(points_bl) < 2:
        return math.nan, math.nan, np.full(len(points_bl), np.nan), np.zeros(len(points_bl))
    pairs = pdist(points_bl)
    square = squareform(pairs)
    np.fill_diagonal(square, np.inf)
    return float(pairs.mean()), float(pairs.max()), square.min(axis=1), dist_centroid


def spacing_metrics(centroids: CentroidSeries, frame: int) -> SpacingMetrics:
    rows = np.flatnonzero(centroids.frame == frame)
    names = centroids.individual[rows].tolist()
    mean_pair, max_pair, nn, dist_centroid = _spacing(centroids.centroid[rows] / centroids.body_length)
    return SpacingMetrics(
        None if math.isnan(mean_pair) else mean_pair,
        None if math.isnan(max_pair) else max_pair,
        {n: float(d) for n, d in zip(names, nn) if not math.isnan(d)},
        dict(zip(names, dist_centroid.tolist())),
    )


def position_alignment_correlation(metrics: HerdMetrics, frame: int) -> Optional[float]:
    rows = np.flatnonzero(metrics.entry_frame == frame)
    both = rows[np.isfinite(metrics.dist_centroid[rows]) & np.isfinite(metrics.alignment[rows])]
    return pearson_r(metrics.dist_centroid[both], metrics.alignment[both])


def compute_herd_metrics(
    clean: CleanedTracks,
    vecs: BodyVectorSeries,
    fps: float,
    threads: int = config.THREADS,
) -> HerdMetrics:
    centroids = centroid_kinematics(clean, fps)
    n = len(centroids.frame)

    # vectors come from head/tail pairs, so their keys are a subset of the centroid keys
    codes = {name: i for i, name in enumerate(sorted(set(centroids.individual.tolist()) | set(vecs.individual.tolist())))}
    entry_keys = _entry_keys(centroids.frame, centroids.individual, codes)
    vector_keys = _entry_keys(vecs.frame, vecs.individual, codes)
    vector_rows = np.searchsorted(entry_keys, vector_keys)
    if len(vecs) and not np.array_equal(entry_keys[np.minimum(vector_rows, max(n - 1, 0))], vector_keys):
        raise ValueError("body vectors reference (frame, individual) entries without a centroid")

    pol = polarization_per_frame(vecs)
    direction = _mean_direction(pol.mean_vector)
    alignment = np.full(n, np.nan)
    if len(vecs):
        group = np.repeat(np.arange(len(pol.frames)), pol.counts)
        alignment[vector_rows] = np.clip(
            vecs.unit[:, 0] * direction[group, 0] + vecs.unit[:, 1] * direction[group, 1], -1.0, 1.0
        )

    frames, starts = _group_starts(centroids.frame)
    ends = np.append(starts[1:], n)
    points_bl = centroids.centroid / clean.body_length

    def spacing_chunk(rows: slice):
        first = np.searchsorted(starts, rows.start)
        last = np.searchsorted(starts, rows.stop)
        out = []
        for g in range(first, last):
            block = slice(starts[g], ends[g])
            mean_pair, max_pair, nn, dc = _spacing(points_bl[block])
            aligned = np.isfinite(alignment[block])
            r = pearson_r(dc[aligned], alignment[block][aligned])
            out.append((mean_pair, max_pair, nn, dc, math.nan if r is None else r))
        return out

    results = [item for part in map_chunks(spacing_chunk, n, threads, boundaries=starts) for item in part] if n else []
    mean_pair = np.array([r[0] for r in results], dtype=float)
    max_pair = np.array([r[1] for r in results], dtype=float)
    pearson = np.array([r[4] for r in results], dtype=float)
    nn_dist = np.concatenate([r[2] for r in results]) if results else np.empty(0)
    dist_centroid = np.concatenate([r[3] for r in results]) if results else np.empty(0)

    polarization = np.full(len(frames), np.nan)
    mean_direction = np.full((len(frames), 2), np.nan)
    at = np.searchsorted(frames, pol.frames)
    polarization[at] = pol.polarization
    mean_direction[at] = direction

    logger.info(f"Herd metrics over {len(frames)} frames and {len(codes)} individuals")
    return HerdMetrics(
        fps=float(fps), body_length=clean.body_length,
        frames=frames, polarization=polarization, mean_direction=mean_direction,
        mean_pair_dist=mean_pair, max_pair_dist=max_pair, pearson_r=pearson,
        entry_frame=centroids.frame, entry_individual=centroids.individual,
        alignment=alignment, speed=centroids.speed, dist_centroid=dist_centroid, nn_dist=nn_dist,
    )


# ---------------------------------------------------------------------------
# Smoothing and binning
# ---------------------------------------------------------------------------

def savgol_smooth(series, window: int = config.SAVGOL_WINDOW, order: int = config.SAVGOL_ORDER) -> Tuple[np.ndarray, bool]:
    """Savitzky-Golay smoothing of each run of consecutive finite values; returns (series, too_short).

    Missing values stay missing and no window spans them. A run with fewer
    than ``window`` values comes back unchanged, and ``too_short`` is True
    when any run was left unsmoothed.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd number, got {window}")
    if order >= window:
        raise ValueError(f"polynomial order {order} must be smaller than the window {window}")
    series = np.array(series, dtype=float)
    finite = np.concatenate(([False], np.isfinite(series), [False]))
    edges = np.flatnonzero(np.diff(finite.astype(np.int8)))
    too_short = False
    for start, stop in zip(edges[::2], edges[1::2]):
        if stop - start < window:
            too_short = True
            continue
        series[start:stop] = savgol_filter(series[start:stop], window, order, mode="interp")
    too_short = too_short or len(edges) == 0
    if too_short:
        logger.warning(f"Series of {len(series)} values has runs shorter than the window {window}; those are not smoothed")
    return series, too_short


def bin_speed_polarization(metrics: HerdMetrics, bin_frames: int = config.BIN_FRAMES) -> List[SpeedPolarizationBin]:
    """Per bin of ``bin_frames`` frames: mean of the per-frame mean speed and mean polarization."""
    if bin_frames < 1:
        raise ValueError(f"bin size must be >= 1, got {bin_frames}")
    if len(metrics.frames) == 0:
        return []

    # per-frame group speed: mean over individuals with a speed
    group_speed = np.full(len(metrics.frames), np.nan)
    frames, starts = _group_starts(metrics.entry_frame)
    has_speed = np.isfinite(metrics.speed)
    totals = np.add.reduceat(np.where(has_speed, metrics.speed, 0.0), starts)
    counts = np.add.reduceat(has_speed.astype(np.int64), starts)
    with np.errstate(invalid="ignore", divide="ignore"):
        group_speed[np.searchsorted(metrics.frames, frames)] = np.where(counts > 0, totals / np.maximum(counts, 1), np.nan)

    index = metrics.frames // bin_frames
    bins = []
    for b in range(int(index.min()), int(index.max()) + 1):
        rows = index == b
        speed = group_speed[rows]
        polarization = metrics.polarization[rows]
        speed = speed[np.isfinite(speed)]
        polarization = polarization[np.isfinite(polarization)]
        bins.append(SpeedPolarizationBin(
            index=b,
            start_frame=b * bin_frames,
            mean_speed=float(speed.mean()) if len(speed) else math.nan,
            mean_polarization=float(polarization.mean()) if len(polarization) else math.nan,
            frames=int(np.count_nonzero(rows)),
        ))
    return bins


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def _cell(value) -> str:
    return "" if value is None or (isinstance(value, float) and math.isnan(value)) else format_float(value)


def _write_bins(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(BINNED_HEADER)
        for index, start, speed, polarization in rows:
            writer.writerow([index, start, _cell(float(speed)), _cell(float(polarization))])


def write_metrics(
    metrics: HerdMetrics,
    bins: List[SpeedPolarizationBin],
    out_dir,
    window: int = config.SAVGOL_WINDOW,
    order: int = config.SAVGOL_ORDER,
) -> List[str]:
    """Write the herd, individual, binned and smoothed-binned CSV files; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = [os.path.join(out_dir, name) for name in (HERD_FILE, INDIVIDUAL_FILE, BINNED_FILE, BINNED_SMOOTHED_FILE)]

    with open(paths[0], "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(HERD_HEADER)
        for i, frame in enumerate(metrics.frames):
            writer.writerow([int(frame)] + [_cell(float(v)) for v in (
                metrics.polarization[i], metrics.mean_direction[i, 0], metrics.mean_direction[i, 1],
                metrics.mean_pair_dist[i], metrics.max_pair_dist[i], metrics.pearson_r[i],
            )])

    with open(paths[1], "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(INDIVIDUAL_HEADER)
        for i, frame in enumerate(metrics.entry_frame):
            writer.writerow([int(frame), metrics.entry_individual[i]] + [_cell(float(v)) for v in (
                metrics.alignment[i], metrics.speed[i], metrics.dist_centroid[i], metrics.nn_dist[i],
            )])

    raw = [(b.index, b.start_frame, b.mean_speed, b.mean_polarization) for b in bins]
    _write_bins(paths[2], raw)

    speed, short_speed = savgol_smooth([b.mean_speed for b in bins], window, order)
    polarization, short_pol = savgol_smooth([b.mean_polarization for b in bins], window, order)
    if short_speed or short_pol:
        logger.warning(f"{BINNED_SMOOTHED_FILE} holds unsmoothed values: only {len(bins)} bins")
    _write_bins(paths[3], [(b.index, b.start_frame, s, p) for b, s, p in zip(bins, speed, polarization)])

    logger.info(f"Wrote metrics for {len(metrics.frames)} frames to {out_dir}")
    return paths
