"""
Geometric primitives shared by the unwrapping methods.

Conventions used throughout:
    * angles are radians;
    * transforms act on column vectors, x -> R x + t;
    * camera frame: +x right, +y down in the image, +z along the optical axis;
    * a Pose3D rotation is camera-to-world, its position is the camera centre.

All values are immutable once built, and every function is a pure function
of its arguments.
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterator, Mapping, Tuple

import numpy as np

from errors import (
    BehindCameraError,
    ConfigError,
    DegenerateGeometryError,
    DistortionInversionError,
    GapError,
    NormalizationError,
    ParallelRayError,
)

logger = logging.getLogger(__name__)

QUATERNION_TOLERANCE = 1e-6
PARALLEL_TOLERANCE = 1e-12
UNDISTORT_MAX_ITERATIONS = 20
UNDISTORT_TOLERANCE = 1e-10

# Ray status codes returned by the vectorised intersection.
RAY_OK = 0
RAY_PARALLEL = 1
RAY_BEHIND = 2


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.remainder(theta, 2.0 * math.pi)
    return math.pi if wrapped == -math.pi else wrapped


def rotation_2d(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def rotation_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def matvec(rotation: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Row-wise R v for one (3, 3) matrix or an (n, 3, 3) stack.

    Written as an explicit three-term sum so each row's result does not
    depend on how many rows are processed together.
    """
    v = np.asarray(vectors, dtype=float)
    return (
        rotation[..., :, 0] * v[..., None, 0]
        + rotation[..., :, 1] * v[..., None, 1]
        + rotation[..., :, 2] * v[..., None, 2]
    )


def dot3(vectors: np.ndarray, axis) -> np.ndarray:
    """Row-wise dot product of (..., 3) vectors with one 3-vector."""
    v = np.asarray(vectors, dtype=float)
    return v[..., 0] * axis[0] + v[..., 1] * axis[1] + v[..., 2] * axis[2]


# ---------------------------------------------------------------------------
# 2D rigid transforms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Rigid2D:
    """Rotation by ``theta`` followed by translation ``t``."""

    theta: float = 0.0
    t: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "theta", float(self.theta))
        object.__setattr__(self, "t", (float(self.t[0]), float(self.t[1])))

    @classmethod
    def identity(cls) -> "Rigid2D":
        return cls(0.0, (0.0, 0.0))

    @classmethod
    def from_matrix(cls, rotation: np.ndarray, t) -> "Rigid2D":
        return cls(math.atan2(rotation[1, 0], rotation[0, 0]), (t[0], t[1]))

    @property
    def matrix(self) -> np.ndarray:
        return rotation_2d(self.theta)

    def apply(self, points) -> np.ndarray:
        """Apply to a single 2-vector or an (n, 2) array."""
        p = np.asarray(points, dtype=float)
        c, s = math.cos(self.theta), math.sin(self.theta)
        x, y = p[..., 0], p[..., 1]
        return np.stack([c * x - s * y + self.t[0], s * x + c * y + self.t[1]], axis=-1)

    def inverse(self) -> "Rigid2D":
        c, s = math.cos(self.theta), math.sin(self.theta)
        tx, ty = self.t
        return Rigid2D(-self.theta, (-(c * tx + s * ty), -(-s * tx + c * ty)))

    def conjugate(self, q: np.ndarray) -> "Rigid2D":
        """Express this transform in the axes of the orthogonal matrix ``q``: Q T Q^T."""
        q = np.asarray(q, dtype=float)
        rotation = q @ self.matrix @ q.T
        return Rigid2D.from_matrix(rotation, q @ np.asarray(self.t))

    def is_close(self, other: "Rigid2D", atol: float = 1e-12) -> bool:
        return (
            abs(wrap_angle(self.theta - other.theta)) <= atol
            and abs(self.t[0] - other.t[0]) <= atol
            and abs(self.t[1] - other.t[1]) <= atol
        )


def compose_rigid2d(a: Rigid2D, b: Rigid2D) -> Rigid2D:
    """Return a ∘ b: applies ``b`` first, then ``a``."""
    moved = a.apply(b.t)
    return Rigid2D(wrap_angle(a.theta + b.theta), (moved[0], moved[1]))


def chain_to_frame0(chain: Mapping[int, Rigid2D], f: int) -> Rigid2D:
    """Frame-f to frame-0 transform T_{1,0} ∘ T_{2,1} ∘ … ∘ T_{f,f-1}."""
    result = Rigid2D.identity()
    for _, result in iter_chain_to_frame0(chain, f):
        pass
    return result


def iter_chain_to_frame0(chain: Mapping[int, Rigid2D], last: int) -> Iterator[Tuple[int, Rigid2D]]:
    """Yield (f, T_{f,0}) for f = 0..last, one composition per frame."""
    cumulative = Rigid2D.identity()
    yield 0, cumulative
    for j in range(1, last + 1):
        step = chain.get(j)
        if step is None:
            raise GapError(j, f"transform chain has no entry for frame {j}")
        cumulative = compose_rigid2d(cumulative, step)
        yield j, cumulative


def rigid_fit_2d(src, dst) -> Rigid2D:
    """Least-squares rotation + translation taking ``src`` onto ``dst`` (no scale, no reflection)."""
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    if src.shape != dst.shape:
        raise ValueError(f"point lists differ in length: {len(src)} vs {len(dst)}")
    if len(src) < 2:
        raise DegenerateGeometryError(f"rigid fit needs at least 2 point pairs, got {len(src)}")
    if not (np.all(np.isfinite(src)) and np.all(np.isfinite(dst))):
        raise ValueError("rigid fit received non-finite coordinates")

    src_centroid = src.mean(axis=0)
    dst_centroid = dst.mean(axis=0)
    src_centered = src - src_centroid
    scale = 1.0 + float(np.max(np.abs(src)))
    if float(np.max(np.abs(src_centered))) <= 1e-12 * scale:
        raise DegenerateGeometryError("all source points coincide")

    h = src_centered.T @ (dst - dst_centroid)
    u, _, vt = np.linalg.svd(h)
    d = 1.0 if np.linalg.det(vt.T @ u.T) >= 0 else -1.0
    rotation = vt.T @ np.diag([1.0, d]) @ u.T
    t = dst_centroid - rotation @ src_centroid
    return Rigid2D.from_matrix(rotation, t)


def fit_residual(transform: Rigid2D, src, dst) -> float:
    """Sum of squared distances |dst_i - T(src_i)|^2."""
    diff = np.asarray(dst, dtype=float) - transform.apply(src)
    return float(np.sum(diff * diff))


# ---------------------------------------------------------------------------
# Quaternions and poses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UnitQuaternion:
    """Rotation quaternion (w, x, y, z); renormalised on construction."""

    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __post_init__(self):
        values = np.array([self.w, self.x, self.y, self.z], dtype=float)
        norm = float(np.linalg.norm(values))
        if not np.isfinite(norm) or abs(norm - 1.0) > QUATERNION_TOLERANCE:
            raise NormalizationError(f"quaternion norm {norm} is not 1 within {QUATERNION_TOLERANCE}")
        values = values / norm
        for name, value in zip("wxyz", values):
            object.__setattr__(self, name, float(value))

    @classmethod
    def normalized(cls, w, x, y, z) -> "UnitQuaternion":
        norm = math.sqrt(w * w + x * x + y * y + z * z)
        if norm == 0.0:
            raise NormalizationError("zero quaternion")
        return cls(w / norm, x / norm, y / norm, z / norm)

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "UnitQuaternion":
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        half = 0.5 * angle
        s = math.sin(half)
        return cls(math.cos(half), axis[0] * s, axis[1] * s, axis[2] * s)

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "UnitQuaternion":
        m = np.asarray(m, dtype=float)
        trace = m[0, 0] + m[1, 1] + m[2, 2]
        if trace > 0.0:
            s = 2.0 * math.sqrt(trace + 1.0)
            w, x, y, z = 0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s
        elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = 2.0 * math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
            w, x, y, z = (m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s
        elif m[1, 1] > m[2, 2]:
            s = 2.0 * math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
            w, x, y, z = (m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s
        else:
            s = 2.0 * math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
            w, x, y, z = (m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s
        return cls.normalized(w, x, y, z)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def to_matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    def conjugate(self) -> "UnitQuaternion":
        return UnitQuaternion(self.w, -self.x, -self.y, -self.z)

    def __mul__(self, other: "UnitQuaternion") -> "UnitQuaternion":
        a, b = self, other
        return UnitQuaternion.normalized(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )

    def angle_to(self, other: "UnitQuaternion") -> float:
        """Rotation angle of self^-1 · other, in [0, pi]."""
        a, b = self.as_array(), other.as_array()
        if np.dot(a, b) < 0:
            b = -b
        return 2.0 * math.atan2(float(np.linalg.norm(b - a)), float(np.linalg.norm(b + a)))


def _as_quaternion(q) -> UnitQuaternion:
    if isinstance(q, UnitQuaternion):
        return q
    w, x, y, z = (float(v) for v in q)
    return UnitQuaternion(w, x, y, z)


def slerp(q0, q1, u: float) -> UnitQuaternion:
    """Constant-angular-velocity interpolation along the shorter arc."""
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"interpolation fraction {u} outside [0, 1]")
    q0, q1 = _as_quaternion(q0), _as_quaternion(q1)
    if u == 0.0:
        return q0
    a, b = q0.as_array(), q1.as_array()
    if np.dot(a, b) < 0.0:
        b = -b
    if u == 1.0:
        return UnitQuaternion(*b)

    # Angle between the two 4-vectors, stable for nearly equal inputs.
    omega = 2.0 * math.atan2(float(np.linalg.norm(b - a)), float(np.linalg.norm(b + a)))
    sin_omega = math.sin(omega)
    if sin_omega < 1e-15:
        return q0
    s0 = math.sin((1.0 - u) * omega) / sin_omega
    s1 = math.sin(u * omega) / sin_omega
    return UnitQuaternion.normalized(*(s0 * a + s1 * b))


@dataclass(frozen=True)
class Pose3D:
    """Camera-to-world rotation and camera centre."""

    rotation: UnitQuaternion
    position: Tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))

    @property
    def matrix(self) -> np.ndarray:
        return self.rotation.to_matrix()

    def apply(self, points) -> np.ndarray:
        """Camera coordinates to world coordinates."""
        return np.asarray(points, dtype=float) @ self.matrix.T + np.asarray(self.position)

    def inverse_apply(self, points) -> np.ndarray:
        """World coordinates to camera coordinates."""
        return (np.asarray(points, dtype=float) - np.asarray(self.position)) @ self.matrix

    def inverse(self) -> "Pose3D":
        r = self.matrix
        return Pose3D(self.rotation.conjugate(), tuple(-(r.T @ np.asarray(self.position))))


def interpolate_pose(p0: Pose3D, p1: Pose3D, u: float) -> Pose3D:
    """Linear position, slerp rotation."""
    rotation = slerp(p0.rotation, p1.rotation, u)
    if u == 0.0:
        return p0
    position = (1.0 - u) * np.asarray(p0.position) + u * np.asarray(p1.position)
    return Pose3D(rotation, tuple(position))


# ---------------------------------------------------------------------------
# Camera model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    k1: float = 0.0
    k2: float = 0.0
    width: int = 0
    height: int = 0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ConfigError(
                f"principal point ({self.cx}, {self.cy}) outside the {self.width}x{self.height} sensor"
            )

    @property
    def has_distortion(self) -> bool:
        return self.k1 != 0.0 or self.k2 != 0.0

    def distort(self, normalized: np.ndarray) -> np.ndarray:
        if not self.has_distortion:
            return normalized
        r2 = np.sum(normalized * normalized, axis=-1, keepdims=True)
        return normalized * (1.0 + self.k1 * r2 + self.k2 * r2 * r2)

    def undistort(self, distorted: np.ndarray) -> np.ndarray:
        """Invert the radial model by fixed-point iteration."""
        if not self.has_distortion:
            return distorted
        undistorted = distorted.copy()
        for _ in range(UNDISTORT_MAX_ITERATIONS):
            r2 = np.sum(undistorted * undistorted, axis=-1, keepdims=True)
            updated = distorted / (1.0 + self.k1 * r2 + self.k2 * r2 * r2)
            change = float(np.max(np.abs(updated - undistorted))) if updated.size else 0.0
            undistorted = updated
            if change < UNDISTORT_TOLERANCE:
                return undistorted
        raise DistortionInversionError(
            f"radial undistortion did not converge in {UNDISTORT_MAX_ITERATIONS} iterations"
        )

    def in_bounds(self, pixels: np.ndarray) -> np.ndarray:
        return (
            (pixels[..., 0] >= 0) & (pixels[..., 0] <= self.width)
            & (pixels[..., 1] >= 0) & (pixels[..., 1] <= self.height)
        )


def project_points(intr: CameraIntrinsics, rotation: np.ndarray, position, points) -> Tuple[np.ndarray, np.ndarray]:
    """Project world points; returns (pixels, depth along the optical axis).

    ``rotation`` is one camera-to-world matrix or an (n, 3, 3) stack matched
    row-for-row with ``points``.
    """
    points = np.asarray(points, dtype=float)
    rel = points - np.asarray(position, dtype=float)
    cam = matvec(np.swapaxes(rotation, -1, -2), rel)
    depth = cam[..., 2]
    normalized = cam[..., :2] / depth[..., None]
    distorted = intr.distort(normalized)
    pixels = np.stack([intr.fx * distorted[..., 0] + intr.cx, intr.fy * distorted[..., 1] + intr.cy], axis=-1)
    return pixels, depth


def pixels_to_rays(intr: CameraIntrinsics, rotation: np.ndarray, position, pixels) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorised back-projection; returns (origins, unit directions) in world coordinates."""
    pixels = np.asarray(pixels, dtype=float)
    outside = ~intr.in_bounds(pixels)
    if np.any(outside):
        logger.warning(f"{int(np.count_nonzero(outside))} pixel(s) lie outside the image bounds")
    distorted = np.stack([(pixels[..., 0] - intr.cx) / intr.fx, (pixels[..., 1] - intr.cy) / intr.fy], axis=-1)
    normalized = intr.undistort(distorted)
    cam = np.concatenate([normalized, np.ones(normalized.shape[:-1] + (1,))], axis=-1)
    cam = cam / np.linalg.norm(cam, axis=-1, keepdims=True)
    directions = matvec(rotation, cam)
    origins = np.broadcast_to(np.asarray(position, dtype=float), directions.shape).copy()
    return origins, directions


def pixel_to_ray(intr: CameraIntrinsics, pose: Pose3D, pixel) -> Tuple[np.ndarray, np.ndarray]:
    origins, directions = pixels_to_rays(intr, pose.matrix, pose.position, np.asarray(pixel, dtype=float)[None, :])
    return origins[0], directions[0]


# ---------------------------------------------------------------------------
# Planes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Plane:
    """Points p with normal · p = offset."""

    normal: Tuple[float, float, float]
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        norm = float(np.linalg.norm(n))
        if norm == 0.0:
            raise DegenerateGeometryError("plane normal is zero")
        object.__setattr__(self, "normal", tuple(n / norm))
        object.__setattr__(self, "offset", float(self.offset) / norm)

    def signed_distance(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ np.asarray(self.normal) - self.offset


@dataclass(frozen=True)
class PlaneBasis:
    """Orthonormal 2D chart on a plane."""

    origin: Tuple[float, float, float]
    u_axis: Tuple[float, float, float]
    v_axis: Tuple[float, float, float]

    @property
    def normal(self) -> np.ndarray:
        return np.cross(self.u_axis, self.v_axis)


def _canonical_normal(normal: np.ndarray) -> np.ndarray:
    for component in (normal[2], normal[1], normal[0]):
        if abs(component) > 1e-12:
            return normal if component > 0 else -normal
    return normal


def fit_plane(points) -> Plane:
    """Total-least-squares plane through a point set."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) < 3:
        raise DegenerateGeometryError(f"plane fit needs at least 3 points, got {len(points)}")
    centroid = points.mean(axis=0)
    _, singular, vt = np.linalg.svd(points - centroid, full_matrices=False)
    if singular[0] == 0.0 or singular[1] <= 1e-12 * singular[0]:
        raise DegenerateGeometryError("points are collinear or coincident; no unique plane")
    normal = _canonical_normal(vt[2])
    return Plane(tuple(normal), float(normal @ centroid))


def plane_basis(plane: Plane, origin_hint) -> PlaneBasis:
    """Chart whose u axis is the world x axis projected onto the plane (y when the normal is ~x)."""
    n = np.asarray(plane.normal)
    hint = np.asarray(origin_hint, dtype=float)
    origin = hint - (n @ hint - plane.offset) * n
    reference = np.array([1.0, 0.0, 0.0])
    if abs(n @ reference) > 1.0 - 1e-6:
        reference = np.array([0.0, 1.0, 0.0])
    u = reference - (reference @ n) * n
    u = u / np.linalg.norm(u)
    v = np.cross(n, u)
    v = v / np.linalg.norm(v)
    return PlaneBasis(tuple(origin), tuple(u), tuple(v))


def ray_plane_intersect(origin, direction, plane: Plane) -> np.ndarray:
    points, status = intersect_rays_with_plane(np.asarray(origin, dtype=float)[None, :],
                                               np.asarray(direction, dtype=float)[None, :], plane)
    if status[0] == RAY_PARALLEL:
        raise ParallelRayError("viewing ray is parallel to the ground plane")
    if status[0] == RAY_BEHIND:
        raise BehindCameraError("ground plane intersection lies behind the camera")
    return points[0]


def intersect_rays_with_plane(origins, directions, plane: Plane) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorised ray/plane intersection; rows that fail carry NaN and a non-zero status."""
    n = np.asarray(plane.normal)
    denom = dot3(directions, n)
    status = np.full(len(denom), RAY_OK, dtype=np.int8)
    parallel = np.abs(denom) < PARALLEL_TOLERANCE
    status[parallel] = RAY_PARALLEL
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (plane.offset - dot3(origins, n)) / np.where(parallel, 1.0, denom)
    behind = ~parallel & (s <= 0)
    status[behind] = RAY_BEHIND
    points = origins + s[:, None] * directions
    points[status != RAY_OK] = np.nan
    return points, status


def project_to_plane_2d(point, basis: PlaneBasis) -> np.ndarray:
    rel = np.asarray(point, dtype=float) - np.asarray(basis.origin)
    return np.stack([dot3(rel, basis.u_axis), dot3(rel, basis.v_axis)], axis=-1)
