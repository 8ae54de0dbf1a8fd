# features/steps/geometry_steps.py
"""
Step definitions for core_geometry.feature
"""

import math

import numpy as np
from behave import given, then, when

from step_helpers import (
    assert_close,
    assert_vector_close,
    attempt,
    parse_numbers,
    succeeded,
)

from geometry import (
    CameraIntrinsics,
    Plane,
    Pose3D,
    Rigid2D,
    UnitQuaternion,
    chain_to_frame0,
    compose_rigid2d,
    fit_plane,
    fit_residual,
    interpolate_pose,
    pixel_to_ray,
    pixels_to_rays,
    plane_basis,
    project_points,
    project_to_plane_2d,
    ray_plane_intersect,
    rigid_fit_2d,
    rotation_2d,
    rotation_x,
    rotation_z,
    slerp,
    wrap_angle,
)
from synth import NADIR


def _homogeneous(transform):
    m = np.eye(3)
    m[:2, :2] = rotation_2d(transform.theta)
    m[:2, 2] = transform.t
    return m


def _assert_transform(transform, theta, t, tol):
    diff = abs(wrap_angle(transform.theta - theta))
    if not diff <= tol:
        raise AssertionError(f"angle {math.degrees(transform.theta)} deg differs from {math.degrees(theta)} deg by {diff} rad")
    assert_vector_close(transform.t, t, tol, "translation")


def _transforms(context):
    if not hasattr(context, 'transforms'):
        context.transforms = {}
    return context.transforms


# ---------------------------------------------------------------------------
# Rigid transforms and chains
# ---------------------------------------------------------------------------

@given(u'a rigid transform "{name}" with angle {deg:g} degrees and translation ({tx:g}, {ty:g})')
def step_rigid_transform(context, name, deg, tx, ty):
    _transforms(context)[name] = Rigid2D(math.radians(deg), (tx, ty))


@when(u'I compose "{a}" with "{b}"')
def step_compose(context, a, b):
    transforms = _transforms(context)
    attempt(context, compose_rigid2d, transforms[a], transforms[b])


@when(u'I compose "{name}" with itself {n:d} times')
def step_compose_repeated(context, name, n):
    step = _transforms(context)[name]
    result = Rigid2D.identity()
    for _ in range(n):
        result = compose_rigid2d(result, step)
    context.error = None
    context.result = result


@then(u'the composed transform maps ({x:g}, {y:g}) to ({ex:g}, {ey:g}) within {tol:g}')
def step_composed_maps(context, x, y, ex, ey, tol):
    assert_vector_close(succeeded(context).apply((x, y)), (ex, ey), tol, "mapped point")


@then(u'the composed transform is the identity within {tol:g}')
def step_composed_identity(context, tol):
    _assert_transform(succeeded(context), 0.0, (0.0, 0.0), tol)


@then(u'the composed transform has angle {deg:g} degrees and translation ({tx:g}, {ty:g}) within {tol:g}')
def step_composed_has(context, deg, tx, ty, tol):
    _assert_transform(succeeded(context), math.radians(deg), (tx, ty), tol)


@given(u'{n:d} random rigid transforms from seed {seed:d}')
def step_random_transforms(context, n, seed):
    rng = np.random.default_rng(seed)
    context.random_transforms = [
        Rigid2D(rng.uniform(-math.pi, math.pi), tuple(rng.uniform(-100.0, 100.0, 2))) for _ in range(n)
    ]


@then(u'every transform composed with its inverse is the identity within {tol:g}')
def step_inverse_identity(context, tol):
    for transform in context.random_transforms:
        _assert_transform(compose_rigid2d(transform, transform.inverse()), 0.0, (0.0, 0.0), tol)


@given(u'a transform chain where every frame from 1 to {last:d} rotates by {deg:g} degree and translates by ({tx:g}, {ty:g})')
def step_uniform_chain(context, last, deg, tx, ty):
    context.chain = {f: Rigid2D(math.radians(deg), (tx, ty)) for f in range(1, last + 1)}


@given(u'a transform chain with entries for frames {frames}')
def step_sparse_chain(context, frames):
    context.chain = {int(f): Rigid2D(0.01 * int(f), (1.0, 0.0)) for f in parse_numbers(frames)}


@given(u'a random transform chain of {n:d} frames from seed {seed:d}')
def step_random_chain(context, n, seed):
    rng = np.random.default_rng(seed)
    context.chain = {
        f: Rigid2D(rng.normal(0.0, 0.02), tuple(rng.normal(0.0, 5.0, 2))) for f in range(1, n + 1)
    }


@when(u'I compose the chain up to frame {f:d}')
def step_compose_chain(context, f):
    attempt(context, chain_to_frame0, context.chain, f)


@then(u'the composed transform equals the chain entries composed as ((T1 T2) T3) within {tol:g}')
def step_nested_composition(context, tol):
    chain = context.chain
    expected = compose_rigid2d(compose_rigid2d(chain[1], chain[2]), chain[3])
    _assert_transform(succeeded(context), expected.theta, expected.t, tol)


@then(u'the chain to frame 0 matches the matrix product oracle for frames {frames} within {tol:g}')
def step_chain_oracle(context, frames, tol):
    for f in (int(v) for v in parse_numbers(frames)):
        product = np.eye(3)
        for j in range(1, f + 1):
            product = product @ _homogeneous(context.chain[j])
        result = chain_to_frame0(context.chain, f)
        _assert_transform(result, math.atan2(product[1, 0], product[0, 0]), product[:2, 2], tol)


# ---------------------------------------------------------------------------
# Quaternions and poses
# ---------------------------------------------------------------------------

def _quaternions(context):
    if not hasattr(context, 'quaternions'):
        context.quaternions = {}
    return context.quaternions


@given(u'the rotation "{name}" of {deg:g} degrees about ({x:g}, {y:g}, {z:g})')
def step_rotation(context, name, deg, x, y, z):
    _quaternions(context)[name] = UnitQuaternion.from_axis_angle((x, y, z), math.radians(deg))


@given(u'the quaternion "{name}" is kept')
def step_quaternion_kept(context, name):
    pass


@given(u'the quaternion "{name}" is negated')
def step_quaternion_negated(context, name):
    q = _quaternions(context)[name]
    _quaternions(context)[name] = UnitQuaternion(-q.w, -q.x, -q.y, -q.z)


@when(u'I slerp from "{a}" to "{b}" at {u:g}')
def step_slerp(context, a, b, u):
    quaternions = _quaternions(context)
    attempt(context, slerp, quaternions[a], quaternions[b], u)


@when(u'I slerp from the quaternion ({w:g}, {x:g}, {y:g}, {z:g}) to the identity at {u:g}')
def step_slerp_raw(context, w, x, y, z, u):
    attempt(context, slerp, (w, x, y, z), UnitQuaternion(), u)


@then(u'the slerp result is exactly "{name}"')
def step_slerp_exact(context, name):
    result = succeeded(context)
    expected = _quaternions(context)[name]
    if not np.array_equal(result.as_array(), expected.as_array()):
        raise AssertionError(f"slerp returned {result}, expected {expected}")


@then(u'the slerp result is a rotation of {deg:g} degrees about the z axis within {tol:g}')
def step_slerp_about_z(context, deg, tol):
    assert_vector_close(succeeded(context).to_matrix(), rotation_z(math.radians(deg)), tol, "rotation matrix")


@given(u'{n:d} random quaternion pairs from seed {seed:d}')
def step_random_quaternion_pairs(context, n, seed):
    rng = np.random.default_rng(seed)
    context.quaternion_pairs = []
    for _ in range(n):
        a, b = rng.normal(size=4), rng.normal(size=4)
        context.quaternion_pairs.append((UnitQuaternion.normalized(*a), UnitQuaternion.normalized(*b)))


@then(u'the slerp angle is u times the total angle within {tol:g} for u in {values}')
def step_slerp_angle(context, tol, values):
    for q0, q1 in context.quaternion_pairs:
        total = q0.angle_to(q1)
        for u in parse_numbers(values):
            result = slerp(q0, q1, u)
            assert_close(q0.angle_to(result), u * total, tol, f"slerp angle at u={u}")
            assert_close(float(np.linalg.norm(result.as_array())), 1.0, 1e-12, "quaternion norm")


def _poses(context):
    if not hasattr(context, 'poses'):
        context.poses = {}
    return context.poses


@given(u'a pose "{name}" at ({x:g}, {y:g}, {z:g}) rotated {deg:g} degrees about ({ax:g}, {ay:g}, {az:g})')
def step_pose(context, name, x, y, z, deg, ax, ay, az):
    _poses(context)[name] = Pose3D(UnitQuaternion.from_axis_angle((ax, ay, az), math.radians(deg)), (x, y, z))


@when(u'I interpolate from "{a}" to "{b}" at {u:g}')
def step_interpolate(context, a, b, u):
    poses = _poses(context)
    attempt(context, interpolate_pose, poses[a], poses[b], u)


@then(u'the interpolated position is ({x:g}, {y:g}, {z:g}) within {tol:g}')
def step_interpolated_position(context, x, y, z, tol):
    assert_vector_close(succeeded(context).position, (x, y, z), tol, "position")


@then(u'the interpolated rotation equals the rotation of "{name}" within {tol:g}')
def step_interpolated_rotation(context, name, tol):
    assert_vector_close(succeeded(context).rotation.as_array(), _poses(context)[name].rotation.as_array(), tol, "quaternion")


@then(u'the interpolated pose is "{name}"')
def step_interpolated_is(context, name):
    if succeeded(context) is not _poses(context)[name]:
        raise AssertionError(f"expected the keyframe pose {name} itself, got {context.result}")


@given(u'{n:d} random poses and points from seed {seed:d}')
def step_random_poses(context, n, seed):
    rng = np.random.default_rng(seed)
    context.pose_samples = [
        (
            Pose3D(UnitQuaternion.normalized(*rng.normal(size=4)), tuple(rng.uniform(-500.0, 500.0, 3))),
            rng.uniform(-500.0, 500.0, 3),
        )
        for _ in range(n)
    ]


@then(u'applying each pose and then its inverse returns the point within {tol:g}')
def step_pose_inverse(context, tol):
    for pose, point in context.pose_samples:
        assert_vector_close(pose.inverse_apply(pose.apply(point)), point, tol, "inverse_apply")
        assert_vector_close(pose.inverse().apply(pose.apply(point)), point, tol, "inverse pose")


# ---------------------------------------------------------------------------
# Planes
# ---------------------------------------------------------------------------

def _in_plane_axes(normal):
    n = np.asarray(normal, dtype=float) / np.linalg.norm(normal)
    _, _, vt = np.linalg.svd(n[None, :])
    return n, vt[1], vt[2]


@given(u'{n:d} points sampled on the plane with normal ({nx:g}, {ny:g}, {nz:g}) and offset {d:g} from seed {seed:d}')
def step_plane_samples(context, n, nx, ny, nz, d, seed):
    rng = np.random.default_rng(seed)
    norm = math.sqrt(nx * nx + ny * ny + nz * nz)
    unit, u, v = _in_plane_axes((nx, ny, nz))
    base = unit * (d / norm)
    s = rng.uniform(-10.0, 10.0, (n, 2))
    context.points3d = base + s[:, :1] * u + s[:, 1:] * v


@given(u'the 3D points')
def step_points3d(context):
    context.points3d = np.array([[float(r['x']), float(r['y']), float(r['z'])] for r in context.table])


@when(u'I fit a plane to the points')
def step_fit_plane(context):
    attempt(context, fit_plane, context.points3d)


@then(u'the fitted plane has normal ({x:g}, {y:g}, {z:g}) and offset {d:g} within {tol:g}')
def step_fitted_plane(context, x, y, z, d, tol):
    plane = succeeded(context)
    assert_vector_close(plane.normal, (x, y, z), tol, "normal")
    assert_close(plane.offset, d, tol, "offset")


@then(u'every point lies on the fitted plane within {tol:g}')
def step_points_on_plane(context, tol):
    residual = np.abs(succeeded(context).signed_distance(context.points3d))
    if not residual.max() <= tol:
        raise AssertionError(f"max plane residual {residual.max()} exceeds {tol}")


@then(u'fitting after a rigid motion gives the moved plane within {tol:g}')
def step_plane_rigid_motion(context, tol):
    plane = succeeded(context)
    rotation = rotation_z(0.7) @ rotation_x(-0.4)
    shift = np.array([10.0, -4.0, 2.5])
    moved = context.points3d @ rotation.T + shift
    refit = fit_plane(moved)
    expected_normal = rotation @ np.asarray(plane.normal)
    if np.dot(expected_normal, refit.normal) < 0:
        expected_normal = -expected_normal
    assert_vector_close(refit.normal, expected_normal, tol, "moved normal")
    residual = np.abs(refit.signed_distance(moved))
    if not residual.max() <= tol:
        raise AssertionError(f"moved points are {residual.max()} off the refitted plane")


# ---------------------------------------------------------------------------
# Camera rays
# ---------------------------------------------------------------------------

@given(u'a pinhole camera with focal length {f:g} and a {w:d}x{h:d} sensor')
def step_camera(context, f, w, h):
    context.intrinsics = CameraIntrinsics(f, f, w / 2.0 - 0.5, h / 2.0 - 0.5, 0.0, 0.0, w, h)


@given(u'a pinhole camera with focal length {f:g}, a {w:d}x{h:d} sensor and distortion k1 = {k1:g}, k2 = {k2:g}')
def step_camera_distorted(context, f, w, h, k1, k2):
    context.intrinsics = CameraIntrinsics(f, f, w / 2.0 - 0.5, h / 2.0 - 0.5, k1, k2, w, h)


@given(u'a nadir camera pose at ({x:g}, {y:g}, {z:g})')
def step_nadir_pose(context, x, y, z):
    context.camera_pose = Pose3D(UnitQuaternion.from_matrix(NADIR), (x, y, z))


@given(u'a camera pose at ({x:g}, {y:g}, {z:g}) with yaw {yaw:g} degrees and pitch {pitch:g} degrees')
def step_camera_pose(context, x, y, z, yaw, pitch):
    rotation = rotation_z(math.radians(yaw)) @ rotation_x(math.radians(pitch)) @ NADIR
    context.camera_pose = Pose3D(UnitQuaternion.from_matrix(rotation), (x, y, z))


@when(u'I cast the ray through pixel ({px:g}, {py:g})')
def step_cast_ray(context, px, py):
    attempt(context, pixel_to_ray, context.intrinsics, context.camera_pose, (px, py))


@then(u'the ray origin is ({x:g}, {y:g}, {z:g}) within {tol:g}')
def step_ray_origin(context, x, y, z, tol):
    assert_vector_close(succeeded(context)[0], (x, y, z), tol, "ray origin")


@then(u'the ray direction is ({x:g}, {y:g}, {z:g}) within {tol:g}')
def step_ray_direction(context, x, y, z, tol):
    assert_vector_close(succeeded(context)[1], (x, y, z), tol, "ray direction")


@then(u'the ray meets the ground plane z = {h:g} at ({x:g}, {y:g}, {z:g}) within {tol:g}')
def step_ray_meets(context, h, x, y, z, tol):
    origin, direction = succeeded(context)
    hit = ray_plane_intersect(origin, direction, Plane((0.0, 0.0, 1.0), h))
    assert_vector_close(hit, (x, y, z), tol, "ground hit")


@when(u'I intersect the ray from ({ox:g}, {oy:g}, {oz:g}) along ({dx:g}, {dy:g}, {dz:g}) with the ground plane z = {h:g}')
def step_intersect(context, ox, oy, oz, dx, dy, dz, h):
    direction = np.array([dx, dy, dz]) / math.sqrt(dx * dx + dy * dy + dz * dz)
    attempt(context, ray_plane_intersect, (ox, oy, oz), direction, Plane((0.0, 0.0, 1.0), h))


@then(u'the intersection is ({x:g}, {y:g}, {z:g}) within {tol:g}')
def step_intersection(context, x, y, z, tol):
    assert_vector_close(succeeded(context), (x, y, z), tol, "intersection")


@given(u'{n:d} random ground points within {r:g} of ({x:g}, {y:g}) from seed {seed:d}')
def step_random_ground_points(context, n, r, x, y, seed):
    rng = np.random.default_rng(seed)
    xy = np.array([x, y]) + rng.uniform(-r, r, (n, 2))
    context.points3d = np.concatenate([xy, np.zeros((n, 1))], axis=1)


@when(u'I project the points and cast rays back through the pixels')
def step_project_and_cast(context):
    pose = context.camera_pose
    pixels, depth = project_points(context.intrinsics, pose.matrix, pose.position, context.points3d)
    if not np.all(depth > 0):
        raise AssertionError("test points must lie in front of the camera")
    attempt(context, pixels_to_rays, context.intrinsics, pose.matrix, pose.position, pixels)


@then(u'every ray points at its ground point within {tol:g}')
def step_rays_point_at(context, tol):
    origins, directions = succeeded(context)
    expected = context.points3d - origins
    expected = expected / np.linalg.norm(expected, axis=1, keepdims=True)
    assert_vector_close(directions, expected, tol, "ray directions")


# ---------------------------------------------------------------------------
# Plane charts
# ---------------------------------------------------------------------------

@given(u'the chart of the plane with normal ({nx:g}, {ny:g}, {nz:g}) and offset {d:g} around ({x:g}, {y:g}, {z:g})')
def step_chart(context, nx, ny, nz, d, x, y, z):
    context.plane = Plane((nx, ny, nz), d)
    context.basis = plane_basis(context.plane, (x, y, z))


@then(u'the chart axes are orthonormal and orthogonal to the normal within {tol:g}')
def step_chart_axes(context, tol):
    u, v, n = (np.asarray(a) for a in (context.basis.u_axis, context.basis.v_axis, context.plane.normal))
    assert_close(u @ v, 0.0, tol, "u.v")
    assert_close(np.linalg.norm(u), 1.0, tol, "|u|")
    assert_close(np.linalg.norm(v), 1.0, tol, "|v|")
    assert_close(u @ n, 0.0, tol, "u.n")
    assert_vector_close(np.cross(u, v), n, tol, "u x v")


@then(u'the chart origin maps to ({x:g}, {y:g}) within {tol:g}')
def step_chart_origin(context, x, y, tol):
    assert_vector_close(project_to_plane_2d(context.basis.origin, context.basis), (x, y), tol, "chart origin")


@then(u'the chart point origin + {a:g} u + {b:g} v maps to ({x:g}, {y:g}) within {tol:g}')
def step_chart_point(context, a, b, x, y, tol):
    basis = context.basis
    point = np.asarray(basis.origin) + a * np.asarray(basis.u_axis) + b * np.asarray(basis.v_axis)
    assert_vector_close(project_to_plane_2d(point, basis), (x, y), tol, "chart point")


@given(u'{n:d} random points on the chart plane from seed {seed:d}')
def step_chart_points(context, n, seed):
    rng = np.random.default_rng(seed)
    basis = context.basis
    s = rng.uniform(-10.0, 10.0, (n, 2))
    context.points3d = np.asarray(basis.origin) + s[:, :1] * np.asarray(basis.u_axis) + s[:, 1:] * np.asarray(basis.v_axis)


@then(u'chart distances equal 3D distances within {tol:g}')
def step_chart_isometry(context, tol):
    chart = project_to_plane_2d(context.points3d, context.basis)
    for i in range(len(chart) - 1):
        d2 = np.linalg.norm(chart[i + 1:] - chart[i], axis=1)
        d3 = np.linalg.norm(context.points3d[i + 1:] - context.points3d[i], axis=1)
        assert_vector_close(d2, d3, tol, "pair distances")


# ---------------------------------------------------------------------------
# Rigid fits
# ---------------------------------------------------------------------------

@given(u'{n:d} random 2D points from seed {seed:d}')
def step_random_2d(context, n, seed):
    context.rng = np.random.default_rng(seed)
    context.src = context.rng.uniform(-50.0, 50.0, (n, 2))


@given(u'the points moved by a rotation of {deg:g} degrees and translation ({tx:g}, {ty:g})')
def step_points_moved(context, deg, tx, ty):
    context.dst = Rigid2D(math.radians(deg), (tx, ty)).apply(context.src)


@given(u'the points mirrored across the x axis')
def step_points_mirrored(context):
    context.dst = context.src * np.array([1.0, -1.0])


@given(u'the 2D point pairs')
def step_point_pairs(context):
    context.src = np.array([[float(r['sx']), float(r['sy'])] for r in context.table])
    context.dst = np.array([[float(r['dx']), float(r['dy'])] for r in context.table])


@when(u'I fit a rigid transform from the points to the moved points')
def step_fit_moved(context):
    attempt(context, rigid_fit_2d, context.src, context.dst)


@when(u'I fit a rigid transform to the point pairs')
def step_fit_pairs(context):
    attempt(context, rigid_fit_2d, context.src, context.dst)


@then(u'the fitted transform has angle {deg:g} degrees and translation ({tx:g}, {ty:g}) within {tol:g}')
def step_fitted_transform(context, deg, tx, ty, tol):
    _assert_transform(succeeded(context), math.radians(deg), (tx, ty), tol)


@then(u'the fitted rotation has determinant {det:g} within {tol:g}')
def step_fitted_determinant(context, det, tol):
    assert_close(np.linalg.det(succeeded(context).matrix), det, tol, "determinant")


@then(u'the fit residual is greater than {limit:g}')
def step_fit_residual(context, limit):
    residual = fit_residual(succeeded(context), context.src, context.dst)
    if not residual > limit:
        raise AssertionError(f"fit residual {residual} is not above {limit}")


@then(u'the rigid fit residual does not increase as the noise shrinks through {levels}')
def step_residual_monotone(context, levels):
    moved = Rigid2D(0.4, (7.0, -3.0)).apply(context.src)
    noise = context.rng.normal(0.0, 1.0, moved.shape)
    previous = math.inf
    for sigma in parse_numbers(levels):
        dst = moved + sigma * noise
        residual = fit_residual(rigid_fit_2d(context.src, dst), context.src, dst)
        if residual > previous + 1e-12:
            raise AssertionError(f"residual {residual} at noise {sigma} exceeds {previous}")
        previous = residual
    assert_close(previous, 0.0, 1e-12, "noiseless residual")
