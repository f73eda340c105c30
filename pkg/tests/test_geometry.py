import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import (ellipsoid_box, farthest_point_sample, implicit, nn_spacing_cv,
                     radial_surface_points, sphere_silhouette_halfwidth)
from sqmap.geometry import (Box2D, CameraIntrinsics, OrientedBox3D, RigidPose, SuperQuadricState,
                            VisibilityError, box_corners, box_of_points, enclosing_obb, implicit_value,
                            nearest_rotation, parametric_grid, project_point, project_quadric,
                            sample_directions, sample_surface, se3_compose, se3_inverse, se3_transform,
                            so3_exp, so3_log)

alphas = st.tuples(*[st.floats(0.05, 3.0)] * 3)
exps = st.floats(0.1, 1.9)
rotvecs = st.tuples(*[st.floats(-3.0, 3.0)] * 3)


def state(alpha=(1, 1, 1), e1=1.0, e2=1.0, R=None, t=(0, 0, 0)):
    return SuperQuadricState(RigidPose(np.eye(3) if R is None else R, t), alpha, e1, e2)


# --- rigid transforms -------------------------------------------------------

@given(rotvecs, rotvecs)
def test_compose_with_inverse_is_identity(w, t):
    P = RigidPose(so3_exp(w), t)
    I = se3_compose(P, se3_inverse(P))
    assert np.allclose(I.rotation, np.eye(3), atol=1e-9)
    assert np.allclose(I.translation, 0, atol=1e-9)


def test_compose_identity_and_transform():
    P = RigidPose(so3_exp([0.1, 0.2, 0.3]), [1, 2, 3])
    Q = se3_compose(RigidPose.identity(), P)
    assert np.allclose(Q.rotation, P.rotation) and np.allclose(Q.translation, P.translation)
    assert np.allclose(se3_transform(RigidPose(np.eye(3), [1, 2, 3]), np.zeros(3)), [1, 2, 3])


def test_rejects_non_orthonormal_rotation():
    with pytest.raises(ValueError):
        RigidPose(np.diag([1.0, 1.0, 1.1]), np.zeros(3))
    with pytest.raises(ValueError):
        RigidPose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


@given(rotvecs)
def test_quaternion_round_trip(w):
    P = RigidPose(so3_exp(w), [0.5, -1, 2])
    q = P.quaternion()
    assert abs(np.linalg.norm(q) - 1) < 1e-12 and q[0] >= 0
    assert np.allclose(RigidPose.from_quaternion(q, P.translation).rotation, P.rotation, atol=1e-12)


@given(st.tuples(*[st.floats(-2.5, 2.5)] * 3))
def test_so3_log_inverts_exp(w):
    R = so3_exp(w)
    assert np.allclose(so3_exp(so3_log(R)), R, atol=1e-10)


def test_nearest_rotation_repairs_drift():
    R = so3_exp([0.3, -0.2, 0.9])
    noisy = R + 1e-4 * np.random.default_rng(0).normal(size=(3, 3))
    Rn = nearest_rotation(noisy)
    assert np.allclose(Rn.T @ Rn, np.eye(3), atol=1e-12) and np.linalg.det(Rn) > 0


# --- implicit function and sampling ----------------------------------------

@pytest.mark.parametrize("x, expected", [((1, 0, 0), 1.0), ((0, 0, 0), 0.0),
                                         ((1 / np.sqrt(3),) * 3, 1.0)])
def test_implicit_examples(x, expected):
    assert implicit_value(state(), x) == pytest.approx(expected, abs=1e-12)


def test_implicit_rejects_non_finite():
    with pytest.raises(ValueError):
        implicit_value(state(), [np.nan, 0, 0])


def test_implicit_inside_outside():
    q = state((1, 2, 3), 0.5, 1.5)
    assert implicit_value(q, [0.1, 0.1, 0.1]) < 1 < implicit_value(q, [1.1, 0, 0])


def test_sample_surface_sphere_radius():
    pts = sample_surface((1, 1, 1), 1.0, 1.0, 1000)
    assert np.allclose(np.linalg.norm(pts, axis=1), 1.0, atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(alphas, exps, exps)
def test_samples_on_surface_and_contained(alpha, e1, e2):
    pts = sample_surface(alpha, e1, e2, 1000)
    assert np.max(np.abs(implicit(alpha, e1, e2, pts) - 1)) <= 1e-6
    assert np.all(np.abs(pts) <= np.asarray(alpha) + 1e-9)
    assert 0.8 * 1000 <= len(pts) <= 1.2 * 1000


@settings(max_examples=25, deadline=None)
@given(alphas, exps, exps)
def test_axis_extremes_included_once(alpha, e1, e2):
    pts = sample_surface(alpha, e1, e2, 500)
    a = np.asarray(alpha)
    for axis in range(3):
        for sign in (-1, 1):
            target = np.zeros(3)
            target[axis] = sign * a[axis]
            hits = np.sum(np.all(np.abs(pts - target) < 1e-12, axis=1))
            assert hits == 1
    # no duplicated points anywhere (poles appear once)
    assert len(np.unique(np.round(pts, 12), axis=0)) == len(pts)


def test_sample_count_lower_bound():
    with pytest.raises(ValueError):
        sample_directions((1, 1, 1), 1.0, 1.0, 25)
    assert len(sample_directions((1, 1, 1), 1.0, 1.0, 26)) >= 6


def test_spacing_uniformity_against_farthest_point_reference():
    alpha, e1, e2 = (1, 2, 3), 0.5, 0.5
    ours = nn_spacing_cv(sample_surface(alpha, e1, e2, 1000))
    ref = nn_spacing_cv(farthest_point_sample(radial_surface_points(alpha, e1, e2, 50_000), 1000))
    assert ours < 0.5
    assert ours < ref + 0.1


def test_parametric_grid_counts_and_surface():
    pts = parametric_grid((0.5, 0.7, 0.9), 0.4, 1.3, 32, 64)
    assert pts.shape == (2048, 3)
    assert np.max(np.abs(implicit((0.5, 0.7, 0.9), 0.4, 1.3, pts) - 1)) < 1e-9


# --- projection ---------------------------------------------------------------

K250 = CameraIntrinsics(500, 500, 250, 250, 500, 500)


@pytest.mark.parametrize("x, uv", [((0, 0, 5), (250, 250)), ((1, 0, 5), (350, 250)), ((0, -1, 2), (250, 0))])
def test_project_point_examples(x, uv):
    assert np.allclose(project_point(K250, x), uv)


def test_project_point_behind_camera():
    with pytest.raises(VisibilityError):
        project_point(K250, (0, 0, -1))


def test_box_of_points_examples():
    assert np.allclose(box_of_points([(100, 50), (120, 40), (110, 60)]).as_array(), [100, 120, 40, 60])
    assert np.allclose(box_of_points([(5, 7)]).as_array(), [5, 5, 7, 7])
    with pytest.raises(ValueError):
        box_of_points(np.zeros((0, 2)))


@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=1, max_size=20),
       st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), max_size=20))
def test_box_monotone_under_superset(pts, extra):
    assert box_of_points(pts + extra).contains(box_of_points(pts))


def test_sphere_silhouette_closed_form():
    q = state(t=(0, 0, 5))
    box = project_quadric(q, RigidPose.identity(), K250, 1000)
    h = sphere_silhouette_halfwidth(500, 1.0, 5.0)
    exact = np.array([250 - h, 250 + h, 250 - h, 250 + h])
    assert np.allclose(exact, [147.94, 352.06, 147.94, 352.06], atol=0.01)
    b = box.as_array()
    assert np.all(b[[0, 2]] >= exact[[0, 2]] - 1e-9) and np.all(b[[1, 3]] <= exact[[1, 3]] + 1e-9)
    assert np.max(np.abs(b - exact)) < 0.5


def test_random_ellipsoids_match_dual_conic(K):
    rng = np.random.default_rng(7)
    for _ in range(20):
        alpha = rng.uniform(0.1, 0.8, 3)
        R = so3_exp(rng.normal(size=3))
        t = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.4, 0.4), rng.uniform(3.0, 6.0)])
        q = state(alpha, 1.0, 1.0, R, t)
        b = project_quadric(q, RigidPose.identity(), K).as_array()
        ref = ellipsoid_box(R, t, alpha, np.eye(3), np.zeros(3), (K.fx, K.fy, K.cx, K.cy))
        inner = np.array([b[0] - ref[0], ref[1] - b[1], b[2] - ref[2], ref[3] - b[3]])
        assert np.all(inner >= -1e-6) and np.all(inner < 1.0)


def test_near_cuboid_matches_corner_projection(K):
    # at eps = 0.1 the surface corner sits at ~0.93 of the box corner, so the
    # 2 px agreement holds for objects spanning up to roughly 40 px
    rng = np.random.default_rng(3)
    for _ in range(20):
        alpha = rng.uniform(0.1, 0.2, 3)
        R = so3_exp(rng.normal(size=3))
        t = np.array([0.1, -0.1, rng.uniform(5.0, 7.0)])
        q = state(alpha, 0.1, 0.1, R, t)
        b = project_quadric(q, RigidPose.identity(), K).as_array()
        corners = box_corners(alpha) @ R.T + t
        ref = box_of_points(project_point(K, corners)).as_array()
        assert np.max(np.abs(b - ref)) < 2.0


def test_projection_near_plane_raises(K):
    q = state((1, 1, 1), t=(0, 0, 1.0))
    with pytest.raises(VisibilityError):
        project_quadric(q, RigidPose.identity(), K)


def test_enclosing_obb_examples():
    R = so3_exp([0, 0, 0.7])
    q = state((1, 2, 3), 0.3, 1.7, R, (1, 1, 1))
    obb = enclosing_obb(q)
    assert np.allclose(obb.half_extents, [1, 2, 3]) and np.allclose(obb.pose.rotation, R)
    assert np.allclose(enclosing_obb(state()).half_extents, 1)


@settings(max_examples=20, deadline=None)
@given(alphas, exps, exps, rotvecs)
def test_implicit_and_obb_pose_invariant(alpha, e1, e2, w):
    x = np.array([0.3, -0.2, 0.1])
    q1 = state(alpha, e1, e2)
    q2 = state(alpha, e1, e2, so3_exp(w), (4, 5, 6))
    assert implicit_value(q1, x) == implicit_value(q2, x)
    assert np.array_equal(enclosing_obb(q1).half_extents, enclosing_obb(q2).half_extents)


def test_state_invariants():
    with pytest.raises(ValueError):
        state((0.005, 1, 1))
    with pytest.raises(ValueError):
        state(e1=2.0)
    with pytest.raises(ValueError):
        Box2D(2, 1, 0, 1)
    with pytest.raises(ValueError):
        OrientedBox3D(RigidPose.identity(), (1, 0, 1))
    with pytest.raises(ValueError):
        CameraIntrinsics(0, 500, 0, 0, 10, 10)


def test_box2d_iou():
    a, b = Box2D(0, 10, 0, 10), Box2D(5, 15, 0, 10)
    assert a.iou(b) == pytest.approx(1 / 3)
    assert a.iou(a) == 1.0 and a.iou(Box2D(20, 30, 0, 1)) == 0.0
