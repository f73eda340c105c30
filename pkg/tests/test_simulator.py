import pickle

import numpy as np
import pytest

from sqmap.config import DEFAULT_CATEGORIES
from sqmap.geometry import CameraIntrinsics, RigidPose, project_quadric
from sqmap.simulator import (CategorySpec, NoiseSpec, OrbitSpec, ScenarioSpec, _draw_alpha, camera_frames,
                             generate_scene, object_scale_bias, orbit_trajectory, render_detections)
from sqmap.association import CameraFrame

CATS = [c.spec() for c in DEFAULT_CATEGORIES]


def spec(seed=1, objects=None, noise=NoiseSpec(), room=(-2, 2, -2, 2), **kw):
    return ScenarioSpec(seed=seed, objects_per_category=objects if objects is not None else {0: 1, 1: 1, 2: 1},
                        room=room, noise=noise, orbit=OrbitSpec(radius=5.0, height=1.8), **kw)


def scene_bytes(sc):
    return pickle.dumps([(o.object_id, o.class_id, o.state.params()) for o in sc.objects])


def det_bytes(dets):
    return pickle.dumps([(d.frame_id, d.class_id, d.score, d.box2d.as_array(), d.sv3d.pose.rotation,
                          d.sv3d.pose.translation, d.sv3d.half_extents, d.gt_object_id) for d in dets])


def test_same_seed_same_scene_and_log():
    s = spec(seed=4)
    a, b = generate_scene(s, CATS), generate_scene(s, CATS)
    assert scene_bytes(a) == scene_bytes(b)
    assert det_bytes(render_detections(a, s)) == det_bytes(render_detections(b, s))
    assert scene_bytes(generate_scene(spec(seed=5), CATS)) != scene_bytes(a)


def test_zero_objects_gives_empty_scene():
    s = spec(objects={0: 0})
    sc = generate_scene(s, CATS)
    assert sc.objects == [] and render_detections(sc, s) == []


def test_objects_upright_separated_and_in_room():
    s = spec(seed=2, objects={0: 3, 1: 3, 2: 3}, room=(-3.5, 3.5, -3.5, 3.5))
    sc = generate_scene(s, CATS)
    assert len(sc.objects) == 9
    for o in sc.objects:
        R = o.state.pose.rotation
        assert np.allclose(R[:, 2], [0, 0, 1], atol=1e-12)
        assert o.state.pose.translation[2] == pytest.approx(o.state.alpha[2])
        corners = o.obb().corners()
        assert np.all(np.abs(corners[:, :2]) <= 3.5 + 1e-9)
        cat = sc.categories[o.class_id]
        assert cat.eps1_range[0] <= o.state.eps1 <= cat.eps1_range[1]
    for i, a in enumerate(sc.objects):
        for b in sc.objects[i + 1:]:
            d = np.linalg.norm(a.state.pose.translation[:2] - b.state.pose.translation[:2])
            ra, rb = np.hypot(*a.state.alpha[:2]), np.hypot(*b.state.alpha[:2])
            assert d >= ra + rb + s.min_gap - 1e-9


def test_crowded_room_raises():
    with pytest.raises(RuntimeError, match="crowded"):
        generate_scene(ScenarioSpec(seed=0, objects_per_category={0: 30}, room=(-1, 1, -1, 1)), CATS)


def test_unknown_class_raises():
    with pytest.raises(ValueError):
        generate_scene(spec(objects={7: 1}), CATS)


def test_size_sample_mean_matches_category():
    cat = CATS[0]
    rng = np.random.default_rng(0)
    draws = np.array([_draw_alpha(rng, cat) for _ in range(10_000)])
    se = np.sqrt(np.diag(cat.sigma0) / len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - cat.mu0) < 3 * se)


def test_noiseless_boxes_equal_projection():
    noise = NoiseSpec(corner_sigma=0.0, sv3d_center_sigma=0, sv3d_rotation_sigma_deg=0, sv3d_scale_sigma=0)
    s = spec(noise=noise)
    sc = generate_scene(s, CATS)
    frames = camera_frames(s)
    dets = render_detections(sc, s, frames)
    assert len(dets) == len(frames) * len(sc.objects)
    by_id = {o.object_id: o for o in sc.objects}
    for d in dets:
        f = frames[d.frame_id]
        obj = by_id[d.gt_object_id]
        assert np.array_equal(d.box2d.as_array(), project_quadric(obj.state, f.pose, f.intrinsics).as_array())
        world = f.pose.inverse().compose(d.sv3d.pose)
        assert np.allclose(world.translation, obj.state.pose.translation, atol=1e-12)
        assert np.allclose(d.sv3d.half_extents, obj.state.alpha)


def test_corner_noise_calibration():
    s = ScenarioSpec(seed=3, objects_per_category={0: 4, 1: 3, 2: 3}, room=(-3.5, 3.5, -3.5, 3.5),
                     orbit=OrbitSpec(radius=6.5, height=1.8, frames=250))
    sc = generate_scene(s, CATS)
    frames = camera_frames(s)
    dets = render_detections(sc, s, frames)
    assert len(dets) >= 2500
    by_id = {o.object_id: o for o in sc.objects}
    resid = []
    for d in dets:
        f = frames[d.frame_id]
        clean = project_quadric(by_id[d.gt_object_id].state, f.pose, f.intrinsics).as_array()
        resid.append(d.box2d.as_array() - clean)
    resid = np.concatenate(resid)
    # boxes are re-sorted after noise, which can only matter for boxes a few px wide
    assert abs(resid.std() - np.sqrt(20)) < 0.05 * np.sqrt(20)
    assert abs(resid.mean()) < 3 * np.sqrt(20) / np.sqrt(len(resid))


def test_dropout_all_removes_every_detection():
    s = spec(noise=NoiseSpec(dropout=1.0))
    assert render_detections(generate_scene(s, CATS), s) == []


def test_object_behind_camera_is_not_detected():
    s = spec()
    sc = generate_scene(s, CATS)
    K = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)
    eye = np.array([6.0, 0.0, 0.4])
    # camera axes (x right, y down, z forward) for a camera looking along +x, then along -x
    away = np.array([[0, -1, 0], [0, 0, -1], [1, 0, 0]], dtype=float)
    toward = np.array([[0, 1, 0], [0, 0, -1], [-1, 0, 0]], dtype=float)
    frames = [CameraFrame(0, RigidPose(away, -away @ eye), K), CameraFrame(1, RigidPose(toward, -toward @ eye), K)]
    dets = render_detections(sc, s, frames)
    assert [d.frame_id for d in dets] == [1] * len(sc.objects)


def test_scale_bias_stream():
    assert object_scale_bias(1, 0, 0.0) == 1.0
    a = object_scale_bias(1, 0, 0.3)
    assert a == object_scale_bias(1, 0, 0.3) != object_scale_bias(1, 1, 0.3)


def test_noise_and_category_validation():
    with pytest.raises(ValueError):
        NoiseSpec(dropout=1.5)
    with pytest.raises(ValueError):
        NoiseSpec(corner_sigma=-1)
    with pytest.raises(ValueError):
        CategorySpec(0, "x", [0.1, 0.1, -0.1], np.eye(3))
    with pytest.raises(np.linalg.LinAlgError):
        CategorySpec(0, "x", [0.1, 0.1, 0.1], -np.eye(3))


# --- orbit ---------------------------------------------------------------------------

def test_orbit_four_frames_at_quarter_turns():
    center = np.array([0.5, -0.2, 0.4])
    poses = orbit_trajectory(center, 2.0, 1.5, 4)
    eyes = [p.inverse().translation for p in poses]
    angles = [np.degrees(np.arctan2(e[1] - center[1], e[0] - center[0])) % 360 for e in eyes]
    assert np.allclose(angles, [0, 90, 180, 270], atol=1e-9)
    assert not np.allclose(eyes[0], eyes[-1])


@pytest.mark.parametrize("amplitude", [0.0, 0.4])
def test_orbit_optical_axis_hits_center(amplitude):
    center = np.array([0.3, 0.1, 0.4])
    for p in orbit_trajectory(center, 4.0, 1.8, 30, amplitude):
        c = p.transform(center)
        assert abs(c[0]) < 1e-9 and abs(c[1]) < 1e-9 and c[2] > 0
        R = p.rotation
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)


def test_orbit_invalid_arguments():
    with pytest.raises(ValueError):
        orbit_trajectory((0, 0, 0), 0.0, 1.0, 4)
    with pytest.raises(ValueError):
        orbit_trajectory((0, 0, 0), 1.0, 1.0, 1)


def test_noiseless_log_closes_on_ground_truth():
    from sqmap.config import RunConfig
    from sqmap.evaluation import iou3d
    from sqmap.experiments import map_and_evaluate, simulate
    from sqmap.geometry import enclosing_obb

    cfg = RunConfig(seed=2).with_overrides(scenario={"noise": {
        "corner_sigma": 0.0, "dropout": 0.0, "sv3d_center_sigma": 0.0, "sv3d_rotation_sigma_deg": 0.0,
        "sv3d_scale_sigma": 0.0}})
    scene, frames, dets = simulate(cfg)
    res, _ = map_and_evaluate(cfg, scene, frames, dets)
    assert len(res.tracks) == len(scene.objects)
    for o in scene.objects:
        best = max(iou3d(enclosing_obb(t.estimate), o.obb()) for t in res.tracks)
        assert best >= 0.85
