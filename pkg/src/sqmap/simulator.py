"""Deterministic synthetic scenes, orbit trajectories and noisy detection logs.

Scene generation draws from a single ``numpy.random.PCG64`` stream seeded
with the scenario seed. Rendering derives one stream per frame from
``(seed, frame_id)`` so frames can be rendered independently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .association import CameraFrame, Detection
from .geometry import (ALPHA_MIN, EPS_MAX, EPS_MIN, Box2D, CameraIntrinsics, OrientedBox3D,
                       RigidPose, SuperQuadricState, VisibilityError, project_quadric,
                       sample_directions, so3_exp)

RNG_NAME = "numpy.random.PCG64"
MAX_PLACEMENT_ATTEMPTS = 10_000


@dataclass(frozen=True, eq=False)
class CategorySpec:
    class_id: int
    name: str
    mu0: np.ndarray
    sigma0: np.ndarray
    eps1_range: tuple[float, float] = (0.1, 1.9)
    eps2_range: tuple[float, float] = (0.1, 1.9)

    def __post_init__(self):
        mu0 = np.array(self.mu0, dtype=float).reshape(3)
        sigma0 = np.array(self.sigma0, dtype=float).reshape(3, 3)
        if np.any(mu0 <= 0):
            raise ValueError(f"category {self.name}: mu0 must be positive")
        np.linalg.cholesky(sigma0)
        for lo, hi in (self.eps1_range, self.eps2_range):
            if not EPS_MIN <= lo <= hi <= EPS_MAX:
                raise ValueError(f"category {self.name}: eps range must lie in [{EPS_MIN}, {EPS_MAX}]")
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "sigma0", sigma0)


@dataclass(frozen=True)
class NoiseSpec:
    corner_sigma: float = float(np.sqrt(20.0))
    dropout: float = 0.0
    sv3d_center_sigma: float = 0.15
    sv3d_rotation_sigma_deg: float = 10.0
    sv3d_scale_sigma: float = 0.15
    score_range: tuple[float, float] = (0.6, 1.0)
    # log-std of a per-object size misjudgement shared by all of its single-view boxes
    sv3d_object_scale_sigma: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.dropout <= 1.0:
            raise ValueError("dropout must be a probability")
        for name in ("corner_sigma", "sv3d_center_sigma", "sv3d_rotation_sigma_deg", "sv3d_scale_sigma",
                     "sv3d_object_scale_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class OrbitSpec:
    center: tuple[float, float, float] = (0.0, 0.0, 0.4)
    radius: float = 3.5
    height: float = 1.6
    frames: int = 30
    height_amplitude: float = 0.0
    height_cycles: int = 3


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int
    objects_per_category: dict[int, int] = field(default_factory=dict)
    room: tuple[float, float, float, float] = (-1.5, 1.5, -1.5, 1.5)  # xmin, xmax, ymin, ymax
    min_gap: float = 0.1
    orbit: OrbitSpec = field(default_factory=OrbitSpec)
    intrinsics: CameraIntrinsics = field(default_factory=lambda: CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480))
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    sample_count: int = 1000


@dataclass(frozen=True, eq=False)
class GroundTruthObject:
    object_id: int
    class_id: int
    state: SuperQuadricState

    def obb(self) -> OrientedBox3D:
        return OrientedBox3D(self.state.pose, self.state.alpha)


@dataclass(eq=False)
class Scene:
    objects: list[GroundTruthObject]
    categories: dict[int, CategorySpec]


# --------------------------------------------------------------------------

def _draw_alpha(rng: np.random.Generator, cat: CategorySpec) -> np.ndarray:
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        a = rng.multivariate_normal(cat.mu0, cat.sigma0)
        if np.all(a >= ALPHA_MIN):
            return a
    raise RuntimeError(f"could not draw a valid size for category {cat.name}")


def generate_scene(spec: ScenarioSpec, categories: Sequence[CategorySpec]) -> Scene:
    """Upright objects with category-sampled sizes on a floor at ``z = 0``.

    Objects are placed so their bounding circles (plus ``min_gap``) do not
    overlap, which also keeps their enclosing boxes disjoint.
    """
    rng = np.random.default_rng(spec.seed)
    cats = {c.class_id: c for c in categories}
    xmin, xmax, ymin, ymax = spec.room
    objects: list[GroundTruthObject] = []
    placed: list[tuple[np.ndarray, float]] = []
    for class_id in sorted(spec.objects_per_category):
        if class_id not in cats:
            raise ValueError(f"scenario references unknown class id {class_id}")
        cat = cats[class_id]
        for _ in range(spec.objects_per_category[class_id]):
            alpha = _draw_alpha(rng, cat)
            e1 = rng.uniform(*cat.eps1_range)
            e2 = rng.uniform(*cat.eps2_range)
            yaw = rng.uniform(-np.pi, np.pi)
            radius = float(np.hypot(alpha[0], alpha[1]))
            for _ in range(MAX_PLACEMENT_ATTEMPTS):
                xy = rng.uniform([xmin + radius, ymin + radius], [xmax - radius, ymax - radius]) \
                    if xmax - xmin > 2 * radius and ymax - ymin > 2 * radius else None
                if xy is not None and all(np.linalg.norm(xy - c) >= radius + r + spec.min_gap for c, r in placed):
                    break
            else:
                raise RuntimeError("room too crowded: object placement failed")
            placed.append((xy, radius))
            pose = RigidPose(so3_exp([0.0, 0.0, yaw]), [xy[0], xy[1], alpha[2]])
            state = SuperQuadricState(pose, alpha, e1, e2)
            objects.append(GroundTruthObject(len(objects), class_id, state))
    return Scene(objects, cats)


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> RigidPose:
    """World-to-camera pose of a camera at ``eye`` whose optical axis hits ``target``."""
    eye = np.asarray(eye, dtype=float)
    z = np.asarray(target, dtype=float) - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, up)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R_wc = np.stack([x, y, z], axis=1)
    return RigidPose(R_wc.T, -R_wc.T @ eye)


def orbit_trajectory(center, radius: float, height: float, frames: int,
                     height_amplitude: float = 0.0, height_cycles: int = 3) -> list[RigidPose]:
    """Cameras on a circle around ``center``, all looking at it.

    Camera ``k`` sits at angle ``a = 2 pi k / frames`` and height
    ``height + height_amplitude * sin(height_cycles * a)`` above the floor.
    A non-zero amplitude mimics the vertical bobbing of a handheld scan.
    """
    if radius <= 0 or frames < 2:
        raise ValueError("need radius > 0 and at least 2 frames")
    c = np.asarray(center, dtype=float)
    poses = []
    for k in range(frames):
        a = 2.0 * np.pi * k / frames
        z = height + height_amplitude * np.sin(height_cycles * a)
        eye = np.array([c[0] + radius * np.cos(a), c[1] + radius * np.sin(a), z])
        poses.append(look_at(eye, c))
    return poses


def camera_frames(spec: ScenarioSpec) -> list[CameraFrame]:
    o = spec.orbit
    return [CameraFrame(k, pose, spec.intrinsics)
            for k, pose in enumerate(orbit_trajectory(o.center, o.radius, o.height, o.frames,
                                                       o.height_amplitude, o.height_cycles))]


def frame_rng(seed: int, frame_id: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, frame_id])))


_BIAS_STREAM = 0x5EED_B1A5


def object_scale_bias(seed: int, object_id: int, sigma: float) -> float:
    """Persistent single-view scale factor of one object (1 when ``sigma`` is 0)."""
    if sigma == 0.0:
        return 1.0
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, _BIAS_STREAM, object_id])))
    return float(np.exp(rng.normal(0.0, sigma)))


def _overlaps_image(box: Box2D, K: CameraIntrinsics) -> bool:
    return box.xmax > 0 and box.xmin < K.width and box.ymax > 0 and box.ymin < K.height


def render_detections(scene: Scene, spec: ScenarioSpec, frames: Sequence[CameraFrame] | None = None) -> list[Detection]:
    """Noisy 2D boxes plus perturbed single-view 3D boxes for every visible object.

    A detection's box is the projected silhouette box with independent
    Gaussian noise on each of its four coordinates. Objects crossing the
    camera near plane or projecting outside the image are not detected.
    """
    if frames is None:
        frames = camera_frames(spec)
    nz = spec.noise
    rot_sigma = np.deg2rad(nz.sv3d_rotation_sigma_deg)
    samples = [sample_directions(o.state.alpha, o.state.eps1, o.state.eps2, spec.sample_count)
               for o in scene.objects]
    bias = [object_scale_bias(spec.seed, o.object_id, nz.sv3d_object_scale_sigma) for o in scene.objects]
    dets: list[Detection] = []
    for frame in frames:
        rng = frame_rng(spec.seed, frame.frame_id)
        for obj, smp, k in zip(scene.objects, samples, bias):
            # fixed draw order per object keeps every stream aligned
            drop = rng.random() < nz.dropout
            corner_noise = rng.normal(0.0, 1.0, 4) * nz.corner_sigma
            score = rng.uniform(*nz.score_range)
            d_center = rng.normal(0.0, 1.0, 3) * nz.sv3d_center_sigma
            d_rot = rng.normal(0.0, 1.0, 3) * rot_sigma
            d_scale = rng.normal(0.0, 1.0, 3) * nz.sv3d_scale_sigma
            try:
                box = project_quadric(obj.state, frame.pose, frame.intrinsics, samples=smp)
            except VisibilityError:
                continue
            if drop or not _overlaps_image(box, frame.intrinsics):
                continue
            b = box.as_array() + corner_noise
            b = np.concatenate([np.sort(b[:2]), np.sort(b[2:])])
            cam_pose = frame.pose.compose(obj.state.pose)
            sv_pose = RigidPose(so3_exp(d_rot) @ cam_pose.rotation, cam_pose.translation + d_center)
            sv_extent = np.maximum(k * obj.state.alpha * (1.0 + d_scale), ALPHA_MIN)
            dets.append(Detection(frame.frame_id, Box2D.from_array(b), obj.class_id, float(score),
                                  OrientedBox3D(sv_pose, sv_extent), obj.object_id))
    return dets
