"""Seeded synthetic experiments shared by the benchmark scripts and acceptance tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .association import sv3d_to_world
from .config import RunConfig
from .evaluation import EvalReport, evaluate_run, iou3d
from .geometry import RigidPose, SuperQuadricState, enclosing_obb, so3_exp
from .optimizer import Observation, initialize, optimize_object
from .pipeline import MapResult, build_map
from .simulator import GroundTruthObject, Scene, camera_frames, generate_scene, render_detections


def simulate(cfg: RunConfig):
    spec = cfg.scenario_spec()
    scene = generate_scene(spec, [c.spec() for c in cfg.categories])
    frames = camera_frames(spec)
    return scene, frames, render_detections(scene, spec, frames)


def map_and_evaluate(cfg: RunConfig, scene: Scene, frames, dets) -> tuple[MapResult, EvalReport]:
    res = build_map(frames, dets, cfg.priors(), cfg.optimizer.spec(), cfg.mapper_settings())
    preds = [(enclosing_obb(t.estimate), t.class_id) for t in res.tracks]
    gts = [(o.obb(), o.class_id) for o in scene.objects]
    report = evaluate_run(preds, gts, cfg.class_names(), res.matching_accuracy,
                          thresholds=cfg.evaluation.thresholds)
    return res, report


def perturb_state(q: SuperQuadricState, rng: np.random.Generator, shift: float = 0.1,
                  angle_deg: float = 10.0, scale: float = 0.2) -> SuperQuadricState:
    """Move ``q`` by ``shift`` m and ``angle_deg`` about random directions, scale each
    half-extent by ``1 +- scale`` and reset both exponents to 1."""
    d = rng.normal(size=3)
    axis = rng.normal(size=3)
    signs = rng.choice([-1.0, 1.0], size=3)
    R = so3_exp(np.deg2rad(angle_deg) * axis / np.linalg.norm(axis)) @ q.pose.rotation
    t = q.pose.translation + shift * d / np.linalg.norm(d)
    return SuperQuadricState(RigidPose(R, t), q.alpha * (1.0 + scale * signs), 1.0, 1.0)


@dataclass(frozen=True)
class TrialResult:
    iou: float
    init_iou: float
    initial_objective: float
    best_objective: float


def object_trial(cfg: RunConfig, obj: GroundTruthObject, frames, dets, init: str = "single_view",
                 rng: np.random.Generator | None = None) -> TrialResult:
    """Fit one object from its own detections (known association).

    ``init`` is ``"single_view"`` (average of the detections' 3D boxes) or
    ``"perturbed"`` (ground truth moved by 10 cm / 10 deg / 20 % scale).
    """
    by_frame = {f.frame_id: f for f in frames}
    own = [d for d in dets if d.gt_object_id == obj.object_id]
    obs = [Observation(d.frame_id, by_frame[d.frame_id].pose, by_frame[d.frame_id].intrinsics, d.box2d)
           for d in own]
    if init == "perturbed":
        q0 = perturb_state(obj.state, rng if rng is not None else np.random.default_rng(cfg.seed))
    else:
        q0 = initialize([sv3d_to_world(d, by_frame[d.frame_id]) for d in own])
    opt = cfg.optimizer.spec()
    prior = cfg.priors()[obj.class_id] if opt.prior_enabled else None
    res = optimize_object(q0, obs, prior, opt, "final")
    gt = obj.obb()
    return TrialResult(iou3d(enclosing_obb(res.state), gt), iou3d(enclosing_obb(q0), gt),
                       res.initial_objective, res.best_objective)


def single_object_config(cfg: RunConfig, category: str, corner_sigma: float | None = None,
                         orbit_radius: float = 3.5, **optimizer) -> RunConfig:
    """A one-object scene of ``category`` seen from a close orbit, with optional
    corner noise and optimizer overrides."""
    sc = cfg.scenario
    noise = {} if corner_sigma is None else {"corner_sigma": corner_sigma}
    return cfg.with_overrides(
        scenario={"objects": {category: 1}, "room": [-0.8, 0.8, -0.8, 0.8],
                  "orbit": {**sc.orbit.model_dump(), "radius": orbit_radius},
                  "noise": {**sc.noise.model_dump(), **noise}},
        optimizer=optimizer,
    )


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    return cfg.with_overrides(seed=seed)
