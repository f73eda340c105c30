"""MAP estimation of a super-quadric from associated 2D boxes and a scale prior.

The objective is the negative log posterior (constants dropped)::

    E = sum_i |b_i - box_i(theta)|^2 / (2 sigma^2) + 1/2 (a - mu0)^T Sigma0^-1 (a - mu0)

where ``box_i`` projects the sampled surface into frame ``i``. Gradients are
analytic: the min/max of the box are differentiated through the extreme
sample points, with the sample directions held fixed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np

from .geometry import (ALPHA_MIN, EPS_MAX, EPS_MIN, MIN_DEPTH, Box2D, CameraIntrinsics,
                       OrientedBox3D, RigidPose, SuperQuadricState, SurfaceSamples, box_corners,
                       hat, nearest_rotation, sample_directions, so3_exp)

log = logging.getLogger(__name__)

ShapeMode = Literal["superquadric", "ellipsoid", "cuboid", "no_optimization"]
SHAPE_MODES = ("superquadric", "ellipsoid", "cuboid", "no_optimization")
Trigger = Literal["none", "incremental", "final"]

_CORNER_SIGNS = box_corners(np.ones(3))


class NoUsableObservations(ValueError):
    """Every observation of an object was rejected as not visible."""


@dataclass(frozen=True, eq=False)
class Observation:
    frame_id: int
    cam_pose: RigidPose
    intrinsics: CameraIntrinsics
    box: Box2D

    def __post_init__(self):
        if np.any(np.abs(self.box.as_array()) > 1e6):
            raise ValueError("box coordinates outside the sanity range")


@dataclass(frozen=True, eq=False)
class ScalePrior:
    class_id: int
    mu0: np.ndarray
    sigma0: np.ndarray

    def __post_init__(self):
        mu0 = np.array(self.mu0, dtype=float).reshape(3)
        sigma0 = np.array(self.sigma0, dtype=float).reshape(3, 3)
        if np.any(mu0 <= 0):
            raise ValueError("prior mean must be positive")
        if not np.allclose(sigma0, sigma0.T):
            raise ValueError("prior covariance must be symmetric")
        np.linalg.cholesky(sigma0)  # raises LinAlgError unless SPD
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "sigma0", sigma0)
        object.__setattr__(self, "precision", np.linalg.inv(sigma0))


@dataclass(frozen=True)
class OptimizerConfig:
    sigma2: float = 20.0
    sample_count: int = 1000
    iters_per_round: int = 20
    obs_per_round: int = 50
    final_iters: int = 200
    lr_translation: float = 0.01
    lr_rotation: float = 0.005
    lr_alpha: float = 0.01
    lr_eps: float = 0.05
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    prior_enabled: bool = True
    shape_mode: ShapeMode = "superquadric"
    upright_only: bool = False

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        for name in ("sample_count", "iters_per_round", "obs_per_round", "final_iters"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.shape_mode not in SHAPE_MODES:
            raise ValueError(f"unknown shape mode {self.shape_mode!r}")

    def learning_rates(self) -> np.ndarray:
        return np.repeat([self.lr_translation, self.lr_rotation, self.lr_alpha, self.lr_eps], [3, 3, 3, 2])


# --------------------------------------------------------------------------
# initialization
# --------------------------------------------------------------------------

def initialize(single_view_boxes: Sequence[OrientedBox3D]) -> SuperQuadricState:
    """Average of world-frame single-view boxes, with both exponents set to 1."""
    if len(single_view_boxes) == 0:
        raise ValueError("need at least one single-view box to initialize")
    centers = np.array([b.pose.translation for b in single_view_boxes])
    rotations = np.array([b.pose.rotation for b in single_view_boxes])
    extents = np.array([b.half_extents for b in single_view_boxes])
    R = nearest_rotation(rotations.mean(axis=0))
    alpha = np.maximum(extents.mean(axis=0), ALPHA_MIN)
    return SuperQuadricState(RigidPose(R, centers.mean(axis=0)), alpha, 1.0, 1.0)


# --------------------------------------------------------------------------
# objective and gradient
# --------------------------------------------------------------------------

class ObservationBatch:
    """Observations stacked into arrays once, for repeated objective evaluations."""

    def __init__(self, Rc, tc, fx, fy, cx, cy, boxes):
        self.Rc, self.tc, self.boxes = Rc, tc, boxes
        self.fx, self.fy, self.cx, self.cy = fx, fy, cx, cy

    @classmethod
    def of(cls, obs: Sequence[Observation]) -> ObservationBatch:
        if len(obs) == 0:
            raise NoUsableObservations("no observations")
        col = lambda vals: np.array(vals, dtype=float)[:, None]
        return cls(np.stack([o.cam_pose.rotation for o in obs]),
                   np.stack([o.cam_pose.translation for o in obs]),
                   col([o.intrinsics.fx for o in obs]), col([o.intrinsics.fy for o in obs]),
                   col([o.intrinsics.cx for o in obs]), col([o.intrinsics.cy for o in obs]),
                   np.stack([o.box.as_array() for o in obs]))

    def __len__(self) -> int:
        return len(self.Rc)


@dataclass
class ObjectiveValue:
    value: float
    data_term: float
    prior_term: float
    skipped: int
    grad: np.ndarray | None = None
    predicted: np.ndarray | None = None  # (n_used, 4) projected boxes


def _canonical(q: SuperQuadricState, cfg: OptimizerConfig, samples: SurfaceSamples | None):
    """Canonical points plus the per-point factors needed for the chain rule."""
    if cfg.shape_mode == "cuboid":
        basis = _CORNER_SIGNS
        zeros = np.zeros_like(basis)
        return basis * q.alpha, basis, zeros, zeros
    if samples is None:
        samples = sample_directions(q.alpha, q.eps1, q.eps2, cfg.sample_count)
    basis = samples.basis(q.eps1, q.eps2)
    le, lw = samples.log_factors()
    return basis * q.alpha, basis, le, lw


def evaluate_objective(q: SuperQuadricState, obs: Sequence[Observation] | ObservationBatch, prior: ScalePrior | None,
                       cfg: OptimizerConfig, samples: SurfaceSamples | None = None,
                       with_grad: bool = True) -> ObjectiveValue:
    """Negative log posterior, optionally with its 11-component subgradient.

    Gradient layout: translation (3), left-composed rotation increment (3),
    alpha (3), eps1, eps2. ``samples`` fixes the surface sample directions;
    by default they are regenerated for the current shape.
    """
    batch = obs if isinstance(obs, ObservationBatch) else ObservationBatch.of(obs)
    X, basis, le, lw = _canonical(q, cfg, samples)
    R, t = q.pose.rotation, q.pose.translation
    # object-to-camera for every frame at once: one (3N, 3) x (3, M) product
    A = batch.Rc @ R
    off = batch.Rc @ t + batch.tc
    pc = (A.reshape(-1, 3) @ X.T).reshape(len(batch), 3, len(X))
    pc += off[:, :, None]
    visible = np.all(pc[:, 2] > MIN_DEPTH, axis=1)
    skipped = int(np.count_nonzero(~visible))
    if skipped == len(batch):
        raise NoUsableObservations(f"all {len(batch)} observations are behind the camera")
    if skipped:
        idx = np.flatnonzero(visible)
        pc, Rc, fx, fy, cx, cy, target = (a[idx] for a in (pc, batch.Rc, batch.fx, batch.fy, batch.cx,
                                                           batch.cy, batch.boxes))
    else:
        Rc, fx, fy, cx, cy, target = batch.Rc, batch.fx, batch.fy, batch.cx, batch.cy, batch.boxes
    inv_z = 1.0 / pc[:, 2]
    u = pc[:, 0] * inv_z
    u *= fx
    u += cx
    v = pc[:, 1] * inv_z
    v *= fy
    v += cy

    n = len(pc)
    rows = np.arange(n)
    ext = np.stack([u.argmin(axis=1), u.argmax(axis=1), v.argmin(axis=1), v.argmax(axis=1)], axis=1)
    pred = np.stack([u[rows, ext[:, 0]], u[rows, ext[:, 1]], v[rows, ext[:, 2]], v[rows, ext[:, 3]]], axis=1)
    resid = pred - target
    data = float(np.sum(resid**2) / (2.0 * cfg.sigma2))

    prior_term = 0.0
    d = None
    if cfg.prior_enabled and prior is not None:
        d = q.alpha - prior.mu0
        prior_term = float(0.5 * d @ prior.precision @ d)

    result = ObjectiveValue(data + prior_term, data, prior_term, skipped, predicted=pred)
    if not with_grad:
        return result

    # d(pixel)/d(camera point) for each of the 4 box extremes of every frame
    p_ext = pc.transpose(0, 2, 1)[rows[:, None], ext]    # (n, 4, 3)
    ze = p_ext[:, :, 2]
    dpix = np.zeros((n, 4, 3))
    dpix[:, :2, 0] = fx / ze[:, :2]
    dpix[:, :2, 2] = -fx * p_ext[:, :2, 0] / ze[:, :2] ** 2
    dpix[:, 2:, 1] = fy / ze[:, 2:]
    dpix[:, 2:, 2] = -fy * p_ext[:, 2:, 1] / ze[:, 2:] ** 2
    weight = resid / cfg.sigma2                           # dE/d(pred)
    w_world = np.einsum("nk,nkj,nji->nki", weight, dpix, Rc).reshape(-1, 3)
    flat = ext.reshape(-1)
    w_obj = w_world @ R                                   # R^T w, row-wise
    rx = X[flat] @ R.T

    grad = np.zeros(11)
    grad[0:3] = w_world.sum(axis=0)
    grad[3:6] = np.cross(rx, w_world).sum(axis=0)
    grad[6:9] = (w_obj * basis[flat]).sum(axis=0)
    if cfg.shape_mode == "superquadric":
        grad[9] = np.sum(w_obj * X[flat] * le[flat])
        grad[10] = np.sum(w_obj * X[flat] * lw[flat])
    if d is not None:
        grad[6:9] += prior.precision @ d
    if cfg.upright_only:
        grad[3:5] = 0.0
    result.grad = grad
    return result


def neg_log_posterior(q: SuperQuadricState, obs: Sequence[Observation], prior: ScalePrior | None,
                      cfg: OptimizerConfig, samples: SurfaceSamples | None = None) -> float:
    return evaluate_objective(q, obs, prior, cfg, samples, with_grad=False).value


def gradient(q: SuperQuadricState, obs: Sequence[Observation], prior: ScalePrior | None,
             cfg: OptimizerConfig, samples: SurfaceSamples | None = None) -> np.ndarray:
    return evaluate_objective(q, obs, prior, cfg, samples).grad


def perturb(q: SuperQuadricState, delta: np.ndarray, clamp: bool = True) -> SuperQuadricState:
    """Apply an 11-vector increment in the gradient's parameterization."""
    delta = np.asarray(delta, dtype=float)
    R = nearest_rotation(so3_exp(delta[3:6]) @ q.pose.rotation)
    alpha = q.alpha + delta[6:9]
    e1, e2 = q.eps1 + delta[9], q.eps2 + delta[10]
    if clamp:
        alpha = np.maximum(alpha, ALPHA_MIN)
        e1, e2 = (float(np.clip(e, EPS_MIN, EPS_MAX)) for e in (e1, e2))
    return SuperQuadricState(RigidPose(R, q.pose.translation + delta[0:3]), alpha, e1, e2)


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------

@dataclass
class AdamMoments:
    m: np.ndarray = field(default_factory=lambda: np.zeros(11))
    v: np.ndarray = field(default_factory=lambda: np.zeros(11))
    t: int = 0


def adam_update(grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update on plain arrays.

    Returns ``(delta, m, v, t)``; the caller adds ``delta`` to its parameters.
    """
    grad = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite gradient")
    t = t + 1
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return -lr * m_hat / (np.sqrt(v_hat) + eps), m, v, t


def adam_step(q: SuperQuadricState, grad: np.ndarray, moments: AdamMoments, lr,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Adam step on a super-quadric state.

    Alpha and the exponents are clamped to their bounds afterwards and the
    rotation increment is folded into the rotation matrix.
    """
    delta, m, v, t = adam_update(grad, moments.m, moments.v, moments.t, lr, beta1, beta2, eps)
    return perturb(q, delta), AdamMoments(m, v, t)


# --------------------------------------------------------------------------
# driver
# --------------------------------------------------------------------------

@dataclass
class OptimizeResult:
    state: SuperQuadricState
    initial_objective: float
    best_objective: float
    trace: list[float]
    iterations: int
    skipped: int = 0


def optimize_object(init: SuperQuadricState, obs: Sequence[Observation], prior: ScalePrior | None,
                    cfg: OptimizerConfig, trigger: Trigger = "final") -> OptimizeResult:
    """Run one optimization round and return the lowest-objective iterate.

    ``init`` is the starting state (the averaged single-view initialization
    for the first round, the previous estimate afterwards).
    """
    if cfg.shape_mode == "no_optimization":
        return OptimizeResult(init, float("nan"), float("nan"), [], 0)
    if trigger == "none":
        raise ValueError("optimize_object needs an incremental or final trigger")
    n_iters = cfg.iters_per_round if trigger == "incremental" else cfg.final_iters

    q = init
    if cfg.shape_mode == "ellipsoid" and (q.eps1, q.eps2) != (1.0, 1.0):
        q = replace(q, eps1=1.0, eps2=1.0)
    lr = cfg.learning_rates()
    if cfg.shape_mode != "superquadric":
        lr[9:] = 0.0
    batch = ObservationBatch.of(obs)
    moments = AdamMoments()
    trace: list[float] = []
    best_q, best_val = q, np.inf
    skipped = 0
    for it in range(n_iters + 1):
        ev = evaluate_objective(q, batch, prior, cfg, with_grad=it < n_iters)
        trace.append(ev.value)
        skipped = ev.skipped
        if ev.value < best_val:
            best_q, best_val = q, ev.value
        if it == n_iters:
            break
        q, moments = adam_step(q, ev.grad, moments, lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon)
    if cfg.shape_mode == "cuboid":
        best_q = replace(best_q, eps1=EPS_MIN, eps2=EPS_MIN)
    log.debug("optimized %d iterations: %.4g -> %.4g", n_iters, trace[0], best_val)
    return OptimizeResult(best_q, trace[0], best_val, trace, n_iters, skipped)


def schedule_tick(prev_count: int, count: int, cfg: OptimizerConfig,
                  end_of_sequence: bool = False) -> Trigger:
    """Which optimization round, if any, is due after a track grows to ``count``."""
    if end_of_sequence:
        return "final" if count >= 1 else "none"
    k = cfg.obs_per_round
    return "incremental" if count // k > prev_count // k else "none"
