"""Incremental object mapping: associate each frame, grow tracks, optimize on schedule."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .association import (AssocMode, AssociationDecision, CameraFrame, Detection, ObjectTrack,
                          associate_frame, confirm_tracks, matching_accuracy, sv3d_to_world)
from .geometry import OrientedBox3D, RigidPose, so3_exp
from .optimizer import (Observation, OptimizerConfig, ScalePrior, initialize, optimize_object,
                        schedule_tick)

log = logging.getLogger(__name__)


class InputError(ValueError):
    """Inconsistent or incomplete input data (reported with exit code 2)."""


@dataclass(frozen=True)
class MapperSettings:
    mode: AssocMode = "3d"
    gate: float = 0.2
    spawn_threshold: float = 0.5
    k_min: int = 5


@dataclass(frozen=True)
class RoundRecord:
    track_id: int
    trigger: str
    n_observations: int
    iterations: int
    initial_objective: float
    best_objective: float


def fallback_single_view(det: Detection, frame: CameraFrame, mu0: np.ndarray) -> OrientedBox3D:
    """Camera-frame box guessed from the 2D box and the category mean size.

    Used only when a detection carries no single-view 3D box: depth comes
    from the box height versus the category height, the object is placed
    upright and facing the camera.
    """
    b = det.box2d
    K = frame.intrinsics
    h = max(b.ymax - b.ymin, 1.0)
    depth = max(K.fy * 2.0 * mu0[2] / h, 0.5)
    u, v = 0.5 * (b.xmin + b.xmax), 0.5 * (b.ymin + b.ymax)
    center = np.array([(u - K.cx) / K.fx * depth, (v - K.cy) / K.fy * depth, depth])
    # world yaw that points the object's x axis along the viewing ray
    R_wc = frame.pose.rotation.T
    ray = R_wc @ center
    yaw = np.arctan2(ray[1], ray[0])
    R_co = frame.pose.rotation @ so3_exp([0.0, 0.0, yaw])
    return OrientedBox3D(RigidPose(R_co, center), mu0)


class ObjectMapper:
    """Frame-by-frame map builder.

    Before its first optimization round a track's estimate is the running
    average of its single-view boxes; afterwards each round starts from the
    previous estimate.
    """

    def __init__(self, priors: Mapping[int, ScalePrior], opt: OptimizerConfig,
                 settings: MapperSettings = MapperSettings()):
        self.priors = dict(priors)
        self.opt = opt
        self.settings = settings
        self.tracks: list[ObjectTrack] = []
        self.decisions: list[AssociationDecision] = []
        self.gt_object: dict[tuple[int, int], int] = {}
        self.rounds: list[RoundRecord] = []
        self._by_id: dict[int, ObjectTrack] = {}
        self._finished = False

    def _prior(self, class_id: int) -> ScalePrior | None:
        if not self.opt.prior_enabled:
            return None
        return self.priors.get(class_id)

    def _single_view(self, det: Detection, frame: CameraFrame) -> OrientedBox3D:
        if det.sv3d is not None:
            return sv3d_to_world(det, frame)
        if det.class_id not in self.priors:
            raise InputError(f"detection of unknown class {det.class_id} has no single-view 3D box")
        cam_box = fallback_single_view(det, frame, self.priors[det.class_id].mu0)
        return OrientedBox3D(frame.pose.inverse().compose(cam_box.pose), cam_box.half_extents)

    def _optimize(self, tr: ObjectTrack, trigger: str) -> None:
        obs = [Observation(f.frame_id, f.pose, f.intrinsics, d.box2d) for d, f in tr.observations]
        res = optimize_object(tr.estimate, obs, self._prior(tr.class_id), self.opt, trigger)
        tr.set_estimate(res.state)
        tr.optimized = True
        tr.rounds.append((trigger, len(obs)))
        self.rounds.append(RoundRecord(tr.track_id, trigger, len(obs), res.iterations,
                                       res.initial_objective, res.best_objective))

    def process_frame(self, frame: CameraFrame, dets: Sequence[Detection]) -> None:
        if self._finished:
            raise RuntimeError("mapper already finished")
        s = self.settings
        if s.mode == "3d" and any(d.sv3d is None for d in dets):
            raise InputError("3d association requested but detections lack sv3d boxes; use --assoc 2d")
        res = associate_frame(dets, frame, self.tracks, s.gate, s.mode, s.spawn_threshold,
                              self.opt.shape_mode, self.opt.sample_count)
        kinds: dict[int, tuple[str, int | None]] = {}
        grown: list[tuple[ObjectTrack, int]] = []
        for i, tid in res.matches:
            tr = self._by_id[tid]
            grown.append((tr, len(tr.observations)))
            kinds[i] = ("match", tid)
        for i in res.new_tracks:
            tr = ObjectTrack(len(self.tracks), dets[i].class_id)
            self.tracks.append(tr)
            self._by_id[tr.track_id] = tr
            grown.append((tr, 0))
            kinds[i] = ("new", tr.track_id)
        for i in res.dropped:
            kinds[i] = ("drop", None)
        track_of = {tid: i for i, (_, tid) in kinds.items() if tid is not None}
        for i, det in enumerate(dets):
            kind, tid = kinds[i]
            key = (frame.frame_id, i)
            self.decisions.append(AssociationDecision(key, kind, tid))
            if det.gt_object_id is not None:
                self.gt_object[key] = det.gt_object_id
        for tr, prev in grown:
            i = track_of[tr.track_id]
            tr.add(dets[i], frame)
            tr.single_view.append(self._single_view(dets[i], frame))
            if not tr.optimized:
                tr.set_estimate(initialize(tr.single_view))
            if schedule_tick(prev, len(tr.observations), self.opt) == "incremental" \
                    and self.opt.shape_mode != "no_optimization":
                self._optimize(tr, "incremental")

    def finish(self) -> list[ObjectTrack]:
        """Confirm tracks, run the final round on each, and return them in id order."""
        confirmed = confirm_tracks(self.tracks, self.settings.k_min)
        if not self._finished and self.opt.shape_mode != "no_optimization":
            for tr in confirmed:
                if schedule_tick(0, len(tr.observations), self.opt, end_of_sequence=True) == "final":
                    self._optimize(tr, "final")
        self._finished = True
        return confirmed

    def matching_accuracy(self) -> float | None:
        """Replay accuracy, or ``None`` when detections carry no ground-truth ids."""
        if not self.decisions or len(self.gt_object) != len(self.decisions):
            return None
        return matching_accuracy(self.decisions, self.gt_object)


def group_by_frame(frames: Sequence[CameraFrame], dets: Iterable[Detection]) -> list[tuple[CameraFrame, list[Detection]]]:
    """Pair every frame with its detections, in frame order."""
    ids = [f.frame_id for f in frames]
    if any(b <= a for a, b in zip(ids, ids[1:])):
        raise InputError("trajectory frame ids must be strictly increasing")
    per: dict[int, list[Detection]] = {fid: [] for fid in ids}
    for d in dets:
        if d.frame_id not in per:
            raise InputError(f"detection references frame {d.frame_id} which is not in the trajectory")
        per[d.frame_id].append(d)
    return [(f, per[f.frame_id]) for f in frames]


@dataclass
class MapResult:
    tracks: list[ObjectTrack]
    matching_accuracy: float | None
    rounds: list[RoundRecord] = field(default_factory=list)
    decisions: list[AssociationDecision] = field(default_factory=list)


def build_map(frames: Sequence[CameraFrame], dets: Iterable[Detection], priors: Mapping[int, ScalePrior],
              opt: OptimizerConfig, settings: MapperSettings = MapperSettings()) -> MapResult:
    mapper = ObjectMapper(priors, opt, settings)
    for frame, fd in group_by_frame(frames, dets):
        mapper.process_frame(frame, fd)
    confirmed = mapper.finish()
    log.info("mapped %d confirmed objects from %d tracks", len(confirmed), len(mapper.tracks))
    return MapResult(confirmed, mapper.matching_accuracy(), mapper.rounds, mapper.decisions)
