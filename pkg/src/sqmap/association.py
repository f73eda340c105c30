"""Frame-to-model data association with hand-crafted IoU costs.

Each frame's detections are matched against the objects already in the map
by solving a bipartite assignment on a 3D-IoU (or projected 2D-IoU) cost,
followed by gating. Unmatched confident detections start new tracks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .evaluation import iou3d
from .geometry import (Box2D, CameraIntrinsics, OrientedBox3D, RigidPose, SuperQuadricState,
                       SurfaceSamples, VisibilityError, box_corners, box_of_points, enclosing_obb,
                       project_point, project_quadric, sample_directions, MIN_DEPTH)

AssocMode = Literal["3d", "2d"]


@dataclass(frozen=True)
class CameraFrame:
    frame_id: int
    pose: RigidPose  # world-to-camera
    intrinsics: CameraIntrinsics


@dataclass(frozen=True, eq=False)
class Detection:
    frame_id: int
    box2d: Box2D
    class_id: int
    score: float
    sv3d: OrientedBox3D | None = None  # single-view box in the camera frame
    gt_object_id: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass(eq=False)
class ObjectTrack:
    track_id: int
    class_id: int
    observations: list[tuple[Detection, CameraFrame]] = field(default_factory=list)
    estimate: SuperQuadricState | None = None
    status: Literal["tentative", "confirmed"] = "tentative"
    single_view: list[OrientedBox3D] = field(default_factory=list)  # world frame
    optimized: bool = False
    rounds: list[tuple[str, int]] = field(default_factory=list)
    _samples: SurfaceSamples | None = field(default=None, repr=False)

    def add(self, det: Detection, frame: CameraFrame) -> None:
        if det.class_id != self.class_id:
            raise ValueError("class mismatch")
        if self.observations and frame.frame_id <= self.observations[-1][1].frame_id:
            raise ValueError("observation frame ids must be strictly increasing")
        self.observations.append((det, frame))

    def set_estimate(self, q: SuperQuadricState) -> None:
        self.estimate = q
        self._samples = None

    def samples(self, count: int) -> SurfaceSamples:
        if self._samples is None or len(self._samples) == 0:
            q = self.estimate
            self._samples = sample_directions(q.alpha, q.eps1, q.eps2, count)
        return self._samples


@dataclass
class AssignmentResult:
    matches: list[tuple[int, int]] = field(default_factory=list)  # (detection index, track_id)
    new_tracks: list[int] = field(default_factory=list)
    unmatched_tracks: list[int] = field(default_factory=list)
    dropped: list[int] = field(default_factory=list)


def sv3d_to_world(det: Detection, frame: CameraFrame) -> OrientedBox3D:
    return OrientedBox3D(frame.pose.inverse().compose(det.sv3d.pose), det.sv3d.half_extents)


# --------------------------------------------------------------------------
# costs
# --------------------------------------------------------------------------

def cost_matrix_3d(dets: Sequence[Detection], frame: CameraFrame, tracks: Sequence[ObjectTrack]) -> np.ndarray:
    """``1 - IoU3D`` between world-frame single-view boxes and track boxes."""
    cost = np.full((len(dets), len(tracks)), np.inf)
    for i, det in enumerate(dets):
        if det.sv3d is None:
            raise ValueError("3D association needs single-view 3D boxes; use the 2d mode")
        world = sv3d_to_world(det, frame)
        for j, tr in enumerate(tracks):
            if tr.class_id == det.class_id:
                cost[i, j] = 1.0 - iou3d(world, enclosing_obb(tr.estimate))
    return cost


def projected_box(q: SuperQuadricState, frame: CameraFrame, shape_mode: str = "superquadric",
                  samples: SurfaceSamples | None = None, count: int = 1000) -> Box2D:
    """Image box of a map object, using the corner projection for cuboids."""
    if shape_mode == "cuboid":
        pc = frame.pose.transform(q.pose.transform(box_corners(q.alpha)))
        if np.any(pc[:, 2] <= MIN_DEPTH):
            raise VisibilityError("cuboid crosses the camera near plane")
        return box_of_points(project_point(frame.intrinsics, pc))
    return project_quadric(q, frame.pose, frame.intrinsics, count, samples)


def cost_matrix_2d(dets: Sequence[Detection], frame: CameraFrame, tracks: Sequence[ObjectTrack],
                   shape_mode: str = "superquadric", count: int = 1000) -> np.ndarray:
    """``1 - IoU2D`` between detection boxes and track volumes projected into the frame."""
    cost = np.full((len(dets), len(tracks)), np.inf)
    for j, tr in enumerate(tracks):
        try:
            proj = projected_box(tr.estimate, frame, shape_mode, tr.samples(count), count)
        except VisibilityError:
            continue
        for i, det in enumerate(dets):
            if tr.class_id == det.class_id:
                cost[i, j] = 1.0 - det.box2d.iou(proj)
    return cost


# --------------------------------------------------------------------------
# assignment
# --------------------------------------------------------------------------

def _solve(cost: np.ndarray, allowed: np.ndarray) -> tuple[int, float, list[tuple[int, int]]]:
    """Max-cardinality, then min-cost matching over allowed entries."""
    if cost.size == 0 or not allowed.any():
        return 0, 0.0, []
    finite = np.where(allowed, cost, 0.0)
    big = 2.0 * np.abs(finite).sum() + 1.0
    c = np.where(allowed, cost, big)
    rows, cols = linear_sum_assignment(c)
    pairs = [(int(r), int(k)) for r, k in zip(rows, cols) if allowed[r, k]]
    return len(pairs), float(sum(cost[r, k] for r, k in pairs)), pairs


def hungarian(cost) -> list[tuple[int, int]]:
    """Optimal assignment over finite entries of ``cost``.

    Maximizes the number of matched pairs first, then minimizes their total
    cost; ``inf`` entries are forbidden. Among equal optima the
    lexicographically smallest sorted pair list is returned.
    """
    cost = np.asarray(cost, dtype=float)
    allowed = np.isfinite(cost)
    n_best, c_best, pairs = _solve(cost, allowed)
    if n_best == 0:
        return []
    tol = 1e-9 * max(1.0, abs(c_best))

    fixed: list[tuple[int, int]] = []
    avail = allowed.copy()
    fixed_cost = 0.0
    m = cost.shape[0]
    for r in range(m):
        remaining_rows = np.zeros(m, dtype=bool)
        remaining_rows[r + 1:] = True
        options = [k for k in np.flatnonzero(avail[r])] + [None]
        for k in options:
            trial = avail & remaining_rows[:, None]
            extra_n, extra_c = 0, 0.0
            if k is not None:
                trial[:, k] = False
                extra_n, extra_c = 1, cost[r, k]
            n, c, _ = _solve(cost, trial)
            if len(fixed) + extra_n + n == n_best and fixed_cost + extra_c + c <= c_best + tol:
                if k is not None:
                    fixed.append((r, int(k)))
                    fixed_cost += extra_c
                    avail[:, k] = False
                avail[r] = False
                break
    return fixed


def associate_frame(dets: Sequence[Detection], frame: CameraFrame, tracks: Sequence[ObjectTrack],
                    gate: float, mode: AssocMode = "3d", spawn_threshold: float = 0.5,
                    shape_mode: str = "superquadric", count: int = 1000) -> AssignmentResult:
    """Match one frame's detections to map tracks.

    Matches with cost above ``1 - gate`` are rejected. Rejected and unassigned
    detections with ``score >= spawn_threshold`` are reported as new tracks,
    the rest as dropped. Tracks are not modified.
    """
    result = AssignmentResult()
    if tracks and dets:
        if mode == "3d":
            cost = cost_matrix_3d(dets, frame, tracks)
        else:
            cost = cost_matrix_2d(dets, frame, tracks, shape_mode, count)
        pairs = hungarian(cost)
    else:
        pairs = []
    matched_dets, matched_tracks = set(), set()
    for i, j in pairs:
        if cost[i, j] <= 1.0 - gate:
            result.matches.append((i, tracks[j].track_id))
            matched_dets.add(i)
            matched_tracks.add(j)
    for i, det in enumerate(dets):
        if i not in matched_dets:
            (result.new_tracks if det.score >= spawn_threshold else result.dropped).append(i)
    result.unmatched_tracks = [tr.track_id for j, tr in enumerate(tracks) if j not in matched_tracks]
    return result


def confirm_tracks(tracks: Sequence[ObjectTrack], k_min: int) -> list[ObjectTrack]:
    """Mark tracks with at least ``k_min`` observations confirmed and return them."""
    out = []
    for tr in tracks:
        tr.status = "confirmed" if len(tr.observations) >= k_min else "tentative"
        if tr.status == "confirmed":
            out.append(tr)
    return out


# --------------------------------------------------------------------------
# matching accuracy
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AssociationDecision:
    det_key: tuple[int, int]  # (frame_id, index within the frame)
    kind: Literal["match", "new", "drop"]
    track_id: int | None


def matching_accuracy(decisions: Sequence[AssociationDecision], gt_object: Mapping[tuple[int, int], int]) -> float:
    """Fraction of detections whose association decision agrees with ground truth.

    Decisions are replayed in order. A track's identity is the true object of
    the detection that created it; a new-track decision is correct iff the
    detection's object had no track yet, a match is correct iff the track's
    identity is the detection's object. Dropped detections count as errors.
    """
    if not decisions:
        raise ValueError("matching accuracy is undefined for an empty detection set")
    track_object: dict[int, int] = {}
    has_track: set[int] = set()
    correct = 0
    for d in decisions:
        if d.det_key not in gt_object:
            raise KeyError(f"no ground truth for detection {d.det_key}")
        obj = gt_object[d.det_key]
        if d.kind == "new":
            correct += obj not in has_track
            has_track.add(obj)
            track_object[d.track_id] = obj
        elif d.kind == "match":
            correct += track_object.get(d.track_id) == obj
    return correct / len(decisions)
