"""File formats: detection logs, trajectories, ground truth, maps and reports.

Records are plain frozen dataclasses of Python scalars and tuples so that
``parse(serialize(r)) == r`` holds exactly. Conversions to the geometric
domain types live next to each record. Quaternions are ``[w, x, y, z]``;
trajectory rotations are world-to-camera, object rotations object-to-world.
"""

from __future__ import annotations

import csv
import io as _io
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import __version__
from .association import CameraFrame, Detection
from .config import RunConfig
from .evaluation import EvalReport
from .geometry import Box2D, CameraIntrinsics, OrientedBox3D, RigidPose, SuperQuadricState
from .pipeline import InputError
from .simulator import RNG_NAME, GroundTruthObject

QUAT_TOL = 1e-6

DETECTIONS_FILE = "detections.jsonl"
TRAJECTORY_FILE = "trajectory.json"
GROUND_TRUTH_FILE = "ground_truth.json"
MAP_FILE = "map.json"
REPORT_JSON = "report.json"
REPORT_CSV = "report.csv"
CONFIG_FILE = "config.json"

REPORT_COLUMNS = ("class", "class_id", "threshold", "tp", "fp", "fn", "precision", "recall", "f1",
                  "matching_accuracy", "config_hash", "seed")


def _floats(v, n: int, what: str) -> tuple[float, ...]:
    try:
        out = tuple(float(x) for x in v)
    except (TypeError, ValueError):
        raise InputError(f"{what} must be a list of {n} numbers") from None
    if len(out) != n or not all(np.isfinite(out)):
        raise InputError(f"{what} must be a list of {n} finite numbers")
    return out


def _unit_quaternion(v, what: str) -> tuple[float, ...]:
    q = _floats(v, 4, what)
    if abs(np.linalg.norm(q) - 1.0) > QUAT_TOL:
        raise InputError(f"{what} is not a unit quaternion (norm {np.linalg.norm(q):.9f})")
    return q


def _pose_fields(pose: RigidPose) -> tuple[tuple[float, ...], tuple[float, ...]]:
    return tuple(float(x) for x in pose.quaternion()), tuple(float(x) for x in pose.translation)


class _Record:
    """Mixin giving dataclass records dict conversion with strict key checks."""

    @classmethod
    def from_dict(cls, d: dict):
        if not isinstance(d, dict):
            raise InputError(f"{cls.__name__} must be an object")
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InputError(f"{cls.__name__}: unknown keys {sorted(unknown)}")
        return cls._parse(d)

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# detections
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SingleViewRecord(_Record):
    center: tuple[float, float, float]
    rotation: tuple[float, float, float, float]
    half_extents: tuple[float, float, float]

    @classmethod
    def _parse(cls, d):
        try:
            rec = cls(_floats(d["center"], 3, "sv3d.center"), _unit_quaternion(d["rotation"], "sv3d.rotation"),
                      _floats(d["half_extents"], 3, "sv3d.half_extents"))
        except KeyError as exc:
            raise InputError(f"sv3d: missing key {exc}") from None
        if min(rec.half_extents) <= 0:
            raise InputError("sv3d.half_extents must be positive")
        return rec

    @classmethod
    def from_box(cls, box: OrientedBox3D) -> SingleViewRecord:
        q, t = _pose_fields(box.pose)
        return cls(t, q, tuple(float(x) for x in box.half_extents))

    def to_box(self) -> OrientedBox3D:
        return OrientedBox3D(RigidPose.from_quaternion(self.rotation, self.center), np.array(self.half_extents))


@dataclass(frozen=True)
class DetectionRecord(_Record):
    frame_id: int
    class_id: int
    score: float
    box2d: tuple[float, float, float, float]
    sv3d: SingleViewRecord | None = None
    gt_object_id: int | None = None

    @classmethod
    def _parse(cls, d):
        try:
            box = _floats(d["box2d"], 4, "box2d")
            rec = cls(int(d["frame_id"]), int(d["class_id"]), float(d["score"]), box,
                      SingleViewRecord.from_dict(d["sv3d"]) if d.get("sv3d") is not None else None,
                      int(d["gt_object_id"]) if d.get("gt_object_id") is not None else None)
        except KeyError as exc:
            raise InputError(f"detection: missing key {exc}") from None
        except (TypeError, ValueError) as exc:
            raise InputError(f"detection: {exc}") from None
        if not (box[0] <= box[1] and box[2] <= box[3]):
            raise InputError("box2d must be ordered [xmin, xmax, ymin, ymax]")
        if not 0.0 <= rec.score <= 1.0:
            raise InputError("score must lie in [0, 1]")
        return rec

    def to_dict(self) -> dict:
        d = {"frame_id": self.frame_id, "class_id": self.class_id, "score": self.score,
             "box2d": list(self.box2d)}
        if self.sv3d is not None:
            d["sv3d"] = {k: list(v) for k, v in asdict(self.sv3d).items()}
        if self.gt_object_id is not None:
            d["gt_object_id"] = self.gt_object_id
        return d

    @classmethod
    def from_detection(cls, det: Detection) -> DetectionRecord:
        return cls(det.frame_id, det.class_id, float(det.score), tuple(float(x) for x in det.box2d.as_array()),
                   SingleViewRecord.from_box(det.sv3d) if det.sv3d is not None else None, det.gt_object_id)

    def to_detection(self) -> Detection:
        return Detection(self.frame_id, Box2D.from_array(self.box2d), self.class_id, self.score,
                         self.sv3d.to_box() if self.sv3d is not None else None, self.gt_object_id)


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"))


def serialize_detections(records: Iterable[DetectionRecord], manifest: dict | None = None) -> str:
    """One JSON object per line; an optional first line ``{"manifest": ...}``."""
    lines = [_dumps({"manifest": manifest})] if manifest is not None else []
    lines += [_dumps(r.to_dict()) for r in records]
    return "\n".join(lines) + "\n"


def parse_detections(text: str, source: str = DETECTIONS_FILE) -> tuple[list[DetectionRecord], dict | None]:
    records, manifest = [], None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InputError(f"{source}:{lineno}: invalid JSON: {exc.msg}") from None
        if isinstance(obj, dict) and set(obj) == {"manifest"}:
            manifest = obj["manifest"]
            continue
        try:
            records.append(DetectionRecord.from_dict(obj))
        except InputError as exc:
            raise InputError(f"{source}:{lineno}: {exc}") from None
    return records, manifest


# --------------------------------------------------------------------------
# trajectory
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class IntrinsicsRecord(_Record):
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    @classmethod
    def _parse(cls, d):
        try:
            return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]), int(d["width"]), int(d["height"]))
        except KeyError as exc:
            raise InputError(f"intrinsics: missing key {exc}") from None

    def to_intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(**asdict(self))

    @classmethod
    def from_intrinsics(cls, K: CameraIntrinsics) -> IntrinsicsRecord:
        return cls(float(K.fx), float(K.fy), float(K.cx), float(K.cy), int(K.width), int(K.height))


@dataclass(frozen=True)
class TrajectoryRecord(_Record):
    frame_id: int
    rotation_wxyz: tuple[float, float, float, float]
    translation: tuple[float, float, float]
    intrinsics: str = "cam0"

    @classmethod
    def _parse(cls, d):
        try:
            return cls(int(d["frame_id"]), _unit_quaternion(d["rotation_wxyz"], "rotation_wxyz"),
                       _floats(d["translation"], 3, "translation"), str(d.get("intrinsics", "cam0")))
        except KeyError as exc:
            raise InputError(f"trajectory frame: missing key {exc}") from None

    def to_dict(self) -> dict:
        return {"frame_id": self.frame_id, "rotation_wxyz": list(self.rotation_wxyz),
                "translation": list(self.translation), "intrinsics": self.intrinsics}


@dataclass(frozen=True)
class Trajectory:
    intrinsics: dict[str, IntrinsicsRecord]
    frames: tuple[TrajectoryRecord, ...]

    def camera_frames(self) -> list[CameraFrame]:
        Ks = {k: v.to_intrinsics() for k, v in self.intrinsics.items()}
        return [CameraFrame(f.frame_id, RigidPose.from_quaternion(f.rotation_wxyz, f.translation), Ks[f.intrinsics])
                for f in self.frames]

    @classmethod
    def from_frames(cls, frames: Sequence[CameraFrame]) -> Trajectory:
        names: dict[CameraIntrinsics, str] = {}
        recs = []
        for f in frames:
            name = names.setdefault(f.intrinsics, f"cam{len(names)}")
            q, t = _pose_fields(f.pose)
            recs.append(TrajectoryRecord(f.frame_id, q, t, name))
        return cls({v: IntrinsicsRecord.from_intrinsics(k) for k, v in names.items()}, tuple(recs))


def serialize_trajectory(traj: Trajectory, manifest: dict | None = None) -> str:
    doc = {"manifest": manifest} if manifest is not None else {}
    doc["intrinsics"] = {k: v.to_dict() for k, v in traj.intrinsics.items()}
    doc["frames"] = [f.to_dict() for f in traj.frames]
    return json.dumps(doc, indent=1) + "\n"


def parse_trajectory(text: str, source: str = TRAJECTORY_FILE) -> Trajectory:
    doc = _load_json(text, source)
    try:
        Ks = {str(k): IntrinsicsRecord.from_dict(v) for k, v in doc["intrinsics"].items()}
        frames = []
        for i, f in enumerate(doc["frames"]):
            try:
                frames.append(TrajectoryRecord.from_dict(f))
            except InputError as exc:
                raise InputError(f"frames[{i}]: {exc}") from None
    except KeyError as exc:
        raise InputError(f"{source}: missing key {exc}") from None
    except InputError as exc:
        raise InputError(f"{source}: {exc}") from None
    ids = [f.frame_id for f in frames]
    if any(b <= a for a, b in zip(ids, ids[1:])):
        raise InputError(f"{source}: frame ids must be strictly increasing")
    for f in frames:
        if f.intrinsics not in Ks:
            raise InputError(f"{source}: frame {f.frame_id} references unknown intrinsics {f.intrinsics!r}")
    return Trajectory(Ks, tuple(frames))


# --------------------------------------------------------------------------
# objects: ground truth and maps
# --------------------------------------------------------------------------

def _state_fields(q: SuperQuadricState) -> dict:
    rot, t = _pose_fields(q.pose)
    return {"rotation_wxyz": rot, "translation": t, "alpha": tuple(float(x) for x in q.alpha),
            "eps": (float(q.eps1), float(q.eps2))}


def _parse_state(d) -> dict:
    try:
        return {"rotation_wxyz": _unit_quaternion(d["rotation_wxyz"], "rotation_wxyz"),
                "translation": _floats(d["translation"], 3, "translation"),
                "alpha": _floats(d["alpha"], 3, "alpha"), "eps": _floats(d["eps"], 2, "eps")}
    except KeyError as exc:
        raise InputError(f"object: missing key {exc}") from None


def _to_state(r) -> SuperQuadricState:
    try:
        return SuperQuadricState(RigidPose.from_quaternion(r.rotation_wxyz, r.translation),
                                 np.array(r.alpha), r.eps[0], r.eps[1])
    except ValueError as exc:
        raise InputError(f"object: {exc}") from None


@dataclass(frozen=True)
class GroundTruthRecord(_Record):
    object_id: int
    class_id: int
    rotation_wxyz: tuple[float, float, float, float]
    translation: tuple[float, float, float]
    alpha: tuple[float, float, float]
    eps: tuple[float, float]

    @classmethod
    def _parse(cls, d):
        return cls(int(d["object_id"]), int(d["class_id"]), **_parse_state(d))

    @classmethod
    def from_object(cls, o: GroundTruthObject) -> GroundTruthRecord:
        return cls(o.object_id, o.class_id, **_state_fields(o.state))

    def state(self) -> SuperQuadricState:
        return _to_state(self)


@dataclass(frozen=True)
class MapObjectRecord(_Record):
    track_id: int
    class_id: int
    rotation_wxyz: tuple[float, float, float, float]
    translation: tuple[float, float, float]
    alpha: tuple[float, float, float]
    eps: tuple[float, float]
    n_observations: int

    @classmethod
    def _parse(cls, d):
        try:
            return cls(int(d["track_id"]), int(d["class_id"]), n_observations=int(d["n_observations"]),
                       **_parse_state(d))
        except KeyError as exc:
            raise InputError(f"map object: missing key {exc}") from None

    @classmethod
    def from_state(cls, track_id: int, class_id: int, q: SuperQuadricState, n_obs: int) -> MapObjectRecord:
        return cls(track_id, class_id, n_observations=n_obs, **_state_fields(q))

    def state(self) -> SuperQuadricState:
        return _to_state(self)


def _record_dict(r) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(r).items()}


def serialize_ground_truth(objects: Sequence[GroundTruthRecord], categories: Sequence[dict],
                           manifest: dict | None = None) -> str:
    doc = {"manifest": manifest} if manifest is not None else {}
    doc["categories"] = list(categories)
    doc["objects"] = [_record_dict(o) for o in objects]
    return json.dumps(doc, indent=1) + "\n"


def parse_ground_truth(text: str, source: str = GROUND_TRUTH_FILE) -> tuple[list[GroundTruthRecord], list[dict]]:
    doc = _load_json(text, source)
    try:
        objs = [GroundTruthRecord.from_dict(o) for o in doc["objects"]]
        cats = list(doc.get("categories", []))
    except KeyError as exc:
        raise InputError(f"{source}: missing key {exc}") from None
    except InputError as exc:
        raise InputError(f"{source}: {exc}") from None
    return objs, cats


def serialize_map(objects: Sequence[MapObjectRecord], manifest: dict | None = None) -> str:
    doc = {"manifest": manifest} if manifest is not None else {}
    doc["objects"] = [_record_dict(o) for o in objects]
    return json.dumps(doc, indent=1) + "\n"


def parse_map(text: str, source: str = MAP_FILE) -> tuple[list[MapObjectRecord], dict | None]:
    doc = _load_json(text, source)
    try:
        objs = [MapObjectRecord.from_dict(o) for o in doc["objects"]]
    except KeyError as exc:
        raise InputError(f"{source}: missing key {exc}") from None
    except InputError as exc:
        raise InputError(f"{source}: {exc}") from None
    return objs, doc.get("manifest")


def _load_json(text: str, source: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{source}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise InputError(f"{source}: top level must be an object")
    return doc


# --------------------------------------------------------------------------
# reports and manifests
# --------------------------------------------------------------------------

def build_manifest(cfg: RunConfig, command: str) -> dict[str, Any]:
    """Everything needed to identify and reproduce an output file."""
    opt, a = cfg.optimizer, cfg.association
    return {
        "tool": "sqmap",
        "version": __version__,
        "command": command,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "rng": RNG_NAME,
        "shape_mode": opt.shape_mode,
        "assoc_mode": a.mode,
        "prior_enabled": opt.prior_enabled,
        "upright_only": opt.upright_only,
        "association": {"gate": a.gate, "spawn_threshold": a.spawn_threshold, "k_min": a.k_min},
        "choices": {
            "box_clipping": "none: detected and projected boxes are compared unclipped",
            "gt_matching": "greedy by descending IoU, ties by lower prediction then ground-truth index",
            "assignment_ties": "lexicographically smallest (row, column) pairs among equal-cost optima",
            "final_round": "confirmed tracks only",
            "thresholds": list(cfg.evaluation.thresholds),
        },
    }


def report_rows(report: EvalReport) -> list[dict]:
    m = report.manifest
    out = []
    for r in report.rows:
        row = dict(r)
        row["matching_accuracy"] = report.matching_accuracy
        row["config_hash"] = m.get("config_hash")
        row["seed"] = m.get("seed")
        out.append(row)
    return out


def serialize_report_csv(report: EvalReport) -> str:
    buf = _io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in report_rows(report):
        w.writerow({k: "" if row[k] is None else row[k] for k in REPORT_COLUMNS})
    return buf.getvalue()


def parse_report_csv(text: str) -> list[dict]:
    return list(csv.DictReader(_io.StringIO(text)))


def serialize_report_json(report: EvalReport) -> str:
    return json.dumps(report.to_dict(), indent=1) + "\n"


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
