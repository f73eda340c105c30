"""Oriented 3D box IoU and the once-matched precision/recall protocol."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .geometry import OrientedBox3D

THRESHOLDS = (0.25, 0.5)

# vertex indices of the 6 faces of OrientedBox3D.corners(), each a quad loop
_FACES = ((0, 1, 3, 2), (4, 5, 7, 6), (0, 1, 5, 4), (2, 3, 7, 6), (0, 2, 6, 4), (1, 3, 7, 5))


def _clip_polygon(poly: np.ndarray, n: np.ndarray, d: float, tol: float):
    """Sutherland-Hodgman clip of a planar polygon to ``n.x <= d``.

    Returns the clipped polygon and the points it gained on the plane.
    """
    out, on_plane = [], []
    s = poly @ n - d
    k = len(poly)
    for i in range(k):
        p, q = poly[i], poly[(i + 1) % k]
        sp, sq = s[i], s[(i + 1) % k]
        if sp <= tol:
            out.append(p)
            if abs(sp) <= tol:
                on_plane.append(p)
        if (sp < -tol and sq > tol) or (sp > tol and sq < -tol):
            x = p + (q - p) * (sp / (sp - sq))
            out.append(x)
            on_plane.append(x)
    return (np.array(out) if len(out) >= 3 else None), on_plane


def _order_cap(points: list[np.ndarray], n: np.ndarray, tol: float):
    pts = np.array(points)
    keep = [0]
    for i in range(1, len(pts)):
        if np.min(np.linalg.norm(pts[keep] - pts[i], axis=1)) > tol:
            keep.append(i)
    pts = pts[keep]
    if len(pts) < 3:
        return None
    c = pts.mean(axis=0)
    u = pts[0] - c
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    ang = np.arctan2((pts - c) @ v, (pts - c) @ u)
    return pts[np.argsort(ang)]


def clip_polyhedron(faces: list[np.ndarray], n: np.ndarray, d: float, tol: float = 1e-12) -> list[np.ndarray]:
    """Intersect a convex polyhedron (list of face loops) with ``n.x <= d``."""
    if all(np.max(f @ n) - d <= tol for f in faces):
        return faces
    new_faces, cap = [], []
    for f in faces:
        clipped, on_plane = _clip_polygon(f, n, d, tol)
        cap.extend(on_plane)
        if clipped is not None:
            new_faces.append(clipped)
    if new_faces and len(cap) >= 3:
        lid = _order_cap(cap, n, 1e-10)
        if lid is not None:
            new_faces.append(lid)
    return new_faces


def polyhedron_volume(faces: list[np.ndarray]) -> float:
    if not faces:
        return 0.0
    ref = np.concatenate(faces).mean(axis=0)
    vol = 0.0
    for f in faces:
        a = f[0] - ref
        b = f[1:-1] - ref
        c = f[2:] - ref
        vol += np.sum(np.abs(np.einsum("ij,ij->i", np.cross(b, c), np.broadcast_to(a, b.shape))))
    return vol / 6.0


def box_faces(box: OrientedBox3D) -> list[np.ndarray]:
    c = box.corners()
    return [c[list(f)] for f in _FACES]


def intersection_volume(a: OrientedBox3D, b: OrientedBox3D) -> float:
    """Exact overlap volume: box ``a`` clipped by the six face planes of ``b``."""
    ra = np.linalg.norm(a.half_extents)
    rb = np.linalg.norm(b.half_extents)
    if np.linalg.norm(a.center - b.center) >= ra + rb:
        return 0.0
    faces = box_faces(a)
    Rb, cb, hb = b.pose.rotation, b.center, b.half_extents
    for k in range(3):
        for sign in (1.0, -1.0):
            n = sign * Rb[:, k]
            faces = clip_polyhedron(faces, n, float(n @ cb + hb[k]))
            if not faces:
                return 0.0
    return polyhedron_volume(faces)


def iou3d(a: OrientedBox3D, b: OrientedBox3D) -> float:
    va, vb = a.volume, b.volume
    if va <= 0 or vb <= 0:
        raise ValueError("degenerate box")
    inter = intersection_volume(a, b)
    return float(np.clip(inter / (va + vb - inter), 0.0, 1.0))


def _inside(box: OrientedBox3D, pts: np.ndarray) -> np.ndarray:
    local = (pts - box.center) @ box.pose.rotation
    return np.all(np.abs(local) <= box.half_extents, axis=1)


def iou3d_montecarlo(a: OrientedBox3D, b: OrientedBox3D, n_samples: int = 1_000_000, seed: int = 0) -> float:
    """Monte-Carlo IoU from uniform samples in the union's axis-aligned bound."""
    if n_samples < 10_000:
        raise ValueError("n_samples must be at least 1e4")
    corners = np.vstack([a.corners(), b.corners()])
    lo, hi = corners.min(axis=0), corners.max(axis=0)
    rng = np.random.default_rng(seed)
    both = either = 0
    chunk = 250_000
    for start in range(0, n_samples, chunk):
        pts = rng.uniform(lo, hi, size=(min(chunk, n_samples - start), 3))
        ia, ib = _inside(a, pts), _inside(b, pts)
        both += int(np.count_nonzero(ia & ib))
        either += int(np.count_nonzero(ia | ib))
    return both / either if either else 0.0


# --------------------------------------------------------------------------
# precision / recall
# --------------------------------------------------------------------------

@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        n = self.tp + self.fp
        return self.tp / n if n else 0.0

    @property
    def recall(self) -> float:
        n = self.tp + self.fn
        return self.tp / n if n else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    def __iadd__(self, other: Counts) -> Counts:
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        return self


def match_predictions(preds: Sequence[tuple[OrientedBox3D, int]], gts: Sequence[tuple[OrientedBox3D, int]],
                      threshold: float) -> dict[int, Counts]:
    """Greedy once-only matching per class, in order of descending IoU.

    Ties go to the lower prediction index, then the lower ground-truth index.
    Returns counts keyed by class id (every class seen on either side).
    """
    classes = sorted({c for _, c in preds} | {c for _, c in gts})
    out: dict[int, Counts] = {}
    for cls in classes:
        pi = [i for i, (_, c) in enumerate(preds) if c == cls]
        gi = [j for j, (_, c) in enumerate(gts) if c == cls]
        cand = []
        for i in pi:
            for j in gi:
                iou = iou3d(preds[i][0], gts[j][0])
                if iou >= threshold:
                    cand.append((-iou, i, j))
        cand.sort()
        used_p, used_g = set(), set()
        for _, i, j in cand:
            if i not in used_p and j not in used_g:
                used_p.add(i)
                used_g.add(j)
        out[cls] = Counts(tp=len(used_p), fp=len(pi) - len(used_p), fn=len(gi) - len(used_g))
    return out


@dataclass
class EvalReport:
    """Rows are one dict per (class or ``"all"``, threshold)."""

    rows: list[dict]
    matching_accuracy: float | None = None
    manifest: dict = field(default_factory=dict)

    def row(self, class_name: str, threshold: float) -> dict:
        for r in self.rows:
            if r["class"] == class_name and r["threshold"] == threshold:
                return r
        raise KeyError((class_name, threshold))

    def f1(self, threshold: float) -> float:
        return self.row("all", threshold)["f1"]

    def to_dict(self) -> dict:
        thresholds = list(dict.fromkeys(r["threshold"] for r in self.rows))
        return {"thresholds": thresholds, "rows": self.rows,
                "matching_accuracy": self.matching_accuracy, "manifest": self.manifest}


def _row(name: str, class_id, thr: float, c: Counts) -> dict:
    return {"class": name, "class_id": class_id, "threshold": thr, "tp": c.tp, "fp": c.fp, "fn": c.fn,
            "precision": c.precision, "recall": c.recall, "f1": c.f1}


def evaluate_run(preds: Sequence[tuple[OrientedBox3D, int]], gts: Sequence[tuple[OrientedBox3D, int]],
                 class_names: Mapping[int, str], matching_accuracy: float | None = None,
                 manifest: dict | None = None, thresholds=THRESHOLDS) -> EvalReport:
    """Per-class and overall precision/recall/F1 at each threshold.

    ``class_names`` is the evaluation vocabulary; one row is emitted per
    vocabulary class and threshold, plus one overall row per threshold.
    """
    rows = []
    for thr in thresholds:
        per_class = match_predictions(preds, gts, thr)
        total = Counts()
        for cid in sorted(class_names):
            c = per_class.get(cid, Counts())
            total += c
            rows.append(_row(class_names[cid], cid, thr, c))
        for cid, c in per_class.items():
            if cid not in class_names:
                raise ValueError(f"class id {cid} is not in the evaluation vocabulary")
        rows.append(_row("all", None, thr, total))
    return EvalReport(rows, matching_accuracy, dict(manifest or {}))
