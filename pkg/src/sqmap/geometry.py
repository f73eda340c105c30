"""Rigid transforms, pinhole projection and super-quadric surface primitives.

Conventions used throughout the package:

* camera frame: x right, y down, z forward (optical axis);
* ``RigidPose`` maps points from its source frame into its target frame,
  ``x_target = R @ x_source + t``. Object poses are object-to-world,
  camera poses are world-to-camera;
* quaternions are ``[w, x, y, z]``, right-handed, unit norm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

HALF_PI = 0.5 * np.pi

ALPHA_MIN = 0.01
EPS_MIN = 0.1
EPS_MAX = 1.9
MIN_DEPTH = 0.05
DEFAULT_SAMPLE_COUNT = 1000
_ORTHO_TOL = 1e-9


class VisibilityError(ValueError):
    """Raised when part of a sampled surface lies behind (or too close to) the camera."""


# --------------------------------------------------------------------------
# rotations and rigid poses
# --------------------------------------------------------------------------

def hat(w: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix with ``hat(w) @ v == cross(w, v)``."""
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rodrigues' formula for an axis-angle vector."""
    w = np.asarray(w, dtype=float)
    theta = float(np.linalg.norm(w))
    K = hat(w)
    if theta < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    return (np.eye(3) + np.sin(theta) / theta * K
            + (1.0 - np.cos(theta)) / theta**2 * K @ K)


def so3_log(R: np.ndarray) -> np.ndarray:
    return Rotation.from_matrix(R).as_rotvec()


def nearest_rotation(M: np.ndarray) -> np.ndarray:
    """Orthogonal polar factor of ``M`` with the determinant forced to +1."""
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt)) or 1.0])
    return U @ D @ Vt


def _check_rotation(R: np.ndarray) -> None:
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise ValueError("rotation must be a finite 3x3 matrix")
    if np.max(np.abs(R.T @ R - np.eye(3))) > _ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL:
        raise ValueError("rotation is not orthonormal with det +1")


@dataclass(frozen=True, eq=False)
class RigidPose:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(3)
        _check_rotation(R)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidPose:
        return cls()

    @classmethod
    def from_quaternion(cls, q_wxyz, translation) -> RigidPose:
        q = np.asarray(q_wxyz, dtype=float)
        if abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise ValueError("quaternion must have unit norm")
        R = Rotation.from_quat([q[1], q[2], q[3], q[0]]).as_matrix()
        return cls(nearest_rotation(R), translation)

    def quaternion(self) -> np.ndarray:
        """Unit quaternion ``[w, x, y, z]`` with ``w >= 0``."""
        x, y, z, w = Rotation.from_matrix(self.rotation).as_quat()
        q = np.array([w, x, y, z])
        return -q if q[0] < 0 else q

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def compose(self, other: RigidPose) -> RigidPose:
        """``self * other``: apply ``other`` first, then ``self``."""
        return RigidPose(nearest_rotation(self.rotation @ other.rotation),
                         self.rotation @ other.translation + self.translation)

    def inverse(self) -> RigidPose:
        Rt = self.rotation.T
        return RigidPose(Rt, -Rt @ self.translation)

    def transform(self, x: np.ndarray) -> np.ndarray:
        """Apply to a single 3-vector or an ``(N, 3)`` array of points."""
        x = np.asarray(x, dtype=float)
        return x @ self.rotation.T + self.translation


def se3_compose(a: RigidPose, b: RigidPose) -> RigidPose:
    return a.compose(b)


def se3_inverse(p: RigidPose) -> RigidPose:
    return p.inverse()


def se3_transform(p: RigidPose, x: np.ndarray) -> np.ndarray:
    return p.transform(x)


# --------------------------------------------------------------------------
# camera and boxes
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise ValueError("image size must be positive")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Box2D:
    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def __post_init__(self):
        if not (self.xmin <= self.xmax and self.ymin <= self.ymax):
            raise ValueError(f"unordered box {self.as_array()}")

    @classmethod
    def from_array(cls, a) -> Box2D:
        return cls(*(float(v) for v in a))

    def as_array(self) -> np.ndarray:
        return np.array([self.xmin, self.xmax, self.ymin, self.ymax])

    @property
    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    def contains(self, other: Box2D, tol: float = 0.0) -> bool:
        return (self.xmin <= other.xmin + tol and other.xmax <= self.xmax + tol
                and self.ymin <= other.ymin + tol and other.ymax <= self.ymax + tol)

    def iou(self, other: Box2D) -> float:
        iw = min(self.xmax, other.xmax) - max(self.xmin, other.xmin)
        ih = min(self.ymax, other.ymax) - max(self.ymin, other.ymin)
        if iw <= 0 or ih <= 0:
            return 0.0
        inter = iw * ih
        union = self.area + other.area - inter
        return inter / union if union > 0 else 0.0


@dataclass(frozen=True, eq=False)
class OrientedBox3D:
    pose: RigidPose
    half_extents: np.ndarray

    def __post_init__(self):
        h = np.array(self.half_extents, dtype=float).reshape(3)
        if not np.all(h > 0):
            raise ValueError("half extents must be positive")
        h.flags.writeable = False
        object.__setattr__(self, "half_extents", h)

    @property
    def center(self) -> np.ndarray:
        return self.pose.translation

    @property
    def volume(self) -> float:
        return float(8.0 * np.prod(self.half_extents))

    def corners(self) -> np.ndarray:
        """The 8 corners in the parent frame, ordered by sign pattern."""
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
        return self.pose.transform(signs * self.half_extents)


@dataclass(frozen=True, eq=False)
class SuperQuadricState:
    """Object-to-world pose, half-extents ``alpha`` and shape exponents."""

    pose: RigidPose
    alpha: np.ndarray
    eps1: float = 1.0
    eps2: float = 1.0

    def __post_init__(self):
        a = np.array(self.alpha, dtype=float).reshape(3)
        if not np.all(np.isfinite(a)) or np.any(a < ALPHA_MIN - 1e-12):
            raise ValueError(f"alpha components must be >= {ALPHA_MIN} m, got {a}")
        for e in (self.eps1, self.eps2):
            if not (EPS_MIN - 1e-12 <= e <= EPS_MAX + 1e-12):
                raise ValueError(f"shape exponents must lie in [{EPS_MIN}, {EPS_MAX}], got {e}")
        a.flags.writeable = False
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "eps1", float(self.eps1))
        object.__setattr__(self, "eps2", float(self.eps2))

    def params(self) -> np.ndarray:
        """Flat 11-vector view: translation, rotation vector, alpha, eps."""
        return np.concatenate([self.pose.translation, so3_log(self.pose.rotation),
                               self.alpha, [self.eps1, self.eps2]])


# --------------------------------------------------------------------------
# super-quadric surface
# --------------------------------------------------------------------------

def sgnpow(s, e):
    """Sign-preserving power ``sign(s) * |s|**e``."""
    return np.sign(s) * np.abs(s) ** e


def implicit_value(q: SuperQuadricState, x) -> np.ndarray | float:
    """Inside-outside function in the canonical frame: 1 on the surface, <1 inside.

    Absolute values are taken under the fractional powers so the function is
    defined in every octant. Accepts a 3-vector or an ``(N, 3)`` array.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite point")
    a, e1, e2 = q.alpha, q.eps1, q.eps2
    ax = np.abs(x / a)
    xy = ax[..., 0] ** (2.0 / e2) + ax[..., 1] ** (2.0 / e2)
    f = xy ** (e2 / e1) + ax[..., 2] ** (2.0 / e1)
    return float(f) if f.ndim == 0 else f


@dataclass(frozen=True, eq=False)
class SurfaceSamples:
    """Fixed parametric sample directions on a super-quadric.

    Stores the cosines/sines of latitude ``eta`` and longitude ``omega``
    rather than the angles, so axis extremes are represented exactly.
    """

    cos_eta: np.ndarray
    sin_eta: np.ndarray
    cos_omega: np.ndarray
    sin_omega: np.ndarray

    def __len__(self) -> int:
        return len(self.cos_eta)

    def basis(self, eps1: float, eps2: float) -> np.ndarray:
        """Unit-extent surface points, shape ``(N, 3)``."""
        ce = sgnpow(self.cos_eta, eps1)
        return np.stack([ce * sgnpow(self.cos_omega, eps2),
                         ce * sgnpow(self.sin_omega, eps2),
                         sgnpow(self.sin_eta, eps1)], axis=1)

    def points(self, alpha, eps1: float, eps2: float) -> np.ndarray:
        return self.basis(eps1, eps2) * np.asarray(alpha, dtype=float)

    def log_factors(self) -> tuple[np.ndarray, np.ndarray]:
        """``log|.|`` of the eta and omega factors per axis (0 where the factor is 0).

        Used for derivatives with respect to the exponents.
        """
        def slog(v):
            av = np.abs(v)
            return np.where(av > 0, np.log(np.where(av > 0, av, 1.0)), 0.0)
        le = np.stack([slog(self.cos_eta), slog(self.cos_eta), slog(self.sin_eta)], axis=1)
        lw = np.stack([slog(self.cos_omega), slog(self.sin_omega), np.zeros_like(self.cos_omega)], axis=1)
        return le, lw


_TAIL = np.geomspace(1e-13, 0.2, 200)
_MIDDLE = np.linspace(0.25, HALF_PI - 0.25, 120)


def _quadrant_arc_table(a: float, b: float, e: float):
    """Arc length of the superellipse quadrant ``(a c^e, b s^e)``, ``t`` in [0, pi/2].

    The grid is graded towards both ends where small exponents make the curve
    change quickly in ``t``.
    """
    t = np.concatenate([[0.0], _TAIL, _MIDDLE, HALF_PI - _TAIL[::-1], [HALF_PI]])
    c = np.sin(HALF_PI - t)
    s = np.sin(t)
    x = a * c**e
    y = b * s**e
    seg = np.hypot(np.diff(x), np.diff(y))
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    return t, arc


def _positions(t_grid, arc, fractions):
    t = np.interp(fractions * arc[-1], arc, t_grid)
    c = np.sin(HALF_PI - t)
    s = np.sin(t)
    c[fractions <= 0.0] = 1.0
    s[fractions <= 0.0] = 0.0
    c[fractions >= 1.0] = 0.0
    s[fractions >= 1.0] = 1.0
    return c, s


def sample_directions(alpha, eps1: float, eps2: float,
                      count: int = DEFAULT_SAMPLE_COUNT) -> SurfaceSamples:
    """Approximately equal-distance sample directions for the given shape.

    Latitude rings are placed at equal arc length along a mean meridian
    profile; each ring is split into four quadrants sampled at equal arc
    length, so the six axis extremes are always included and the poles
    appear exactly once. The ring spacing is rescaled until the total is as
    close to ``count`` as the integer ring counts allow.
    """
    if count < 26:
        raise ValueError("count must be at least 26")
    a1, a2, a3 = (float(v) for v in alpha)
    t_xy, arc_xy = _quadrant_arc_table(a1, a2, eps2)
    l_xy = arc_xy[-1]
    rho = 2.0 * l_xy / np.pi
    t_m, arc_m = _quadrant_arc_table(rho, a3, eps1)
    l_m = arc_m[-1]

    ring = np.sin(HALF_PI - t_m) ** eps1
    mid = 0.5 * (ring[1:] + ring[:-1])
    area = 2.0 * 4.0 * l_xy * np.sum(mid * np.diff(arc_m))
    spacing = np.sqrt(area / count)

    best = None
    for _ in range(12):
        n_m = max(2, int(round(l_m / spacing)))
        ce, se = _positions(t_m, arc_m, np.arange(n_m) / n_m)
        n_q = np.maximum(1, np.rint(l_xy * ce**eps1 / spacing).astype(int))
        total = 4 * n_q[0] + 8 * int(np.sum(n_q[1:])) + 2
        if best is None or abs(total - count) < abs(best[0] - count):
            best = (total, ce, se, n_q)
        if total == count:
            break
        spacing *= np.sqrt(total / count)

    _, ce, se, n_q = best
    ring = np.repeat(np.arange(len(ce)), n_q)
    f = np.arange(len(ring)) - np.repeat(np.cumsum(n_q) - n_q, n_q)
    f = f / n_q[ring]
    C, S = _positions(t_xy, arc_xy, f)
    Cr, Sr = _positions(t_xy, arc_xy, 1.0 - f)
    # quadrants I..IV of each ring, starting at omega = 0, pi/2, pi, -pi/2
    cw = np.stack([C, -Cr, -C, Cr], axis=1)
    sw = np.stack([S, Sr, -S, -Sr], axis=1)
    r4 = np.repeat(ring, 4)
    cw, sw = cw.ravel(), sw.ravel()
    upper = r4 > 0
    cos_eta = np.concatenate([ce[r4], ce[r4[upper]], [0.0, 0.0]])
    sin_eta = np.concatenate([se[r4], -se[r4[upper]], [1.0, -1.0]])
    cos_w = np.concatenate([cw, cw[upper], [1.0, 1.0]])
    sin_w = np.concatenate([sw, sw[upper], [0.0, 0.0]])
    return SurfaceSamples(cos_eta, sin_eta, cos_w, sin_w)


def sample_surface(alpha, eps1: float, eps2: float, count: int = DEFAULT_SAMPLE_COUNT) -> np.ndarray:
    """Canonical-frame surface points, ``(N, 3)`` with ``N`` close to ``count``."""
    return sample_directions(alpha, eps1, eps2, count).points(alpha, eps1, eps2)


def parametric_grid(alpha, eps1: float, eps2: float, n_eta: int, n_omega: int) -> np.ndarray:
    """Regular ``(eta, omega)`` grid of surface points, ``(n_eta * n_omega, 3)``.

    Rows run from the south to the north pole (both included); columns cover
    ``omega`` in ``[-pi, pi)``.
    """
    eta = np.linspace(-HALF_PI, HALF_PI, n_eta)
    omega = -np.pi + 2.0 * np.pi * np.arange(n_omega) / n_omega
    E, W = np.meshgrid(eta, omega, indexing="ij")
    ce = np.sin(HALF_PI - np.abs(E))
    samples = SurfaceSamples(ce.ravel(), np.sin(E).ravel(), np.cos(W).ravel(), np.sin(W).ravel())
    return samples.points(alpha, eps1, eps2)


# --------------------------------------------------------------------------
# projection
# --------------------------------------------------------------------------

def project_point(K: CameraIntrinsics, x_cam) -> np.ndarray:
    """Pinhole projection of one camera-frame point or an ``(N, 3)`` array."""
    x = np.asarray(x_cam, dtype=float)
    z = x[..., 2]
    if np.any(z <= 0):
        raise VisibilityError("point behind the camera")
    return np.stack([K.fx * x[..., 0] / z + K.cx, K.fy * x[..., 1] / z + K.cy], axis=-1)


def box_of_points(pts) -> Box2D:
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("cannot box an empty point set")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    return Box2D(lo[0], hi[0], lo[1], hi[1])


def camera_points(q: SuperQuadricState, cam: RigidPose, canonical: np.ndarray) -> np.ndarray:
    """Canonical points carried into the camera frame by ``T_cw * T_wo``."""
    return cam.transform(q.pose.transform(canonical))


def project_quadric(q: SuperQuadricState, cam: RigidPose, K: CameraIntrinsics,
                    count: int = DEFAULT_SAMPLE_COUNT,
                    samples: SurfaceSamples | None = None) -> Box2D:
    """Image-plane box around the projected surface samples.

    ``cam`` is the world-to-camera pose. Raises ``VisibilityError`` when any
    sample is closer than ``MIN_DEPTH`` to the camera plane.
    """
    if samples is None:
        samples = sample_directions(q.alpha, q.eps1, q.eps2, count)
    pc = camera_points(q, cam, samples.points(q.alpha, q.eps1, q.eps2))
    if np.any(pc[:, 2] <= MIN_DEPTH):
        raise VisibilityError("super-quadric crosses the camera near plane")
    return box_of_points(project_point(K, pc))


def enclosing_obb(q: SuperQuadricState) -> OrientedBox3D:
    return OrientedBox3D(q.pose, q.alpha.copy())


def box_corners(alpha) -> np.ndarray:
    """The 8 corners ``(+-a1, +-a2, +-a3)`` of the canonical bounding box."""
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
    return signs * np.asarray(alpha, dtype=float)
