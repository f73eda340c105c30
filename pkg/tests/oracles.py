"""Reference computations that share no code with the library under test."""

from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np


def ellipsoid_box(R_wo, t_wo, axes, R_cw, t_cw, K) -> np.ndarray:
    """Exact image box [xmin, xmax, ymin, ymax] of an ellipsoid via its dual conic.

    The dual quadric of an ellipsoid with half-axes ``axes`` at pose
    ``(R_wo, t_wo)`` is ``Q* = T diag(a^2, b^2, c^2, -1) T^T``; its image is
    the dual conic ``C* = P Q* P^T`` and the box edges are the tangent lines
    ``x = u`` and ``y = v`` of that conic.
    """
    T = np.eye(4)
    T[:3, :3] = R_wo
    T[:3, 3] = t_wo
    Q = T @ np.diag([axes[0] ** 2, axes[1] ** 2, axes[2] ** 2, -1.0]) @ T.T
    Kmat = np.array([[K[0], 0, K[2]], [0, K[1], K[3]], [0, 0, 1.0]])
    P = Kmat @ np.hstack([R_cw, np.reshape(t_cw, (3, 1))])
    C = P @ Q @ P.T
    out = []
    for i in (0, 1):
        # line (e_i, -u) tangent: C_ii - 2 u C_i2 + u^2 C_22 = 0
        disc = np.sqrt(C[i, 2] ** 2 - C[i, i] * C[2, 2])
        r = sorted([(C[i, 2] - disc) / C[2, 2], (C[i, 2] + disc) / C[2, 2]])
        out += r
    return np.array(out)


def sphere_silhouette_halfwidth(f: float, r: float, d: float) -> float:
    """Half width in pixels of a sphere of radius r centred on the optical axis at depth d."""
    return f * r / np.sqrt(d * d - r * r)


@lru_cache(maxsize=None)
def _perms(n: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(n))), dtype=np.int64)


def brute_force_assignment(cost: np.ndarray) -> tuple[int, float, list[tuple[int, int]]]:
    """Max-cardinality, min-cost matching over finite entries by exhaustive search.

    Returns (cardinality, cost, lexicographically smallest optimal pair list).
    Every partial matching extends to a permutation of the padded square
    matrix, so enumerating permutations covers all matchings.
    """
    m, n = cost.shape
    N = max(m, n)
    pad = np.full((N, N), np.inf)
    pad[:m, :n] = cost
    P = _perms(N)
    picked = pad[np.arange(N)[None, :], P]
    finite = np.isfinite(picked)
    card = finite.sum(axis=1)
    total = np.where(finite, picked, 0.0).sum(axis=1)
    best_card = card.max()
    cand = card == best_card
    best_cost = total[cand].min()
    tol = 1e-9 * max(1.0, abs(best_cost))
    opt = np.flatnonzero(cand & (total <= best_cost + tol))
    lists = sorted({tuple((r, int(P[k, r])) for r in range(N) if finite[k, r]) for k in opt})
    return int(best_card), float(best_cost), list(lists[0])


def central_difference(f, x0: np.ndarray, h: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(x0, dtype=float)
    for i in range(len(x0)):
        e = np.zeros_like(x0, dtype=float)
        e[i] = h
        g[i] = (f(x0 + e) - f(x0 - e)) / (2 * h)
    return g


def _spow(x, e):
    return np.sign(x) * np.abs(x) ** e


def rotvec_matrix(w) -> np.ndarray:
    from scipy.spatial.transform import Rotation

    return Rotation.from_rotvec(np.asarray(w, dtype=float)).as_matrix()


def box_objective(params, R0, trig, cams, K, boxes, sigma2, mu0=None, precision=None):
    """Negative log posterior for an 11-vector offset from rotation ``R0``.

    ``params`` = (translation, left rotation vector, alpha, eps1, eps2);
    ``trig`` = (cos_eta, sin_eta, cos_omega, sin_omega) of fixed samples;
    ``cams`` = list of (R_cw, t_cw). Returns (value, smallest argmin/argmax margin in px).
    """
    t, w, alpha, e1, e2 = params[0:3], params[3:6], params[6:9], params[9], params[10]
    ce, se, co, so = trig
    X = np.stack([_spow(ce, e1) * _spow(co, e2), _spow(ce, e1) * _spow(so, e2), _spow(se, e1)], axis=1) * alpha
    R = rotvec_matrix(w) @ R0
    fx, fy, cx, cy = K
    total, margin = 0.0, np.inf
    for (Rc, tc), b in zip(cams, boxes):
        p = (X @ R.T + t) @ Rc.T + tc
        u = fx * p[:, 0] / p[:, 2] + cx
        v = fy * p[:, 1] / p[:, 2] + cy
        for vals, sign in ((u, 1), (u, -1), (v, 1), (v, -1)):
            s = np.sort(sign * vals)
            margin = min(margin, s[1] - s[0])
        pred = np.array([u.min(), u.max(), v.min(), v.max()])
        total += np.sum((pred - b) ** 2) / (2 * sigma2)
    if mu0 is not None:
        d = alpha - mu0
        total += 0.5 * d @ precision @ d
    return total, margin


def implicit(alpha, e1, e2, x) -> np.ndarray:
    ax = np.abs(x / np.asarray(alpha))
    return (ax[:, 0] ** (2 / e2) + ax[:, 1] ** (2 / e2)) ** (e2 / e1) + ax[:, 2] ** (2 / e1)


def radial_surface_points(alpha, e1, e2, n: int, seed: int = 0) -> np.ndarray:
    """Surface points along random rays, using the homogeneity of the implicit function:
    f(r u) = r^(2/e1) f(u), so the ray hits the surface at r = f(u)^(-e1/2)."""
    u = np.random.default_rng(seed).normal(size=(n, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return u * implicit(alpha, e1, e2, u)[:, None] ** (-e1 / 2)


def farthest_point_sample(pts: np.ndarray, k: int) -> np.ndarray:
    chosen = [0]
    d = np.linalg.norm(pts - pts[0], axis=1)
    for _ in range(k - 1):
        i = int(np.argmax(d))
        chosen.append(i)
        d = np.minimum(d, np.linalg.norm(pts - pts[i], axis=1))
    return pts[chosen]


def nn_spacing_cv(pts: np.ndarray) -> float:
    """Coefficient of variation of nearest-neighbour distances."""
    from scipy.spatial import cKDTree

    d, _ = cKDTree(pts).query(pts, k=2)
    nn = d[:, 1]
    return float(nn.std() / nn.mean())
