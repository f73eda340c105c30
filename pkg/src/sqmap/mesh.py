"""Triangle meshes of super-quadrics on a regular (eta, omega) grid."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .geometry import SuperQuadricState, parametric_grid


def grid_mesh(q: SuperQuadricState, n_eta: int = 32, n_omega: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """World-frame vertices ``(n_eta * n_omega, 3)`` and triangles ``(F, 3)``.

    Rows are rings of constant eta from pole to pole; each pole row collapses
    to a point, so only the non-degenerate triangle of each pole quad is kept.
    """
    if n_eta < 3 or n_omega < 3:
        raise ValueError("grid needs at least 3 x 3 vertices")
    verts = q.pose.transform(parametric_grid(q.alpha, q.eps1, q.eps2, n_eta, n_omega))
    faces = []
    for i in range(n_eta - 1):
        for j in range(n_omega):
            a = i * n_omega + j
            b = i * n_omega + (j + 1) % n_omega
            c = a + n_omega
            d = b + n_omega
            if i > 0:  # row i is not the south pole
                faces.append((a, b, d))
            if i < n_eta - 2:  # row i + 1 is not the north pole
                faces.append((a, d, c))
    return verts, np.array(faces, dtype=np.int64)


def ply_text(verts: np.ndarray, faces: np.ndarray, comments: Sequence[str] = ()) -> str:
    """ASCII PLY with vertex and face counts in the header."""
    lines = ["ply", "format ascii 1.0"]
    lines += [f"comment {c}" for c in comments]
    lines += [f"element vertex {len(verts)}", "property double x", "property double y", "property double z",
              f"element face {len(faces)}", "property list uchar int vertex_indices", "end_header"]
    lines += [f"{x!r} {y!r} {z!r}" for x, y, z in verts.tolist()]
    lines += [f"3 {a} {b} {c}" for a, b, c in faces.tolist()]
    return "\n".join(lines) + "\n"


def off_text(verts: np.ndarray, faces: np.ndarray, comments: Sequence[str] = ()) -> str:
    lines = ["OFF"] + [f"# {c}" for c in comments] + [f"{len(verts)} {len(faces)} 0"]
    lines += [f"{x!r} {y!r} {z!r}" for x, y, z in verts.tolist()]
    lines += [f"3 {a} {b} {c}" for a, b, c in faces.tolist()]
    return "\n".join(lines) + "\n"


def read_ply_vertices(text: str) -> np.ndarray:
    """Vertex array of an ASCII PLY written by :func:`ply_text`."""
    lines = text.splitlines()
    n = next(int(l.split()[2]) for l in lines if l.startswith("element vertex"))
    start = lines.index("end_header") + 1
    return np.array([[float(x) for x in l.split()] for l in lines[start:start + n]])
