import numpy as np
import pytest

from sqmap.geometry import CameraIntrinsics, RigidPose


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> RigidPose:
    """World-to-camera pose (x right, y down, z forward) written out independently."""
    eye = np.asarray(eye, float)
    z = np.asarray(target, float) - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, up)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R_wc = np.stack([x, y, z], axis=1)
    return RigidPose(R_wc.T, -R_wc.T @ eye)


@pytest.fixture
def K():
    return CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)


@pytest.fixture
def ring_cameras():
    def make(n=8, radius=3.0, height=1.2, target=(0.0, 0.0, 0.0)):
        out = []
        for k in range(n):
            a = 2 * np.pi * k / n
            z = height + 0.4 * np.sin(3 * a)
            out.append(look_at([radius * np.cos(a), radius * np.sin(a), z], target))
        return out
    return make


@pytest.fixture
def criterion_line(request):
    """Write one line to the terminal, bypassing output capture."""
    tr = request.config.pluginmanager.getplugin("terminalreporter")

    def emit(text: str) -> None:
        if tr is not None:
            tr.write_line(text)
        else:  # pragma: no cover
            print(text)
    return emit
