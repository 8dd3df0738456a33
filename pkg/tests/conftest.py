import sys

import numpy as np
import pytest

from causticlens.mesh import build_initial_mesh
from causticlens.optics import OpticalScene, ParallelLight, PointLight


def wavy_mesh(rng, n, W=10.0, amp=0.3, jitter=0.1, modes=4):
    """Smooth random height field plus interior x-y jitter (TIR-free for small amp)."""
    m = build_initial_mesh(W, W, n, n)
    X, Y = m.vertices[:, 0], m.vertices[:, 1]
    z = np.zeros_like(X)
    for _ in range(modes):
        kx, ky = rng.normal(size=2) * 2 * np.pi / W
        z += amp * rng.normal() * np.cos(kx * X + ky * Y + rng.uniform(0, 2 * np.pi))
    V = m.vertices.copy()
    V[:, 2] = z
    d = rng.normal(size=(len(V), 2)) * jitter * W / (n - 1)
    d[m.boundary_mask[:, :2]] = 0.0
    V[:, :2] += d
    m.vertices = V
    return m


def parallel_scene(W=10.0, zf=30.0, margin=0.0):
    return OpticalScene(z_focal=zf, image_region=(-margin, -margin, W + margin, W + margin))


def reflect_scene(W=10.0):
    return OpticalScene(source=ParallelLight((0.2, 0.1, -1.0)), z_focal=30.0, mode="reflect",
                        image_region=(-3.0, -3.0, W + 3.0, W + 3.0))


def point_mesh_and_scene(rng, n, W=10.0):
    m = wavy_mesh(rng, n, W)
    fp = m.vertices.copy()
    fp[:, 2] = 1.0 + 0.2 * fp[:, 2]
    m.front_params = fp
    sc = OpticalScene(source=PointLight((W / 2, W / 2, -40.0)), z_focal=30.0,
                      image_region=(-1.0, -1.0, W + 1.0, W + 1.0))
    return m, sc


def icosphere(level):
    """Unit icosphere subdivided ``level`` times: (vertices, faces)."""
    t = (1 + np.sqrt(5)) / 2
    V = [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t],
         [0, -1, -t], [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]]
    F = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
         [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
         [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    V = [np.array(v, float) / np.linalg.norm(v) for v in V]
    for _ in range(level):
        mids = {}
        newF = []

        def mid(i, j):
            k = (min(i, j), max(i, j))
            if k not in mids:
                m = V[i] + V[j]
                V.append(m / np.linalg.norm(m))
                mids[k] = len(V) - 1
            return mids[k]
        for a, b, c in F:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            newF += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        F = newF
    return np.array(V), np.array(F)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
