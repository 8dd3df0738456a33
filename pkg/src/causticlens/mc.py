"""Monte-Carlo ray oracle for the flux renderer (parallel light only).

Rays start on a stratified jittered grid over the source domain. Each ray is
assigned to the face whose projection contains it, bent by that face's
normal and binned on the receptive plane. The jitter comes from a
counter-based hash of (seed, stratum), so results do not depend on the
order faces are visited and are bitwise reproducible.
"""
import numpy as np
import numba as nb

from .errors import ConfigurationError, InvalidHeightField
from .mesh import HeightFieldMesh
from .optics import OpticalScene
from .render import (FluxImage, PixelMap, SourceDistribution, _project, oblique_xy,
                     pixel_grid, signed_areas_2d, surface_state)


@nb.njit(cache=True, inline="always")
def _splitmix(z):
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@nb.njit(cache=True, inline="always")
def _uniform(seed, idx, k):
    h = _splitmix(_splitmix(seed ^ _splitmix(np.uint64(idx))) + np.uint64(k))
    return (h >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@nb.njit(cache=True, inline="always")
def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


@nb.njit(cache=True)
def _mc_kernel(T, F, P3, B, zf, wmap, W, H, sx, sy, seed,
               x0, y0, dx, dy, nw, nh):
    img = np.zeros((nh, nw))
    claimed = 0.0
    sw = W / sx
    sh = H / sy
    mh, mw = wmap.shape
    n = T.shape[0]
    for f in range(n):
        bx = min(T[f, 0, 0], T[f, 1, 0], T[f, 2, 0])
        ex = max(T[f, 0, 0], T[f, 1, 0], T[f, 2, 0])
        by = min(T[f, 0, 1], T[f, 1, 1], T[f, 2, 1])
        ey = max(T[f, 0, 1], T[f, 1, 1], T[f, 2, 1])
        i0 = max(int(np.floor(bx / sw)), 0)
        i1 = min(int(np.floor(ex / sw)), sx - 1)
        j0 = max(int(np.floor(by / sh)), 0)
        j1 = min(int(np.floor(ey / sh)), sy - 1)
        area2 = _edge(T[f, 0, 0], T[f, 0, 1], T[f, 1, 0], T[f, 1, 1], T[f, 2, 0], T[f, 2, 1])
        for j in range(j0, j1 + 1):
            for i in range(i0, i1 + 1):
                idx = j * sx + i
                px = (i + _uniform(seed, idx, 0)) * sw
                py = (j + _uniform(seed, idx, 1)) * sh
                inside = True
                lam = np.empty(3)
                for e in range(3):
                    a = e
                    b = (e + 1) % 3
                    ga = F[f, a]
                    gb = F[f, b]
                    # evaluate each shared edge with its canonical direction
                    if ga < gb:
                        v = _edge(T[f, a, 0], T[f, a, 1], T[f, b, 0], T[f, b, 1], px, py)
                        s = 1.0
                    else:
                        v = _edge(T[f, b, 0], T[f, b, 1], T[f, a, 0], T[f, a, 1], px, py)
                        s = -1.0
                    if not (s * v > 0.0 or (v == 0.0 and s > 0.0)):
                        inside = False
                        break
                    lam[(e + 2) % 3] = s * v
                if not inside:
                    continue
                wt = 1.0
                if mw > 0:
                    c = min(int(px / W * mw), mw - 1)
                    r = min(int(py / H * mh), mh - 1)
                    wt = wmap[r, c] * mw * mh
                    if wt == 0.0:
                        continue
                claimed += wt
                l0 = lam[0] / area2
                l1 = lam[1] / area2
                l2 = 1.0 - l0 - l1
                qx = l0 * P3[f, 0, 0] + l1 * P3[f, 1, 0] + l2 * P3[f, 2, 0]
                qy = l0 * P3[f, 0, 1] + l1 * P3[f, 1, 1] + l2 * P3[f, 2, 1]
                qz = l0 * P3[f, 0, 2] + l1 * P3[f, 1, 2] + l2 * P3[f, 2, 2]
                t = (zf - qz) / B[f, 2]
                ux = qx + B[f, 0] * t
                uy = qy + B[f, 1] * t
                c = int(np.floor((ux - x0) / dx))
                r = int(np.floor((uy - y0) / dy))
                if 0 <= c < nw and 0 <= r < nh:
                    img[r, c] += wt
    return img, claimed


def mc_reference_render(mesh: HeightFieldMesh, dist: SourceDistribution, scene: OpticalScene,
                        n_rays: int, seed: int = 0, resolution=(32, 32)) -> FluxImage:
    """Monte-Carlo estimate of the rendered flux image using about ``n_rays`` rays."""
    if scene.is_point:
        raise ConfigurationError("the Monte-Carlo oracle supports parallel light only")
    W, H = mesh.width, mesh.height
    sx = max(1, int(round(np.sqrt(n_rays * W / H))))
    sy = max(1, int(round(n_rays / sx)))
    state = surface_state(mesh, scene)
    a = np.asarray(scene.source.direction, dtype=float)
    P3 = state.V[state.F]
    T = np.ascontiguousarray(oblique_xy(P3, a))
    if np.any(signed_areas_2d(T) <= 0):
        raise InvalidHeightField("mesh has a folded or degenerate face")
    _, cache = _project(state, scene)
    B = np.ascontiguousarray(cache["B"][:, 0, :])
    wmap = dist.weights if isinstance(dist, PixelMap) else np.zeros((0, 0))
    grid = pixel_grid(scene.image_region, resolution)
    img, _ = _mc_kernel(T, np.ascontiguousarray(state.F), np.ascontiguousarray(P3), B,
                        float(scene.z_focal), wmap, float(W), float(H), sx, sy,
                        np.uint64(seed & 0xFFFFFFFFFFFFFFFF), *grid)
    flux = img / (sx * sy)
    return FluxImage(flux, 1.0 - float(flux.sum()))
