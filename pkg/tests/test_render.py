import numpy as np
import pytest
from shapely.geometry import Polygon, box

from causticlens.errors import InvalidHeightField, ZeroTotalFlux
from causticlens.mesh import build_initial_mesh
from causticlens.optics import OpticalScene, ParallelLight, reflect
from causticlens.render import (FluxImage, GammaModel, PixelMap, Uniform, flux_to_pixels,
                                project_faces, rasterize_flux, render, render_adjoint,
                                source_flux, target_flux_from_image)

from conftest import point_mesh_and_scene, reflect_scene, wavy_mesh


def shapely_raster(tris, phi, nw, nh, region):
    """Independent oracle: exact polygon overlaps by shapely."""
    x0, y0, x1, y1 = region
    dx, dy = (x1 - x0) / nw, (y1 - y0) / nh
    img = np.zeros((nh, nw))
    for t, f in zip(tris, phi):
        P = Polygon(t)
        A = P.area
        for r in range(nh):
            for c in range(nw):
                px = box(x0 + c * dx, y0 + r * dy, x0 + (c + 1) * dx, y0 + (r + 1) * dy)
                img[r, c] += f * P.intersection(px).area / A
    return img


# ---------------------------------------------------------------- gamma / target

def test_target_flux_constant():
    f = target_flux_from_image(np.full((3, 4), 0.7))
    assert np.allclose(f.flux, 1 / 12) and f.spilled == 0.0


def test_target_flux_two_pixels():
    assert np.allclose(target_flux_from_image(np.array([[0.4, 0.0]])).flux, [[1, 0]])
    f = target_flux_from_image(np.array([[128 / 255, 1.0]])).flux[0]
    g = (128 / 255) ** 2.2
    assert np.allclose(f, [g / (1 + g), 1 / (1 + g)], atol=1e-15)
    assert np.allclose(f, [0.1800050584, 0.8199949416], atol=1e-10)


def test_target_flux_black():
    with pytest.raises(ZeroTotalFlux):
        target_flux_from_image(np.zeros((2, 2)))


def test_flux_to_pixels_roundtrip(rng):
    img = rng.uniform(0.05, 1, size=(5, 6))
    t = target_flux_from_image(img)
    assert np.max(np.abs(flux_to_pixels(t, t.G_tilde) - img)) < 1e-10
    assert flux_to_pixels(FluxImage(np.zeros((1, 1))), 1.0)[0, 0] == 0.0
    over = flux_to_pixels(FluxImage(np.array([[2.0]])), 1.0)
    assert over[0, 0] > 1.0  # clamping is left to file export


def test_gamma_inverse_toe_is_continuous():
    g = GammaModel()
    y0 = g.toe
    assert np.isclose(g.inverse(y0 * (1 - 1e-12)), g.inverse(y0 * (1 + 1e-12)), rtol=1e-9)
    assert np.isfinite(g.inverse_deriv(0.0))


def test_gamma_srgb_roundtrip(rng):
    g = GammaModel(srgb=True)
    x = rng.uniform(0, 1, 100)
    assert np.allclose(g.inverse(g.forward(x)), x, atol=1e-12)


# ---------------------------------------------------------------- source flux

def test_source_flux_flat():
    m = build_initial_mesh(1, 1, 2, 2)
    assert np.allclose(source_flux(m), [0.5, 0.5])


def test_source_flux_sums_to_one(rng):
    for n in (5, 9):
        m = wavy_mesh(rng, n)
        assert abs(source_flux(m).sum() - 1) < 1e-12


def test_source_flux_pixelmap_one_cell(rng):
    m = build_initial_mesh(4, 4, 5, 5)
    V = m.vertices.copy()
    V[12, :2] += [0.3, -0.2]  # move the centre vertex off the grid
    m.vertices = V
    w = np.zeros((4, 4))
    w[1, 2] = 1.0
    phi = source_flux(m, PixelMap(w))
    # oracle: Monte-Carlo integration of the density over each projected face
    P = V[m.faces][:, :, :2]
    s = rng.uniform([2, 1], [3, 2], size=(10 ** 6, 2))
    counts = np.zeros(m.n_faces)
    for f in range(m.n_faces):
        a, b, c = P[f]
        d1 = (b[0] - a[0]) * (s[:, 1] - a[1]) - (b[1] - a[1]) * (s[:, 0] - a[0])
        d2 = (c[0] - b[0]) * (s[:, 1] - b[1]) - (c[1] - b[1]) * (s[:, 0] - b[0])
        d3 = (a[0] - c[0]) * (s[:, 1] - c[1]) - (a[1] - c[1]) * (s[:, 0] - c[0])
        counts[f] = np.sum((d1 >= 0) & (d2 >= 0) & (d3 >= 0))
    est = counts / len(s)
    sigma = np.sqrt(np.maximum(est * (1 - est), 1e-12) / len(s))
    assert np.all(np.abs(phi - est) <= 3 * sigma + 1e-12)
    touched = np.abs(phi) > 0
    assert 1 < touched.sum() < m.n_faces
    assert abs(phi.sum() - 1) < 1e-12


def test_source_flux_rejects_fold():
    m = build_initial_mesh(1, 1, 3, 3)
    V = m.vertices.copy()
    V[4, 0] = 2.0  # centre vertex pushed past the right edge folds faces
    m.vertices = V
    with pytest.raises(InvalidHeightField):
        source_flux(m)


def test_source_flux_point_light(rng):
    m, sc = point_mesh_and_scene(rng, 5)
    phi = source_flux(m, Uniform(), sc)
    assert abs(phi.sum() - 1) < 1e-12 and np.all(phi > 0)


# ---------------------------------------------------------------- projection

def test_project_flat_lens():
    m = build_initial_mesh(2, 2, 3, 3)
    sc = OpticalScene(z_focal=5.0, image_region=(0, 0, 2, 2))
    U = project_faces(m, sc)
    assert np.allclose(U, m.vertices[m.faces][:, :, :2])


def test_project_mirror_law():
    m = build_initial_mesh(2, 2, 3, 3)
    sc = reflect_scene(2.0)
    U = project_faces(m, sc)
    a = np.array(sc.source.direction)
    b = reflect(a, np.array([0, 0, 1.0]))
    P = m.vertices[m.faces]
    t = (sc.z_focal - P[..., 2]) / b[2]
    assert np.allclose(U, P[..., :2] + t[..., None] * b[:2])


def test_project_tilted_face_is_affine():
    m = build_initial_mesh(1, 1, 2, 2)
    V = m.vertices.copy()
    V[:, 2] = 0.2 * V[:, 0] + 0.1 * V[:, 1]  # one plane across both faces
    m.vertices = V
    sc = OpticalScene(z_focal=10.0, image_region=(-5, -5, 5, 5))
    U = project_faces(m, sc)
    # coplanar faces share a normal, so the map from P_U(v) to the image is one affine map
    X = np.column_stack([V[:, :2], np.ones(4)])
    img = np.zeros((4, 2))
    for f, face in enumerate(m.faces):
        img[face] = U[f]
    coef, res, *_ = np.linalg.lstsq(X, img, rcond=None)
    assert np.allclose(X @ coef, img, atol=1e-12)


# ---------------------------------------------------------------- rasterisation

def test_raster_full_pixel():
    tris = np.array([[[0, 0], [1, 0], [1, 1]], [[0, 0], [1, 1], [0, 1]]], float)
    img = rasterize_flux(tris, np.array([0.5, 0.5]), 1, 1, (0, 0, 1, 1))
    assert np.isclose(img.flux[0, 0], 1.0) and abs(img.spilled) < 1e-15


def test_raster_straddle():
    tri = np.array([[[0.5, 0.0], [1.5, 0.0], [1.0, 1.0]]])
    img = rasterize_flux(tri, np.array([1.0]), 2, 1, (0, 0, 2, 1))
    assert np.allclose(img.flux, [[0.5, 0.5]], atol=1e-15)


def test_raster_matches_shapely(rng):
    for _ in range(20):
        tri = rng.uniform(-1, 9, size=(3, 2))
        e1, e2 = tri[1] - tri[0], tri[2] - tri[0]
        if e1[0] * e2[1] - e1[1] * e2[0] < 0:
            tri = tri[[0, 2, 1]]
        img = rasterize_flux(tri[None], np.array([1.0]), 8, 8, (0, 0, 8, 8))
        ref = shapely_raster(tri[None], [1.0], 8, 8, (0, 0, 8, 8))
        assert np.max(np.abs(img.flux - ref)) < 1e-12
        assert abs(img.flux.sum() + img.spilled - 1) < 1e-12


def test_raster_monte_carlo(rng):
    tri = np.array([[0.7, 1.2], [7.3, 2.1], [3.1, 6.8]])
    img = rasterize_flux(tri[None], np.array([1.0]), 8, 8, (0, 0, 8, 8)).flux
    n = 10 ** 6
    u, v = rng.uniform(size=(2, n))
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    s = tri[0] + u[:, None] * (tri[1] - tri[0]) + v[:, None] * (tri[2] - tri[0])
    h = np.zeros((8, 8))
    np.add.at(h, (s[:, 1].astype(int), s[:, 0].astype(int)), 1)
    h /= n
    sigma = np.sqrt(img * (1 - img) / n)
    assert np.all(np.abs(h - img) <= 3 * sigma + 1e-12)


def test_raster_degenerate_triangle():
    tri = np.array([[[1.2, 1.3], [1.2, 1.3], [1.2, 1.3]]])
    img = rasterize_flux(tri, np.array([0.25]), 4, 4, (0, 0, 4, 4))
    assert img.flux[1, 1] == 0.25 and img.flux.sum() == 0.25


# ---------------------------------------------------------------- render

def test_render_flat_uniform():
    m = build_initial_mesh(4, 4, 9, 9)
    r = render(m, Uniform(), OpticalScene(z_focal=12, image_region=(0, 0, 4, 4)), resolution=(8, 8))
    assert np.allclose(r.flux_image.flux, 1 / 64, atol=1e-15)
    assert np.allclose(r.face_centroids, r.image_triangles.mean(axis=1))


@pytest.mark.parametrize("kind", ["parallel", "reflect", "point"])
def test_render_conservation(rng, kind):
    for n in (5, 9, 13):
        if kind == "point":
            m, sc = point_mesh_and_scene(rng, n)
        else:
            m = wavy_mesh(rng, n, amp=0.1)
            sc = reflect_scene() if kind == "reflect" else OpticalScene(z_focal=30.0, image_region=(0, 0, 10, 10))
        r = render(m, Uniform(), sc, resolution=(16, 16))
        assert abs(r.flux_image.total - r.face_flux.sum()) < 1e-12
        assert np.all(r.flux_image.flux >= 0) and r.flux_image.spilled >= -1e-15


def _adjoint_case(rng, kind):
    if kind == "point":
        return point_mesh_and_scene(rng, 5)
    m = wavy_mesh(rng, 5, amp=0.1)
    if kind == "reflect":
        return m, reflect_scene()
    return m, OpticalScene(z_focal=30.0, image_region=(-1, -1, 11, 11))


@pytest.mark.parametrize("kind", ["parallel", "reflect", "point"])
def test_render_adjoint_fd(rng, kind):
    m, sc = _adjoint_case(rng, kind)
    res = (7, 7)
    wts = rng.normal(size=(7, 7))
    ws = rng.normal()
    point = m.front_params is not None

    def L(S):
        mm = m.copy()
        if point:
            mm.front_params = S
        else:
            mm.vertices = S
        fi = render(mm, Uniform(), sc, resolution=res).flux_image
        return float(np.sum(wts * fi.flux) + ws * fi.spilled)

    S0 = (m.front_params if point else m.vertices).copy()
    r = render(m, Uniform(), sc, resolution=res)
    g = render_adjoint(r, wts, ws, m, sc)
    h = 1e-6 * 10.0
    free = ~m.boundary_mask
    for idx in zip(*np.nonzero(free)):
        e = np.zeros_like(S0)
        e[idx] = h
        fd = (L(S0 + e) - L(S0 - e)) / (2 * h)
        assert abs(fd - g[idx]) <= 1e-5 * max(abs(fd), abs(g[idx])) + 1e-9


def test_adjoint_of_total_flux_is_zero(rng):
    m = wavy_mesh(rng, 6, amp=0.05)
    sc = OpticalScene(z_focal=30.0, image_region=(-20, -20, 30, 30))
    r = render(m, Uniform(), sc, resolution=(10, 10))
    assert r.flux_image.spilled < 1e-15
    g = render_adjoint(r, np.ones((10, 10)), 0.0, m, sc)
    assert np.max(np.abs(g[~m.boundary_mask])) < 1e-10


def test_adjoint_shift_invariance(rng):
    m = wavy_mesh(rng, 5, amp=0.05)
    sc = OpticalScene(z_focal=30.0, image_region=(-20, -20, 30, 30))
    r = render(m, Uniform(), sc, resolution=(50, 50))
    g1 = render_adjoint(r, np.ones((50, 50)) * 0.3, 0.0, m, sc)
    m2 = m.copy()
    V = m2.vertices.copy()
    V[:, 0] += 1.0  # exactly one pixel
    m2.vertices = V
    r2 = render(m2, Uniform(), sc, resolution=(50, 50))
    g2 = render_adjoint(r2, np.ones((50, 50)) * 0.3, 0.0, m2, sc)
    assert np.allclose(g1, g2, atol=1e-12)


def test_pixelmap_validation():
    with pytest.raises(Exception):
        PixelMap(np.zeros((2, 2)))
    assert np.isclose(PixelMap(np.ones((2, 2)) * 3).weights.sum(), 1.0)


def test_parallel_oblique_uniform_flux():
    # tilted parallel light onto a flat lens still splits flux by projected area
    m = build_initial_mesh(1, 1, 3, 3)
    sc = OpticalScene(source=ParallelLight((0.1, 0.0, 1.0)), z_focal=5.0, image_region=(-2, -2, 3, 3))
    r = render(m, Uniform(), sc, resolution=(5, 5))
    assert np.allclose(r.face_flux, 1 / 8)
