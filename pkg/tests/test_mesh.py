import numpy as np
import pytest

from causticlens.errors import ConfigurationError, DegenerateFaceError
from causticlens.mesh import (HeightFieldMesh, build_initial_mesh, face_normal, grid_faces,
                              internal_edges, parent_faces, projected_areas,
                              projected_signed_area, subdivide, umbrella_operator)
from causticlens.optics import OpticalScene
from causticlens.render import Uniform, render

from conftest import wavy_mesh


def test_initial_unit_mesh():
    m = build_initial_mesh(1, 1, 2, 2, 0)
    assert m.vertices.shape == (4, 3) and m.n_faces == 2
    # half of the unit cell
    assert np.allclose([projected_signed_area(m, f) for f in range(2)], 0.5)


def test_initial_mesh_full_resolution():
    m = build_initial_mesh(10, 10, 641, 737)
    assert m.n_faces == 2 * 640 * 736
    a = projected_areas(m.vertices, m.faces)
    assert np.allclose(a, a[0]) and a[0] > 0


@pytest.mark.parametrize("args", [(1, 1, 1, 2), (1, 1, 2, 1), (0, 1, 2, 2), (1, -1, 2, 2)])
def test_initial_mesh_rejects_bad_dims(args):
    with pytest.raises(ConfigurationError):
        build_initial_mesh(*args)


def test_faces_ccw_and_cover_domain():
    m = build_initial_mesh(3, 2, 4, 3)
    a = projected_areas(m.vertices, m.faces)
    assert np.all(a > 0)
    assert np.isclose(a.sum(), 6.0)


def _tri_mesh(P):
    m = build_initial_mesh(1, 1, 2, 2)
    V = m.vertices.copy()
    F = m.faces[0]
    V[F] = P
    m.vertices = V
    return m


def test_face_normal_examples():
    m = _tri_mesh(np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0]], float))
    assert np.allclose(face_normal(m, 0), [0, 0, 1])
    # (0,0,0),(1,0,1),(0,1,0) by a hand cross product: (1,0,1)x(0,1,0) = (-1,0,1)
    V = np.array([[0, 0, 0], [1, 0, 1], [0, 1, 0]], float)
    n = np.cross(V[1] - V[0], V[2] - V[0])
    assert np.allclose(n / np.linalg.norm(n), np.array([-1, 0, 1]) / np.sqrt(2))
    m2 = _tri_mesh(V)
    assert np.allclose(face_normal(m2, 0), np.array([-1, 0, 1]) / np.sqrt(2), atol=1e-15)


def test_face_normal_unit(rng):
    m = wavy_mesh(rng, 7)
    for f in range(m.n_faces):
        assert abs(np.linalg.norm(face_normal(m, f)) - 1) < 1e-12


def test_face_normal_degenerate():
    m = _tri_mesh(np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], float))
    with pytest.raises(DegenerateFaceError):
        face_normal(m, 0)


def test_signed_area_flip_and_segment():
    m = build_initial_mesh(1, 1, 2, 2)
    assert np.isclose(projected_signed_area(m, 0), 0.5)
    V = m.vertices.copy()
    f = m.faces[0]
    V[[f[1], f[2]], :2] = V[[f[2], f[1]], :2]
    m.vertices = V
    assert np.isclose(projected_signed_area(m, 0), -0.5)
    seg = _tri_mesh(np.array([[0, 0, 0], [1, 1, 0], [2, 2, 1]], float))
    assert projected_signed_area(seg, 0) == 0.0


def test_subdivide_counts_and_areas():
    m = build_initial_mesh(1, 1, 2, 2)
    c = subdivide(m)
    assert (c.nx, c.ny, c.n_faces) == (3, 3, 8)
    assert np.allclose(projected_areas(c.vertices, c.faces), 0.125)


def test_subdivide_keeps_parent_vertices(rng):
    m = wavy_mesh(rng, 5)
    c = subdivide(m)
    assert np.array_equal(c.grid()[::2, ::2], m.grid())


def test_subdivide_preserves_render(rng):
    m = wavy_mesh(rng, 6, amp=0.1)
    sc = OpticalScene(z_focal=30.0, image_region=(0, 0, 10, 10))
    a = render(m, Uniform(), sc, resolution=(16, 16)).flux_image
    b = render(subdivide(m), Uniform(), sc, resolution=(16, 16)).flux_image
    assert np.max(np.abs(a.flux - b.flux)) < 1e-12


def test_parent_faces_cover_children():
    pf = parent_faces(3, 3)
    assert len(pf) == 2 * 4 * 4
    assert np.array_equal(np.bincount(pf), np.full(8, 4))


def test_internal_edges_small_grid():
    # 2x2 grid: one diagonal shared by the two faces
    assert internal_edges(2, 2).tolist() == [[0, 1]]
    # n x n vertices: (n-1)^2 diagonals + 2 (n-1)(n-2) grid edges
    n = 5
    assert len(internal_edges(n, n)) == (n - 1) ** 2 + 2 * (n - 1) * (n - 2)


def test_umbrella_on_uniform_grid_is_zero():
    m = build_initial_mesh(4, 3, 5, 4)
    L = umbrella_operator(5, 4)
    assert np.allclose(L @ m.vertices[:, :2], 0)


def test_frozen_mask():
    m = build_initial_mesh(1, 1, 3, 3)
    g = m.boundary_mask.reshape(3, 3, 3)
    assert g[:, 0, 0].all() and g[:, -1, 0].all() and not g[1, 1].any()
    assert not g[..., 2].any()


def test_vertex_count_mismatch():
    with pytest.raises(ConfigurationError):
        HeightFieldMesh(3, 3, np.zeros((8, 3)), 1.0, 1.0)


def test_grid_faces_orientation():
    F = grid_faces(3, 2)
    assert F[0].tolist() == [0, 1, 4] and F[1].tolist() == [0, 4, 3]
