import numpy as np
import pytest

from causticlens.errors import (AssumptionViolation, ConfigurationError,
                                TotalInternalReflection)
from causticlens.optics import (OpticalScene, ParallelLight, PlaneFront, PointLight,
                                SampledFront, back_vertex_from_params, point_light_forward,
                                point_light_vjp, reflect, refract, refract_raw, refract_vjp,
                                solid_angle, solid_angles_signed, solid_angles_vjp, tir_margin)

from conftest import icosphere


def _random_valid(rng, n, eta):
    """Unit (a, n) pairs with n.a > 0 and positive TIR margin."""
    out_a, out_n = [], []
    while len(out_a) < n:
        nn = rng.normal(size=3)
        nn /= np.linalg.norm(nn)
        a = rng.normal(size=3)
        a /= np.linalg.norm(a)
        c = a @ nn
        if c < 0:
            a = -a
            c = -c
        if tir_margin(a, nn, eta) > 1e-3:
            out_a.append(a)
            out_n.append(nn)
    return np.array(out_a), np.array(out_n)


def test_refract_normal_incidence():
    assert np.allclose(refract([0, 0, 1], [0, 0, 1], 1.49), [0, 0, 1])


def test_refract_oblique():
    a = np.array([0.5, 0.0, np.sqrt(3) / 2])
    b = refract(a, [0, 0, 1], 1.49)
    # tangential part scales by eta, the normal part closes the unit norm
    assert np.isclose(b[0], 0.745, atol=1e-15)
    assert np.isclose(b[2], np.sqrt(1 - 0.745 ** 2), atol=1e-15)
    assert b[1] == 0.0 and abs(np.linalg.norm(b) - 1) < 1e-15


def test_refract_tir():
    a = np.array([0.8, 0.0, 0.6])
    with pytest.raises(TotalInternalReflection):
        refract(a, [0, 0, 1], 1.49)


def test_snell_law_property(rng):
    for eta in (1.49, 1 / 1.49, 1.2):
        A, N = _random_valid(rng, 20000, eta)
        B = refract(A, N, eta)
        ca = np.sum(A * N, axis=1)
        cb = np.sum(B * N, axis=1)
        sa = np.sqrt(np.maximum(1 - ca ** 2, 0))
        sb = np.sqrt(np.maximum(1 - cb ** 2, 0))
        assert np.max(np.abs(sb - eta * sa)) < 1e-10
        cop = np.abs(np.sum(B * np.cross(A, N), axis=1))
        assert np.max(cop) < 1e-10


def test_eta_one_identity(rng):
    A, N = _random_valid(rng, 1000, 1.0)
    assert np.max(np.abs(refract(A, N, 1.0) - A)) < 1e-12


def test_tir_margin_values():
    assert tir_margin(np.array([0, 0, 1.0]), np.array([0, 0, 1.0]), 1.49) == 1.0
    assert np.isclose(tir_margin(np.array([1.0, 0, 0]), np.array([0, 0, 1.0]), 1.49), 1 - 1.49 ** 2)
    a = np.array([0.6, 0, 0.8])
    assert np.isclose(tir_margin(a, np.array([0, 0, 1.0]), 1.0), 0.64)


def test_reflect_examples():
    assert np.allclose(reflect([0, 0, -1], [0, 0, 1]), [0, 0, 1])
    s = np.sqrt(2) / 2
    assert np.allclose(reflect([s, 0, -s], [0, 0, 1]), [s, 0, s])
    assert np.allclose(reflect([1, 0, 0], [0, 0, 1]), [1, 0, 0])


def test_reflect_involution(rng):
    A = rng.normal(size=(1000, 3))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    N = rng.normal(size=(1000, 3))
    N /= np.linalg.norm(N, axis=1, keepdims=True)
    R = reflect(A, N)
    assert np.max(np.abs(reflect(R, N) - A)) < 1e-12
    assert np.max(np.abs(np.linalg.norm(R, axis=1) - 1)) < 1e-12


def test_refract_vjp_fd(rng):
    A, N = _random_valid(rng, 5, 1.49)
    g = rng.normal(size=A.shape)
    ga, gn = refract_vjp(A, N, 1.49, g)
    h = 1e-6
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        fa = (np.sum(g * refract_raw(A + e, N, 1.49)[0]) - np.sum(g * refract_raw(A - e, N, 1.49)[0])) / (2 * h)
        fn = (np.sum(g * refract_raw(A, N + e, 1.49)[0]) - np.sum(g * refract_raw(A, N - e, 1.49)[0])) / (2 * h)
        assert np.isclose(fa, ga[:, k].sum(), atol=1e-7)
        assert np.isclose(fn, gn[:, k].sum(), atol=1e-7)


# ---------------------------------------------------------------- point light

def _point_scene(q=(0.5, 0.5, -1.0), front=None, eta=1.49):
    return OpticalScene(source=PointLight(q), front=front or PlaneFront(0.0), eta=eta)


def test_back_vertex_on_axis():
    pos, inc, fp = back_vertex_from_params(0.5, 0.5, 1.0, _point_scene())
    assert np.allclose(pos, [0.5, 0.5, 1.0], atol=1e-15)
    assert np.allclose(inc, [0, 0, 1], atol=1e-15)
    assert np.allclose(fp, [0.5, 0.5, 0.0])


def _march_oracle(q, xf, yf, zb, eta_rel):
    """Trace air -> glass at a flat z=0 interface with angles, then bisect to z = zb."""
    vf = np.array([xf, yf, 0.0])
    a = vf - np.asarray(q, float)
    a /= np.linalg.norm(a)
    alpha = np.arccos(a[2])
    beta = np.arcsin(eta_rel * np.sin(alpha))
    horiz = a[:2] / (np.linalg.norm(a[:2]) or 1.0)
    b = np.array([horiz[0] * np.sin(beta), horiz[1] * np.sin(beta), np.cos(beta)])
    lo, hi = 0.0, 1.0
    while (vf + hi * b)[2] < zb:
        hi *= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if (vf + mid * b)[2] < zb:
            lo = mid
        else:
            hi = mid
    return vf + 0.5 * (lo + hi) * b


def test_back_vertex_oblique_matches_march():
    sc = _point_scene(q=(-2.0, 1.0, -3.0))
    for xf, yf, zb in [(0.3, 0.8, 1.0), (2.0, -1.0, 0.5), (0.0, 0.0, 2.0)]:
        pos, _, _ = back_vertex_from_params(xf, yf, zb, sc)
        assert np.max(np.abs(pos - _march_oracle(sc.source.position, xf, yf, zb, 1 / 1.49))) < 1e-10


def test_back_vertex_roundtrip_and_on_ray(rng):
    front = SampledFront(0.05 * rng.normal(size=(6, 6)), 10.0, 10.0)
    sc = _point_scene(q=(5.0, 5.0, -30.0), front=front)
    P = np.column_stack([rng.uniform(0, 10, 500), rng.uniform(0, 10, 500), rng.uniform(0.5, 3, 500)])
    vb, bf, cache = point_light_forward(P, sc)
    assert np.max(np.abs(vb[:, 2] - P[:, 2])) < 1e-12
    d = vb - cache["vf"]
    cross = np.cross(d, bf / np.linalg.norm(bf, axis=1, keepdims=True))
    assert np.max(np.linalg.norm(cross, axis=1)) < 1e-12
    assert np.all(np.sum(d * bf, axis=1) >= 0)


def test_point_light_far_limit():
    W = 10.0
    sc = _point_scene(q=(W / 2, W / 2, -1e6 * W))
    P = np.array([[1.0, 2.0, 1.5], [9.0, 0.5, 0.7], [5.0, 5.0, 1.0]])
    vb, _, _ = point_light_forward(P, sc)
    assert np.max(np.abs(vb - P)) < 1e-6


def test_assumption_violation():
    # a steep front lit slightly from above still faces the light, but the
    # refracted ray heads downward
    front = SampledFront(np.array([[0.0, -50.0], [0.0, -50.0]]), 1.0, 1.0)
    sc = OpticalScene(source=PointLight((-100.0, 0.5, -20.0)), front=front, eta=1.49)
    with pytest.raises(AssumptionViolation):
        back_vertex_from_params(0.5, 0.5, 30.0, sc)


def test_point_light_vjp_fd(rng):
    front = SampledFront(0.05 * rng.normal(size=(5, 5)), 10.0, 10.0)
    sc = _point_scene(q=(5.0, 5.0, -30.0), front=front)
    P = np.column_stack([rng.uniform(1, 9, 4), rng.uniform(1, 9, 4), rng.uniform(0.5, 3, 4)])
    gv = rng.normal(size=(4, 3))
    gb = rng.normal(size=(4, 3))

    def L(P):
        vb, bf, _ = point_light_forward(P, sc)
        return np.sum(gv * vb) + np.sum(gb * bf)

    _, _, cache = point_light_forward(P, sc)
    g = point_light_vjp(cache, gv, gb)
    h = 1e-6
    for i in range(4):
        for k in range(3):
            e = np.zeros_like(P)
            e[i, k] = h
            assert np.isclose((L(P + e) - L(P - e)) / (2 * h), g[i, k], rtol=1e-6, atol=1e-8)


def test_point_light_needs_point_source():
    with pytest.raises(ConfigurationError):
        back_vertex_from_params(0, 0, 1, OpticalScene())


# ---------------------------------------------------------------- solid angles

def test_solid_angle_cube_half_face():
    q = np.zeros(3)
    tri = np.array([[-0.5, -0.5, 0.5], [0.5, -0.5, 0.5], [0.5, 0.5, 0.5]])
    assert abs(solid_angle(tri, q) - 4 * np.pi / 12) < 1e-14


def test_solid_angle_shrinks_to_zero():
    q = np.zeros(3)
    base = np.array([[0, 0, 1.0], [1, 0, 1], [0, 1, 1]])
    vals = [solid_angle(base[0] + s * (base - base[0]), q) for s in (1, 1e-3, 1e-6)]
    assert vals[0] > vals[1] > vals[2] and vals[2] < 1e-11
    assert solid_angle(np.array([[0, 0, 1.0], [1, 0, 1], [2, 0, 1]]), q) == 0.0


def test_solid_angle_closed_sphere():
    V, F = icosphere(3)
    q = np.array([0.1, -0.2, 0.05])
    tris = 2.0 * V[F]
    assert abs(solid_angles_signed(tris, q).sum() - 4 * np.pi) < 1e-9
    total = sum(solid_angle(t, q) for t in tris)
    assert abs(total - 4 * np.pi) < 1e-9


def test_solid_angle_vjp_fd(rng):
    tris = rng.normal(size=(3, 3, 3)) + np.array([0, 0, 3.0])
    q = np.array([0.1, 0.2, -0.3])
    g = rng.normal(size=3)
    G = solid_angles_vjp(tris, q, g)
    h = 1e-6
    for idx in np.ndindex(tris.shape):
        e = np.zeros_like(tris)
        e[idx] = h
        fd = (g @ solid_angles_signed(tris + e, q) - g @ solid_angles_signed(tris - e, q)) / (2 * h)
        assert np.isclose(fd, G[idx], atol=1e-8)


def test_scene_validation():
    with pytest.raises(ConfigurationError):
        OpticalScene(eta=0.0)
    with pytest.raises(ConfigurationError):
        OpticalScene(mode="bounce")
    with pytest.raises(ConfigurationError):
        OpticalScene(source=ParallelLight((0, 0, -1)), mode="reflect")
    with pytest.raises(ConfigurationError):
        OpticalScene(source=PointLight((0, 0, -1)), mode="reflect")
    assert np.isclose(OpticalScene().eta_front, 1 / 1.49)
