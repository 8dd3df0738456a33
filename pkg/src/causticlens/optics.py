"""Ray bending, light sources, and the point-light back-surface parameterisation.

Direction conventions: the surface normal ``n`` is taken on the transmission
side, i.e. ``n . a > 0`` for an incident direction ``a``. For the default
lens setup light travels along +z, the back surface faces +z and ``eta`` is
the ratio n_lens / n_air (1.49 for acrylic).
"""
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np

from .errors import AssumptionViolation, ConfigurationError, TotalInternalReflection

REFRACT = "refract"
REFLECT = "reflect"


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class ParallelLight:
    direction: Tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "direction", tuple(_unit(self.direction)))


@dataclass(frozen=True)
class PointLight:
    position: Tuple[float, float, float]


LightSource = Union[ParallelLight, PointLight]


@dataclass(frozen=True)
class PlaneFront:
    z_front: float = 0.0

    def evaluate(self, x, y):
        """Return h, h_x, h_y, h_xx, h_xy, h_yy at the query points."""
        x = np.asarray(x, dtype=float)
        full = np.full(x.shape, float(self.z_front))
        zero = np.zeros(x.shape)
        return full, zero, zero.copy(), zero.copy(), zero.copy(), zero.copy()


@dataclass(frozen=True)
class SampledFront:
    """Bilinearly interpolated heights sampled on a regular grid over [0,W]x[0,H]."""
    heights: np.ndarray  # (ny, nx)
    width: float
    height: float

    def evaluate(self, x, y):
        h = np.asarray(self.heights, dtype=float)
        ny, nx = h.shape
        dx = self.width / (nx - 1)
        dy = self.height / (ny - 1)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        i = np.clip(np.floor(x / dx).astype(int), 0, nx - 2)
        j = np.clip(np.floor(y / dy).astype(int), 0, ny - 2)
        s = x / dx - i
        t = y / dy - j
        h00 = h[j, i]
        h10 = h[j, i + 1]
        h01 = h[j + 1, i]
        h11 = h[j + 1, i + 1]
        val = (1 - s) * (1 - t) * h00 + s * (1 - t) * h10 + (1 - s) * t * h01 + s * t * h11
        hx = ((1 - t) * (h10 - h00) + t * (h11 - h01)) / dx
        hy = ((1 - s) * (h01 - h00) + s * (h11 - h10)) / dy
        hxy = (h11 - h10 - h01 + h00) / (dx * dy)
        zero = np.zeros_like(val)
        return val, hx, hy, zero, hxy, zero.copy()


FrontSurface = Union[PlaneFront, SampledFront]


@dataclass
class OpticalScene:
    source: LightSource = field(default_factory=ParallelLight)
    front: FrontSurface = field(default_factory=PlaneFront)
    eta: float = 1.49
    z_focal: float = 30.0
    mode: str = REFRACT
    image_region: Tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0)
    eta_front: Optional[float] = None  # defaults to 1 / eta (air into lens)

    def __post_init__(self):
        if not self.eta > 0:
            raise ConfigurationError("eta must be positive")
        if self.mode not in (REFRACT, REFLECT):
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        x0, y0, x1, y1 = self.image_region
        if not (x1 > x0 and y1 > y0):
            raise ConfigurationError("empty image region")
        if self.eta_front is None:
            self.eta_front = 1.0 / self.eta
        if self.mode == REFLECT:
            if isinstance(self.source, PointLight):
                raise ConfigurationError("reflection is supported for parallel light only")
            a = np.asarray(self.source.direction)
            sin_incl = np.linalg.norm(np.cross(a, [0.0, 0.0, 1.0]))
            if sin_incl < 1e-3:
                raise ConfigurationError(
                    "reflective setup needs the light inclined to the mirror normal")

    @property
    def is_point(self) -> bool:
        return isinstance(self.source, PointLight)


# --------------------------------------------------------------------------
# refraction / reflection
# --------------------------------------------------------------------------

def tir_margin(a, n, eta):
    c = np.sum(np.asarray(a) * np.asarray(n), axis=-1)
    return 1.0 + eta * eta * (c * c - 1.0)


def refract_raw(a, n, eta):
    """Refracted direction by the closed-form Snell formula (vectorised, no checks).

    Unit for unit inputs; returns ``(b, margin)``.
    """
    c = np.sum(a * n, axis=-1, keepdims=True)
    m = 1.0 + eta * eta * (c * c - 1.0)
    s = np.sqrt(np.maximum(m, 0.0))
    return n * s + eta * (a - c * n), m[..., 0]


def refract_vjp(a, n, eta, g):
    """Pull back ``g = dL/db`` to ``(dL/da, dL/dn)`` for :func:`refract_raw`."""
    c = np.sum(a * n, axis=-1, keepdims=True)
    s = np.sqrt(np.maximum(1.0 + eta * eta * (c * c - 1.0), 1e-300))
    gn_dot = np.sum(g * n, axis=-1, keepdims=True)
    K = gn_dot * (eta * eta * c / s - eta)
    return eta * g + K * n, (s - eta * c) * g + K * a


def refract(a, n, eta):
    a = np.asarray(a, dtype=float)
    n = np.asarray(n, dtype=float)
    m = tir_margin(a, n, eta)
    if np.any(m <= 0):
        raise TotalInternalReflection()
    b, _ = refract_raw(a, n, eta)
    return b / np.linalg.norm(b, axis=-1, keepdims=True)


def reflect(a, n):
    a = np.asarray(a, dtype=float)
    n = np.asarray(n, dtype=float)
    return a - 2.0 * np.sum(a * n, axis=-1, keepdims=True) * n


def reflect_vjp(a, n, g):
    c = np.sum(a * n, axis=-1, keepdims=True)
    gn = np.sum(g * n, axis=-1, keepdims=True)
    return g - 2.0 * gn * n, -2.0 * (c * g + gn * a)


# --------------------------------------------------------------------------
# point light parameterisation
# --------------------------------------------------------------------------

def point_light_forward(params: np.ndarray, scene: OpticalScene, check: bool = True):
    """Back-vertex positions and incident directions from (x_f, y_f, z_b).

    Returns ``(V_back, incident, cache)``; ``cache`` feeds
    :func:`point_light_vjp` and also holds the front points.
    """
    P = np.asarray(params, dtype=float).reshape(-1, 3)
    q = np.asarray(scene.source.position, dtype=float)
    xf, yf, zb = P[:, 0], P[:, 1], P[:, 2]
    h, hx, hy, hxx, hxy, hyy = scene.front.evaluate(xf, yf)
    vf = np.stack([xf, yf, h], axis=1)
    N = np.stack([-hx, -hy, np.ones_like(h)], axis=1)
    Nn = np.linalg.norm(N, axis=1, keepdims=True)
    nf = N / Nn
    d = vf - q
    dn = np.linalg.norm(d, axis=1, keepdims=True)
    a = d / dn
    bf, margin = refract_raw(a, nf, scene.eta_front)
    if check:
        if np.any(margin <= 0):
            raise TotalInternalReflection("total internal reflection at the front surface")
        if np.any(bf[:, 2] <= 0):
            raise AssumptionViolation("refracted ray has non-positive z component")
    t = (zb - h) / bf[:, 2]
    vb = vf + t[:, None] * bf
    cache = dict(P=P, h=h, hx=hx, hy=hy, hxx=hxx, hxy=hxy, hyy=hyy, vf=vf, nf=nf,
                 Nn=Nn, a=a, dn=dn, bf=bf, t=t, eta_f=scene.eta_front)
    return vb, bf, cache


def point_light_vjp(cache, g_vb, g_bf, g_vf=None):
    """Pull back gradients on back vertices, incident dirs and front points to params."""
    bf = cache["bf"]
    t = cache["t"]
    g_vf_tot = g_vb.copy() if g_vf is None else g_vb + g_vf
    g_bf = g_bf + t[:, None] * g_vb
    g_t = np.sum(g_vb * bf, axis=1)
    bz = bf[:, 2]
    g_zb = g_t / bz
    g_h = -g_t / bz
    g_bf[:, 2] += -g_t * t / bz
    g_a, g_nf = refract_vjp(cache["a"], cache["nf"], cache["eta_f"], g_bf)
    a = cache["a"]
    g_d = (g_a - np.sum(g_a * a, axis=1, keepdims=True) * a) / cache["dn"]
    g_vf_tot = g_vf_tot + g_d
    nf = cache["nf"]
    g_N = (g_nf - np.sum(g_nf * nf, axis=1, keepdims=True) * nf) / cache["Nn"]
    g_hx = -g_N[:, 0]
    g_hy = -g_N[:, 1]
    g_h = g_h + g_vf_tot[:, 2]
    g_x = g_vf_tot[:, 0] + g_h * cache["hx"] + g_hx * cache["hxx"] + g_hy * cache["hxy"]
    g_y = g_vf_tot[:, 1] + g_h * cache["hy"] + g_hx * cache["hxy"] + g_hy * cache["hyy"]
    return np.stack([g_x, g_y, g_zb], axis=1)


def back_vertex_from_params(xf: float, yf: float, zb: float, scene: OpticalScene):
    """Back vertex reached by the ray through front point (xf, yf).

    Returns ``(position, incident_dir, front_point)`` where ``incident_dir``
    is the in-lens direction arriving at the back vertex.
    """
    if not scene.is_point:
        raise ConfigurationError("back_vertex_from_params needs a point light")
    vb, bf, cache = point_light_forward(np.array([[xf, yf, zb]]), scene)
    return vb[0], bf[0] / np.linalg.norm(bf[0]), cache["vf"][0]


# --------------------------------------------------------------------------
# solid angles
# --------------------------------------------------------------------------

def _solid_angle_terms(R1, R2, R3):
    r1 = np.linalg.norm(R1, axis=-1)
    r2 = np.linalg.norm(R2, axis=-1)
    r3 = np.linalg.norm(R3, axis=-1)
    num = np.sum(R1 * np.cross(R2, R3), axis=-1)
    den = (r1 * r2 * r3 + np.sum(R1 * R2, axis=-1) * r3
           + np.sum(R1 * R3, axis=-1) * r2 + np.sum(R2 * R3, axis=-1) * r1)
    return num, den, r1, r2, r3


def solid_angles_signed(tris: np.ndarray, q) -> np.ndarray:
    """Signed solid angles of (n, 3, 3) triangles at q (positive when CCW seen from q)."""
    q = np.asarray(q, dtype=float)
    num, den, *_ = _solid_angle_terms(tris[:, 0] - q, tris[:, 1] - q, tris[:, 2] - q)
    return 2.0 * np.arctan2(num, den)


def solid_angles_vjp(tris: np.ndarray, q, g: np.ndarray) -> np.ndarray:
    """Gradient of sum(g * signed solid angle) w.r.t. triangle vertices."""
    q = np.asarray(q, dtype=float)
    R1, R2, R3 = tris[:, 0] - q, tris[:, 1] - q, tris[:, 2] - q
    num, den, r1, r2, r3 = _solid_angle_terms(R1, R2, R3)
    fac = 2.0 / (num * num + den * den)
    cN = (fac * den * g)[:, None]
    cD = (-fac * num * g)[:, None]
    d12 = np.sum(R1 * R2, axis=1)[:, None]
    d13 = np.sum(R1 * R3, axis=1)[:, None]
    d23 = np.sum(R2 * R3, axis=1)[:, None]
    r1, r2, r3 = r1[:, None], r2[:, None], r3[:, None]
    dD1 = (r2 * r3 + d23) * R1 / r1 + R2 * r3 + R3 * r2
    dD2 = (r1 * r3 + d13) * R2 / r2 + R1 * r3 + R3 * r1
    dD3 = (r1 * r2 + d12) * R3 / r3 + R1 * r2 + R2 * r1
    out = np.empty_like(tris)
    out[:, 0] = cN * np.cross(R2, R3) + cD * dD1
    out[:, 1] = cN * np.cross(R3, R1) + cD * dD2
    out[:, 2] = cN * np.cross(R1, R2) + cD * dD3
    return out


def solid_angle(triangle, q) -> float:
    """Unsigned solid angle subtended by a triangle at q; 0 when degenerate."""
    T = np.asarray(triangle, dtype=float).reshape(1, 3, 3)
    num, den, *_ = _solid_angle_terms(T[:, 0] - q, T[:, 1] - q, T[:, 2] - q)
    if num[0] == 0.0:
        return 0.0
    return float(abs(2.0 * np.arctan2(num[0], den[0])))
