"""Face-based differentiable flux renderer.

Every back-surface face bends its incoming light by its own (flat) normal, so
the three rays leaving its corners hit the receptive plane in an image
triangle. The face's source flux is spread over the pixels in proportion to
the exact overlap area of that triangle with each pixel. The adjoint pulls
any linear functional of the pixel fluxes back to the surface variables.

Surface variables are the back-surface vertex positions for parallel light,
or the per-vertex ``(x_f, y_f, z_b)`` parameters for a point light.
"""
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np

from . import _kernels as K
from .errors import (ConfigurationError, InvalidHeightField, ProjectionFailure,
                     TotalInternalReflection, ZeroTotalFlux)
from .mesh import HeightFieldMesh
from .optics import (REFLECT, OpticalScene, point_light_forward, point_light_vjp,
                     reflect_vjp, refract_raw, refract_vjp, solid_angles_signed,
                     solid_angles_vjp)


# --------------------------------------------------------------------------
# gamma and flux images
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GammaModel:
    """Map between stored pixel values (0..gmax) and linear luminance (0..1).

    ``gamma_inv`` is linear below ``toe`` so its derivative stays finite at 0.
    """
    exponent: float = 2.2
    gmax: float = 1.0
    srgb: bool = False
    toe: float = 1e-6

    def forward(self, g):
        x = np.asarray(g, dtype=float) / self.gmax
        if self.srgb:
            return np.where(x <= 0.04045, x / 12.92, ((np.maximum(x, 0.04045) + 0.055) / 1.055) ** 2.4)
        return np.maximum(x, 0.0) ** self.exponent

    def inverse(self, y):
        y = np.asarray(y, dtype=float)
        if self.srgb:
            lin = y * 12.92
            pw = 1.055 * np.maximum(y, 0.0031308) ** (1 / 2.4) - 0.055
            return self.gmax * np.where(y <= 0.0031308, lin, pw)
        p = 1.0 / self.exponent
        y0 = self.toe
        lin = (y0 ** p) * y / y0
        return self.gmax * np.where(y <= y0, lin, np.maximum(y, y0) ** p)

    def inverse_deriv(self, y):
        y = np.asarray(y, dtype=float)
        if self.srgb:
            pw = 1.055 / 2.4 * np.maximum(y, 0.0031308) ** (1 / 2.4 - 1)
            return self.gmax * np.where(y <= 0.0031308, 12.92, pw)
        p = 1.0 / self.exponent
        y0 = self.toe
        return self.gmax * np.where(y <= y0, y0 ** (p - 1), p * np.maximum(y, y0) ** (p - 1))


@dataclass
class FluxImage:
    flux: np.ndarray  # (rows, cols), row index grows with y
    spilled: float = 0.0
    G_tilde: Optional[float] = None

    @property
    def width(self) -> int:
        return self.flux.shape[1]

    @property
    def height(self) -> int:
        return self.flux.shape[0]

    @property
    def total(self) -> float:
        return float(self.flux.sum() + self.spilled)


def target_flux_from_image(image, gamma: GammaModel = GammaModel()) -> FluxImage:
    """Per-pixel target flux: gamma-linearised values normalised to sum 1."""
    img = np.asarray(image, dtype=float)
    if img.size == 0:
        raise ConfigurationError("empty target image")
    lin = gamma.forward(img)
    G = float(lin.sum())
    if not G > 0:
        raise ZeroTotalFlux("target image carries no light")
    return FluxImage(lin / G, 0.0, G)


def flux_to_pixels(flux: FluxImage, G_tilde: float, gamma: GammaModel = GammaModel()) -> np.ndarray:
    """Pixel values gamma_inv(G * flux), not clamped."""
    if not G_tilde > 0:
        raise ConfigurationError("G_tilde must be positive")
    return gamma.inverse(G_tilde * flux.flux)


# --------------------------------------------------------------------------
# source distributions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Uniform:
    pass


@dataclass(frozen=True)
class PixelMap:
    """Piecewise-constant source weights on a regular grid over U, summing to 1."""
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 2 or np.any(w < 0) or not w.sum() > 0:
            raise ConfigurationError("pixel map weights must be a nonnegative 2D grid")
        object.__setattr__(self, "weights", w / w.sum())


SourceDistribution = Union[Uniform, PixelMap]


# --------------------------------------------------------------------------
# surface state: variables -> back vertices (+ incident directions)
# --------------------------------------------------------------------------

@dataclass
class SurfaceState:
    V: np.ndarray  # back vertices (nv, 3)
    F: np.ndarray
    incident: Optional[np.ndarray] = None  # per-vertex in-lens directions (point light)
    front: Optional[np.ndarray] = None  # front points (point light)
    cache: Optional[dict] = None


def surface_variables(mesh: HeightFieldMesh, scene: OpticalScene) -> np.ndarray:
    if scene.is_point:
        if mesh.front_params is None:
            raise ConfigurationError("point-light scene needs mesh.front_params")
        return mesh.front_params
    return mesh.vertices


def surface_state(mesh: HeightFieldMesh, scene: OpticalScene, check: bool = True) -> SurfaceState:
    if scene.is_point:
        V, inc, cache = point_light_forward(surface_variables(mesh, scene), scene, check)
        return SurfaceState(V, mesh.faces, inc, cache["vf"], cache)
    return SurfaceState(mesh.vertices, mesh.faces)


def surface_vjp(state: SurfaceState, g_V, g_inc=None, g_front=None) -> np.ndarray:
    """Gradient with respect to the surface variables."""
    if state.cache is None:
        return g_V
    if g_inc is None:
        g_inc = np.zeros_like(g_V)
    return point_light_vjp(state.cache, g_V, g_inc, g_front)


def _scatter(F, g_corner, nv):
    """Sum per-(face, corner) 3-vectors into per-vertex rows (deterministic)."""
    idx = F.ravel()
    flat = g_corner.reshape(-1, g_corner.shape[-1])
    return np.stack([np.bincount(idx, flat[:, d], minlength=nv)
                     for d in range(flat.shape[1])], axis=1)


def _incident(state: SurfaceState, scene: OpticalScene) -> np.ndarray:
    """(n_faces, 3, 3) incident directions per face corner."""
    if state.incident is not None:
        return state.incident[state.F]
    a = np.asarray(scene.source.direction, dtype=float)
    return np.broadcast_to(a, (len(state.F), 3, 3))


def oblique_xy(P3, a):
    """Project points along direction a onto the plane z = 0."""
    return P3[..., :2] - P3[..., 2:3] * (a[:2] / a[2])


# --------------------------------------------------------------------------
# source flux
# --------------------------------------------------------------------------

def _area_grad(T):
    """d(signed area)/d(vertices) for (n, 3, 2) triangles."""
    g = np.empty_like(T)
    g[:, 0, 0] = T[:, 1, 1] - T[:, 2, 1]
    g[:, 0, 1] = T[:, 2, 0] - T[:, 1, 0]
    g[:, 1, 0] = T[:, 2, 1] - T[:, 0, 1]
    g[:, 1, 1] = T[:, 0, 0] - T[:, 2, 0]
    g[:, 2, 0] = T[:, 0, 1] - T[:, 1, 1]
    g[:, 2, 1] = T[:, 1, 0] - T[:, 0, 0]
    return 0.5 * g


def signed_areas_2d(T):
    e1 = T[:, 1] - T[:, 0]
    e2 = T[:, 2] - T[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def _source_raw(state, dist, scene, width, height, want_grad):
    """Unnormalised face weights and their (n,3,3) gradient w.r.t. the carrier points."""
    if scene.is_point:
        q = np.asarray(scene.source.position, dtype=float)
        T = state.front[state.F]
        raw = solid_angles_signed(T, q)
        return raw, T, None
    a = np.asarray(scene.source.direction, dtype=float)
    T = oblique_xy(state.V[state.F], a)
    if isinstance(dist, PixelMap):
        w = dist.weights
        nh, nw = w.shape
        dx, dy = width / nw, height / nh
        raw, g2 = K.weighted_areas(np.ascontiguousarray(T), w / (dx * dy), 0.0, 0.0,
                                   dx, dy, nw, nh, want_grad)
        raw = raw * np.sign(signed_areas_2d(T))
        return raw, T, g2
    return signed_areas_2d(T), T, None


def _source_flux(state, dist, scene, width, height, check=True):
    raw, T, _ = _source_raw(state, dist, scene, width, height, False)
    if check:
        bad = np.nonzero(raw <= 0)[0] if not isinstance(dist, PixelMap) else \
            np.nonzero(signed_areas_2d(T) <= 0)[0]
        if len(bad):
            raise InvalidHeightField(f"face {int(bad[0])} has non-positive projected area")
    total = raw.sum()
    if not total > 0:
        raise ZeroTotalFlux("source delivers no flux through the mesh")
    return raw / total


def _source_flux_vjp(state, dist, scene, width, height, phi, g_phi):
    """Returns (g_V, g_front) contributions from dL/dphi."""
    raw, T, g2 = _source_raw(state, dist, scene, width, height, True)
    total = raw.sum()
    g_raw = (g_phi - np.dot(g_phi, phi)) / total
    nv = len(state.V)
    if scene.is_point:
        q = np.asarray(scene.source.position, dtype=float)
        gT = solid_angles_vjp(T, q, g_raw)
        return None, _scatter(state.F, gT, nv)
    a = np.asarray(scene.source.direction, dtype=float)
    if isinstance(dist, PixelMap):
        g2d = g2 * g_raw[:, None, None]
    else:
        g2d = _area_grad(T) * g_raw[:, None, None]
    g3 = np.empty(g2d.shape[:2] + (3,))
    g3[..., :2] = g2d
    g3[..., 2] = -(g2d @ (a[:2] / a[2]))
    return _scatter(state.F, g3, nv), None


def source_flux(mesh: HeightFieldMesh, dist: SourceDistribution = Uniform(),
                scene: OpticalScene = None) -> np.ndarray:
    """Normalised per-face source flux (sums to 1)."""
    scene = scene or OpticalScene(image_region=(0, 0, mesh.width, mesh.height))
    state = surface_state(mesh, scene)
    return _source_flux(state, dist, scene, mesh.width, mesh.height)


# --------------------------------------------------------------------------
# face normals and projection
# --------------------------------------------------------------------------

def _normals(P):
    E1 = P[:, 1] - P[:, 0]
    E2 = P[:, 2] - P[:, 0]
    C = np.cross(E1, E2)
    nc = np.linalg.norm(C, axis=1, keepdims=True)
    return C / nc, E1, E2, nc


def normals_vjp(P, g_n):
    """Pull back dL/dn for unit face normals to (n, 3, 3) corner gradients."""
    N, E1, E2, nc = _normals(P)
    gC = (g_n - np.sum(g_n * N, axis=1, keepdims=True) * N) / nc
    gE1 = np.cross(E2, gC)
    gE2 = np.cross(gC, E1)
    out = np.empty_like(P)
    out[:, 0] = -gE1 - gE2
    out[:, 1] = gE1
    out[:, 2] = gE2
    return out


def _project(state: SurfaceState, scene: OpticalScene, check=True):
    P = state.V[state.F]
    N, *_ = _normals(P)
    A = _incident(state, scene)
    Nb = np.broadcast_to(N[:, None, :], A.shape)
    if scene.mode == REFLECT:
        B = A - 2.0 * np.sum(A * Nb, axis=-1, keepdims=True) * Nb
        margin = None
    else:
        B, margin = refract_raw(A, Nb, scene.eta)
        if check and np.any(margin <= 0):
            f = int(np.nonzero((margin <= 0).any(axis=1))[0][0])
            raise TotalInternalReflection(face=f)
    dz = scene.z_focal - P[..., 2]
    bz = B[..., 2]
    if check:
        bad = (np.abs(bz) < 1e-12) | (dz * bz <= 0)
        if np.any(bad):
            raise ProjectionFailure(int(np.nonzero(bad.any(axis=1))[0][0]))
    t = dz / bz
    U = P[..., :2] + B[..., :2] * t[..., None]
    return U, dict(P=P, N=N, A=A, B=B, t=t)


def _project_vjp(state, scene, cache, g_U):
    """dL/dU (n,3,2) -> (g_V (nv,3), g_incident (nv,3) or None)."""
    P, N, A, B, t = cache["P"], cache["N"], cache["A"], cache["B"], cache["t"]
    gb_xy = np.sum(g_U * B[..., :2], axis=-1)
    bz = B[..., 2]
    gP = np.empty_like(P)
    gP[..., :2] = g_U
    gP[..., 2] = -gb_xy / bz
    gB = np.empty_like(B)
    gB[..., :2] = g_U * t[..., None]
    gB[..., 2] = -t * gb_xy / bz
    Nb = np.broadcast_to(N[:, None, :], A.shape)
    if scene.mode == REFLECT:
        gA, gN = reflect_vjp(A, Nb, gB)
    else:
        gA, gN = refract_vjp(A, Nb, scene.eta, gB)
    gP = gP + normals_vjp(P, gN.sum(axis=1))
    nv = len(state.V)
    g_V = _scatter(state.F, gP, nv)
    g_inc = _scatter(state.F, gA, nv) if state.incident is not None else None
    return g_V, g_inc


def project_faces(mesh: HeightFieldMesh, scene: OpticalScene) -> np.ndarray:
    """Image triangles (n_faces, 3, 2) on the receptive plane."""
    U, _ = _project(surface_state(mesh, scene), scene)
    return U


# --------------------------------------------------------------------------
# rasterisation
# --------------------------------------------------------------------------

def pixel_grid(region, resolution):
    x0, y0, x1, y1 = region
    nw, nh = resolution
    return float(x0), float(y0), (x1 - x0) / nw, (y1 - y0) / nh, int(nw), int(nh)


DEGENERATE_FRACTION = 1e-14


def rasterize_flux(triangles, face_flux, width: int, height: int, image_region) -> FluxImage:
    grid = pixel_grid(image_region, (width, height))
    tol = DEGENERATE_FRACTION * grid[2] * grid[3]
    img, spilled, _ = K.raster_forward(np.ascontiguousarray(triangles, dtype=float),
                                       np.ascontiguousarray(face_flux, dtype=float),
                                       *grid, tol)
    return FluxImage(img, float(spilled))


# --------------------------------------------------------------------------
# full render and adjoint
# --------------------------------------------------------------------------

@dataclass
class RenderResult:
    flux_image: FluxImage
    image_triangles: np.ndarray
    face_flux: np.ndarray
    face_centroids: np.ndarray
    resolution: Tuple[int, int] = (0, 0)
    state: Optional[SurfaceState] = field(default=None, repr=False)
    proj_cache: Optional[dict] = field(default=None, repr=False)
    dist: object = field(default=None, repr=False)
    domain: Tuple[float, float] = (1.0, 1.0)


def render_state(state: SurfaceState, dist, scene: OpticalScene, resolution,
                 domain, check=True) -> RenderResult:
    W, H = domain
    phi = _source_flux(state, dist, scene, W, H, check)
    U, pc = _project(state, scene, check)
    img = rasterize_flux(U, phi, resolution[0], resolution[1], scene.image_region)
    return RenderResult(img, U, phi, U.mean(axis=1), tuple(resolution), state, pc, dist, (W, H))


def render(mesh: HeightFieldMesh, dist: SourceDistribution, scene: OpticalScene,
           gamma: GammaModel = None, resolution=(32, 32), G_tilde: float = None) -> RenderResult:
    """Render the mesh; ``resolution`` is (columns, rows) of the image region."""
    state = surface_state(mesh, scene)
    res = render_state(state, dist, scene, resolution, (mesh.width, mesh.height))
    if G_tilde is not None:
        res.flux_image.G_tilde = G_tilde
    return res


def backprop(result: RenderResult, scene: OpticalScene, g_tris=None, g_phi=None,
             g_V=None, g_inc=None, g_front=None) -> np.ndarray:
    """Surface-variable gradient from gradients on image triangles and face fluxes."""
    st = result.state
    nv = len(st.V)
    gV = np.zeros((nv, 3)) if g_V is None else g_V.copy()
    gI = None
    if st.incident is not None:
        gI = np.zeros((nv, 3)) if g_inc is None else g_inc.copy()
    gF = None if g_front is None else g_front.copy()
    if g_tris is not None:
        a, b = _project_vjp(st, scene, result.proj_cache, g_tris)
        gV += a
        if gI is not None:
            gI += b
    if g_phi is not None:
        W, H = result.domain
        a, b = _source_flux_vjp(st, result.dist, scene, W, H, result.face_flux, g_phi)
        if a is not None:
            gV += a
        if b is not None:
            gF = b if gF is None else gF + b
    return surface_vjp(st, gV, gI, gF)


def raster_adjoint(result: RenderResult, scene: OpticalScene, dL_dflux, dL_dspilled=0.0):
    """(dL/dtris, dL/dphi) for L = <dL_dflux, flux> + dL_dspilled * spilled."""
    grid = pixel_grid(scene.image_region, result.resolution)
    tol = DEGENERATE_FRACTION * grid[2] * grid[3]
    return K.raster_vjp(result.image_triangles, result.face_flux,
                        np.ascontiguousarray(dL_dflux, dtype=float), float(dL_dspilled),
                        *grid, tol)


def render_adjoint(result: RenderResult, dLoss_dPixelFlux, dLoss_dSpilled,
                   mesh: HeightFieldMesh, scene: OpticalScene) -> np.ndarray:
    """Gradient of a linear pixel-flux functional w.r.t. the surface variables.

    Returns an array shaped like the variables (vertices, or front params for
    point light).
    """
    g_tris, g_phi = raster_adjoint(result, scene, dLoss_dPixelFlux, dLoss_dSpilled)
    return backprop(result, scene, g_tris, g_phi)
