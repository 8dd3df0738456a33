"""Objective terms for the rendering-guided and correspondence-guided problems.

All gradients are analytic. Per-face Weingarten variables ``(a, b, c)`` form
the symmetric matrix ``[[a, c], [c, b]]`` in the face tangent basis
``e1 = unit(v2 - v1)``, ``e2 = n x e1``; they are stored as an
``(n_faces, 3)`` array.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (AssumptionViolation, ConfigurationError, DegenerateEdge,
                     InvalidHeightField, ProjectionFailure, TotalInternalReflection,
                     ZeroTotalFlux)
from .mesh import HeightFieldMesh, internal_edges, parent_faces, umbrella_operator
from .optics import REFRACT, OpticalScene, tir_margin
from .render import (GammaModel, RenderResult, Uniform, _area_grad, _project, _scatter,
                     _source_flux, backprop, raster_adjoint, render_state, signed_areas_2d,
                     surface_state, surface_variables, surface_vjp)


@dataclass
class EnergyConfig:
    lambda1: float = 1e2    # image
    lambda2: float = 1e3    # image gradient
    lambda3: float = 1e-3   # boundary
    lambda4: float = 2e1    # smoothness
    lambda5: float = 1e-8   # barriers
    tau1: float = 3.0       # edge term inside smoothness
    tau2: float = 0.2       # Laplacian term inside smoothness
    gamma1: float = 1e0     # alignment
    gamma2: float = 1e1     # flux preservation
    gamma3: float = 1e-3    # smoothness in the update problem (see README, weights)
    gamma4: float = 1e-14   # barriers in the update problem
    eps1: Optional[float] = None  # absolute thresholds; None -> relative
    eps2: Optional[float] = None
    eps1_rel: float = 0.01
    eps2_rel: float = 0.2
    nu: float = 1.0
    alpha_max: float = 2.0
    alpha_min: float = 0.1
    grad_operator: str = "forward"

    def __post_init__(self):
        for k in ("lambda1", "lambda2", "lambda3", "lambda4", "lambda5", "tau1", "tau2",
                  "gamma1", "gamma2", "gamma3", "gamma4"):
            if getattr(self, k) < 0:
                raise ConfigurationError(f"{k} must be nonnegative")
        if not self.nu > 0:
            raise ConfigurationError("nu must be positive")
        if not 0 < self.eps1_rel < self.eps2_rel:
            raise ConfigurationError("need 0 < eps1_rel < eps2_rel")
        if self.eps1 is not None and self.eps2 is not None and not 0 < self.eps1 < self.eps2:
            raise ConfigurationError("need 0 < eps1 < eps2")
        if self.grad_operator not in ("forward", "central"):
            raise ConfigurationError(f"unknown gradient operator {self.grad_operator!r}")

    def thresholds(self, mesh: HeightFieldMesh):
        mean_area = mesh.domain_area / mesh.n_faces
        e1 = self.eps1 if self.eps1 is not None else self.eps1_rel * mean_area
        e2 = self.eps2 if self.eps2 is not None else self.eps2_rel * mean_area
        return e1, e2


# --------------------------------------------------------------------------
# image terms
# --------------------------------------------------------------------------

def _check_same(a, b):
    if a.shape != b.shape:
        raise ConfigurationError(f"image shapes differ: {a.shape} vs {b.shape}")


def e_img(rendered, target) -> float:
    rendered = np.asarray(rendered, dtype=float)
    target = np.asarray(target, dtype=float)
    _check_same(rendered, target)
    return float(np.sum((rendered - target) ** 2))


def _diff(img, axis, op):
    if op == "forward":
        out = np.zeros_like(img)
        if axis == 1:
            out[:, :-1] = img[:, 1:] - img[:, :-1]
        else:
            out[:-1] = img[1:] - img[:-1]
        return out
    n = img.shape[axis]
    ip = np.minimum(np.arange(n) + 1, n - 1)
    im = np.maximum(np.arange(n) - 1, 0)
    return 0.5 * (np.take(img, ip, axis=axis) - np.take(img, im, axis=axis))


def _diff_T(y, axis, op):
    out = np.zeros_like(y)
    if op == "forward":
        if axis == 1:
            out[:, 1:] += y[:, :-1]
            out[:, :-1] -= y[:, :-1]
        else:
            out[1:] += y[:-1]
            out[:-1] -= y[:-1]
        return out
    n = y.shape[axis]
    ip = np.minimum(np.arange(n) + 1, n - 1)
    im = np.maximum(np.arange(n) - 1, 0)
    yt = np.moveaxis(y, axis, 0)
    ot = np.moveaxis(out, axis, 0)
    np.add.at(ot, ip, 0.5 * yt)
    np.add.at(ot, im, -0.5 * yt)
    return out


def e_grad(rendered, target, operator: str = "forward") -> float:
    rendered = np.asarray(rendered, dtype=float)
    target = np.asarray(target, dtype=float)
    _check_same(rendered, target)
    d = rendered - target
    return float(np.sum(_diff(d, 1, operator) ** 2) + np.sum(_diff(d, 0, operator) ** 2))


def _e_grad_with_grad(d, op):
    gx = _diff(d, 1, op)
    gy = _diff(d, 0, op)
    val = float(np.sum(gx * gx) + np.sum(gy * gy))
    return val, 2.0 * (_diff_T(gx, 1, op) + _diff_T(gy, 0, op))


def _bdr_offsets(U, region):
    x0, y0, x1, y1 = region
    ox = np.where(U[..., 0] < x0, U[..., 0] - x0, np.where(U[..., 0] > x1, U[..., 0] - x1, 0.0))
    oy = np.where(U[..., 1] < y0, U[..., 1] - y0, np.where(U[..., 1] > y1, U[..., 1] - y1, 0.0))
    return np.stack([ox, oy], axis=-1)


def e_bdr(image_triangles, image_region) -> float:
    """Sum of squared distances from image-triangle corners to the region."""
    off = _bdr_offsets(np.asarray(image_triangles, dtype=float), image_region)
    return float(np.sum(off * off))


# --------------------------------------------------------------------------
# barriers
# --------------------------------------------------------------------------

def f_area(a, eps1, eps2):
    a = np.asarray(a, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (eps2 - eps1) / (a - eps1)
        v = np.where(a >= eps2, 0.0, (s - 1.0) ** 2)
    v = np.where(a <= eps1, np.inf, v)
    return v if v.ndim else float(v)


def _f_area_grad(a, eps1, eps2):
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (eps2 - eps1) / (a - eps1)
        g = 2.0 * (s - 1.0) * (-(eps2 - eps1) / (a - eps1) ** 2)
    return np.where((a >= eps2) | (a <= eps1), 0.0, g)


def f_tir(face_normal, a, eta):
    m = tir_margin(np.asarray(a, dtype=float), np.asarray(face_normal, dtype=float), eta)
    with np.errstate(divide="ignore"):
        v = np.where(m > 0, 1.0 / np.where(m > 0, m, 1.0), np.inf)
    return v if v.ndim else float(v)


# --------------------------------------------------------------------------
# smoothness: Weingarten machinery
# --------------------------------------------------------------------------

def face_frames(P):
    """Frames of (n, 3, 3) corner arrays: normal, e1, e2, centroid, 3D area."""
    E1 = P[:, 1] - P[:, 0]
    E2 = P[:, 2] - P[:, 0]
    C = np.cross(E1, E2)
    nc = np.linalg.norm(C, axis=1)
    N = C / nc[:, None]
    l1 = np.linalg.norm(E1, axis=1)
    e1 = E1 / l1[:, None]
    e2 = np.cross(N, e1)
    return dict(N=N, e1=e1, e2=e2, c=P.mean(axis=1), area=0.5 * nc,
                E1=E1, E2=E2, nc=nc, l1=l1)


def face_frames_vjp(fr, gN=None, ge1=None, ge2=None, gc=None, garea=None):
    """Pull frame gradients back to (n, 3, 3) corner gradients."""
    N, e1 = fr["N"], fr["e1"]
    n = len(N)
    z = np.zeros((n, 3))
    gN = z.copy() if gN is None else gN.copy()
    ge1 = z.copy() if ge1 is None else ge1.copy()
    if ge2 is not None:
        gN += np.cross(e1, ge2)
        ge1 += np.cross(ge2, N)
    gC = (gN - np.sum(gN * N, axis=1, keepdims=True) * N) / fr["nc"][:, None]
    if garea is not None:
        gC += 0.5 * garea[:, None] * N
    gE1 = np.cross(fr["E2"], gC)
    gE2 = np.cross(gC, fr["E1"])
    gE1 += (ge1 - np.sum(ge1 * e1, axis=1, keepdims=True) * e1) / fr["l1"][:, None]
    out = np.empty((n, 3, 3))
    out[:, 0] = -gE1 - gE2
    out[:, 1] = gE1
    out[:, 2] = gE2
    if gc is not None:
        out += gc[:, None, :] / 3.0
    return out


def _side(Wv, f, e1, e2, d, nd):
    a, b, c = Wv[f, 0], Wv[f, 1], Wv[f, 2]
    u0 = np.sum(e1[f] * d, axis=1)
    u1 = np.sum(e2[f] * d, axis=1)
    v0 = np.sum(e1[f] * nd, axis=1)
    v1 = np.sum(e2[f] * nd, axis=1)
    r0 = a * u0 + c * u1 - v0
    r1 = c * u0 + b * u1 - v1
    D = u0 * u0 + u1 * u1
    with np.errstate(divide="ignore", invalid="ignore"):
        q = (r0 * r0 + r1 * r1) / D
    return q, (a, b, c, u0, u1, r0, r1, D)


def edge_residuals(fr, Wv, edges, want_grad=False):
    """h(e) for each internal edge; optional closure returning the pullback."""
    i, j = edges[:, 0], edges[:, 1]
    N, e1, e2, c = fr["N"], fr["e1"], fr["e2"], fr["c"]
    d = c[j] - c[i]
    nd = N[j] - N[i]
    di, si = _side(Wv, i, e1, e2, d, nd)
    dj, sj = _side(Wv, j, e1, e2, d, nd)
    if np.any(si[7] <= 1e-300) or np.any(sj[7] <= 1e-300):
        raise DegenerateEdge("face centroids coincide across an edge")
    h = di + dj
    if not want_grad:
        return h, None

    def pull(g_h):
        nf = len(N)
        gW = np.zeros((nf, 3))
        gNf = np.zeros((nf, 3))
        ge1 = np.zeros((nf, 3))
        ge2 = np.zeros((nf, 3))
        gcf = np.zeros((nf, 3))
        g_d = np.zeros_like(d)
        g_nd = np.zeros_like(nd)
        for f, (a, b, cc, u0, u1, r0, r1, D), dl in ((i, si, di), (j, sj, dj)):
            k = 2.0 * g_h / D
            gr0, gr1 = k * r0, k * r1
            gu0 = a * gr0 + cc * gr1 - k * dl * u0
            gu1 = cc * gr0 + b * gr1 - k * dl * u1
            gv0, gv1 = -gr0, -gr1
            np.add.at(gW, f, np.stack([gr0 * u0, gr1 * u1, gr0 * u1 + gr1 * u0], axis=1))
            np.add.at(ge1, f, gu0[:, None] * d + gv0[:, None] * nd)
            np.add.at(ge2, f, gu1[:, None] * d + gv1[:, None] * nd)
            g_d += gu0[:, None] * e1[f] + gu1[:, None] * e2[f]
            g_nd += gv0[:, None] * e1[f] + gv1[:, None] * e2[f]
        np.add.at(gcf, j, g_d)
        np.add.at(gcf, i, -g_d)
        np.add.at(gNf, j, g_nd)
        np.add.at(gNf, i, -g_nd)
        return gW, gNf, ge1, ge2, gcf

    return h, pull


def weingarten_residual(mesh: HeightFieldMesh, vars, edge) -> float:
    """h for the internal edge between the two faces in ``edge``."""
    fr = face_frames(mesh.vertices[mesh.faces])
    h, _ = edge_residuals(fr, np.asarray(vars, dtype=float), np.asarray([edge]))
    return float(h[0])


def welsch(x, nu):
    x = np.asarray(x, dtype=float)
    v = 1.0 - np.exp(-x * x / (2.0 * nu * nu))
    return v if v.ndim else float(v)


def e_face(vars, face_areas) -> float:
    W = np.asarray(vars, dtype=float)
    H = 0.5 * (W[:, 0] + W[:, 1])
    return float(np.sum(H * H * np.asarray(face_areas, dtype=float)))


def e_edge(mesh: HeightFieldMesh, vars, nu) -> float:
    fr = face_frames(mesh.vertices[mesh.faces])
    h, _ = edge_residuals(fr, np.asarray(vars, dtype=float), internal_edges(mesh.nx, mesh.ny))
    return float(np.sum(1.0 - np.exp(-h / (2.0 * nu * nu))))


def e_lap(mesh: HeightFieldMesh) -> float:
    L = umbrella_operator(mesh.nx, mesh.ny)
    U = L @ mesh.vertices[:, :2]
    return float(np.sum(U * U))


def e_smooth(mesh: HeightFieldMesh, vars, config: EnergyConfig) -> float:
    fr = face_frames(mesh.vertices[mesh.faces])
    return (e_face(vars, fr["area"]) + config.tau1 * e_edge(mesh, vars, config.nu)
            + config.tau2 * e_lap(mesh))


def median_edge_scale(mesh: HeightFieldMesh, vars) -> float:
    """Median over internal edges of sqrt(h)."""
    fr = face_frames(mesh.vertices[mesh.faces])
    h, _ = edge_residuals(fr, np.asarray(vars, dtype=float), internal_edges(mesh.nx, mesh.ny))
    return float(np.median(np.sqrt(np.maximum(h, 0.0))))


def fit_weingarten(mesh: HeightFieldMesh) -> np.ndarray:
    """Per-face least-squares fit of M to the normal differences across its edges."""
    fr = face_frames(mesh.vertices[mesh.faces])
    E = internal_edges(mesh.nx, mesh.ny)
    nf = mesh.n_faces
    # normal equations for (a, b, c) of each face: r = M u - v
    A = np.zeros((nf, 3, 3))
    rhs = np.zeros((nf, 3))
    for f, o in ((E[:, 0], E[:, 1]), (E[:, 1], E[:, 0])):
        d = fr["c"][o] - fr["c"][f]
        nd = fr["N"][o] - fr["N"][f]
        u0 = np.sum(fr["e1"][f] * d, axis=1)
        u1 = np.sum(fr["e2"][f] * d, axis=1)
        v0 = np.sum(fr["e1"][f] * nd, axis=1)
        v1 = np.sum(fr["e2"][f] * nd, axis=1)
        D = u0 * u0 + u1 * u1
        # rows of r in terms of (a, b, c): r0 = a u0 + c u1, r1 = b u1 + c u0
        J0 = np.stack([u0, np.zeros_like(u0), u1], axis=1) / np.sqrt(D)[:, None]
        J1 = np.stack([np.zeros_like(u0), u1, u0], axis=1) / np.sqrt(D)[:, None]
        np.add.at(A, f, J0[:, :, None] * J0[:, None, :] + J1[:, :, None] * J1[:, None, :])
        np.add.at(rhs, f, J0 * (v0 / np.sqrt(D))[:, None] + J1 * (v1 / np.sqrt(D))[:, None])
    A += 1e-12 * np.eye(3)
    return np.linalg.solve(A, rhs[..., None])[..., 0]


def inherit_weingarten(parent: HeightFieldMesh, child: HeightFieldMesh, vars) -> np.ndarray:
    """Child faces take their parent's Weingarten map, re-expressed in their own basis."""
    W = np.asarray(vars, dtype=float)
    pf = parent_faces(parent.nx, parent.ny)
    fp = face_frames(parent.vertices[parent.faces])
    fc = face_frames(child.vertices[child.faces])
    Bp = np.stack([fp["e1"], fp["e2"]], axis=1)[pf]  # (nc, 2, 3)
    Bc = np.stack([fc["e1"], fc["e2"]], axis=1)
    R = Bc @ np.swapaxes(Bp, 1, 2)
    Wp = W[pf]
    M = np.empty((len(pf), 2, 2))
    M[:, 0, 0] = Wp[:, 0]
    M[:, 1, 1] = Wp[:, 1]
    M[:, 0, 1] = M[:, 1, 0] = Wp[:, 2]
    Mc = R @ M @ np.swapaxes(R, 1, 2)
    return np.stack([Mc[:, 0, 0], Mc[:, 1, 1], 0.5 * (Mc[:, 0, 1] + Mc[:, 1, 0])], axis=1)


# --------------------------------------------------------------------------
# correspondence terms
# --------------------------------------------------------------------------

def e_align(face_centroids, target_centroids, mask=None) -> float:
    c = np.asarray(face_centroids, dtype=float)
    t = np.asarray(target_centroids, dtype=float)
    if c.shape != t.shape:
        raise ConfigurationError("centroid arrays differ in size")
    d = c - t
    s = np.sum(d * d, axis=1)
    return float(np.sum(s if mask is None else s[mask]))


def e_flux(face_flux, old_flux) -> float:
    a = np.asarray(face_flux, dtype=float)
    b = np.asarray(old_flux, dtype=float)
    if a.shape != b.shape:
        raise ConfigurationError("flux arrays differ in size")
    return float(np.sum((a - b) ** 2))


# --------------------------------------------------------------------------
# assembled objectives
# --------------------------------------------------------------------------

@dataclass
class ObjectiveContext:
    mesh: HeightFieldMesh  # template: grid, domain, mask, and frozen values
    scene: OpticalScene
    dist: object
    config: EnergyConfig
    gamma: GammaModel = field(default_factory=GammaModel)
    resolution: tuple = (32, 32)
    target_pixels: Optional[np.ndarray] = None  # (rows, cols) gray values
    G_tilde: Optional[float] = None
    # correspondence-update data
    align_target: Optional[np.ndarray] = None
    align_mask: Optional[np.ndarray] = None
    phi_old: Optional[np.ndarray] = None

    def __post_init__(self):
        self.free = ~self.mesh.boundary_mask.copy()
        self.base = surface_variables(self.mesh, self.scene).copy()
        self.eps = self.config.thresholds(self.mesh)
        self.edges = internal_edges(self.mesh.nx, self.mesh.ny)
        self.lap = umbrella_operator(self.mesh.nx, self.mesh.ny)

    # variable packing
    def pack(self, S, Wv) -> np.ndarray:
        return np.concatenate([np.asarray(S)[self.free], np.asarray(Wv).ravel()])

    def unpack(self, x):
        nfree = int(self.free.sum())
        S = self.base.copy()
        S[self.free] = x[:nfree]
        return S, x[nfree:].reshape(-1, 3)

    def mesh_from(self, S) -> HeightFieldMesh:
        m = self.mesh.copy()
        if self.scene.is_point:
            m.front_params = S.copy()
            st = surface_state(m, self.scene, check=False)
            m.vertices = st.V.copy()
        else:
            m.vertices = S.copy()
        return m


RENDER_WEIGHTS = ("lambda1", "lambda2", "lambda3", "lambda4", "lambda5")
UPDATE_WEIGHTS = ("gamma1", "gamma2", "gamma3", "gamma4")


def _weights(cfg: EnergyConfig, kind: str) -> dict:
    if kind == "render":
        return dict(img=cfg.lambda1, grad=cfg.lambda2, bdr=cfg.lambda3, smooth=cfg.lambda4,
                    barr=cfg.lambda5, align=0.0, flux=0.0)
    if kind == "update":
        return dict(img=0.0, grad=0.0, bdr=0.0, smooth=cfg.gamma3, barr=cfg.gamma4,
                    align=cfg.gamma1, flux=cfg.gamma2)
    raise ConfigurationError(f"unknown objective kind {kind!r}")


def evaluate(ctx: ObjectiveContext, S, Wv, kind: str = "render", want_grad: bool = True):
    """Weighted objective, gradients (w.r.t. S and Wv) and the raw term values.

    Returns ``(value, gS, gW, terms)``; value is ``inf`` (and gradients None)
    when a barrier is at or past its pole or the optics break down.
    """
    w = _weights(ctx.config, kind)
    cfg = ctx.config
    scene = ctx.scene
    F = ctx.mesh.faces
    terms = {}
    inf = (np.inf, None, None, {"barr": np.inf})
    eps1, eps2 = ctx.eps

    tmp = ctx.mesh.copy()
    if scene.is_point:
        tmp.front_params = S
    else:
        tmp.vertices = S
    try:
        st = surface_state(tmp, scene, check=True)
    except (TotalInternalReflection, AssumptionViolation):
        return inf
    V = st.V
    nv = len(V)
    P = V[F]

    # barriers first: infeasible points never reach the renderer
    T2 = P[..., :2]
    areas = signed_areas_2d(T2)
    fa = f_area(areas, eps1, eps2)
    front_areas = None
    if scene.is_point:
        front_areas = signed_areas_2d(S[F][..., :2])
        fa = np.concatenate([fa, f_area(front_areas, eps1, eps2)])
    if not np.all(np.isfinite(fa)):
        return inf
    fr = face_frames(P)
    if scene.mode == REFRACT:
        A = (st.incident[F] if st.incident is not None
             else np.broadcast_to(np.asarray(scene.source.direction), P.shape))
        cN = np.sum(A * fr["N"][:, None, :], axis=-1)
        m = 1.0 + scene.eta ** 2 * (cN * cN - 1.0)
        if np.any(m <= 0):
            return inf
        ft = (1.0 / m).mean(axis=1)
    else:
        ft = np.zeros(len(F))
    terms["barr"] = float(fa.sum() + ft.sum())

    need_render = w["img"] > 0 or w["grad"] > 0 or w["bdr"] > 0 or w["align"] > 0 or w["flux"] > 0
    res = None
    if need_render:
        try:
            if w["img"] > 0 or w["grad"] > 0:
                res = render_state(st, ctx.dist, scene, ctx.resolution,
                                   (ctx.mesh.width, ctx.mesh.height), check=True)
            else:
                res = _geometry_only(st, ctx, scene)
        except (TotalInternalReflection, ProjectionFailure, InvalidHeightField, ZeroTotalFlux):
            return inf

    value = 0.0
    g_tris = None
    g_phi = None
    g_pix = None
    if w["img"] > 0 or w["grad"] > 0:
        y = ctx.G_tilde * res.flux_image.flux
        g = ctx.gamma.inverse(y)
        d = g - ctx.target_pixels
        terms["img"] = float(np.sum(d * d))
        eg, ggrad = _e_grad_with_grad(d, cfg.grad_operator)
        terms["grad"] = eg
        value += w["img"] * terms["img"] + w["grad"] * terms["grad"]
        if want_grad:
            dg = w["img"] * 2.0 * d + w["grad"] * ggrad
            g_pix = dg * ctx.gamma.inverse_deriv(y) * ctx.G_tilde
    if w["bdr"] > 0:
        off = _bdr_offsets(res.image_triangles, scene.image_region)
        terms["bdr"] = float(np.sum(off * off))
        value += w["bdr"] * terms["bdr"]
        if want_grad:
            g_tris = 2.0 * w["bdr"] * off
    if w["align"] > 0:
        dc = res.face_centroids - ctx.align_target
        if ctx.align_mask is not None:
            dc = dc * ctx.align_mask[:, None]
        terms["align"] = float(np.sum(dc * dc))
        value += w["align"] * terms["align"]
        if want_grad:
            gt = np.repeat((2.0 * w["align"] / 3.0 * dc)[:, None, :], 3, axis=1)
            g_tris = gt if g_tris is None else g_tris + gt
    if w["flux"] > 0:
        dphi = res.face_flux - ctx.phi_old
        terms["flux"] = float(np.sum(dphi * dphi))
        value += w["flux"] * terms["flux"]
        if want_grad:
            g_phi = 2.0 * w["flux"] * dphi

    # smoothness
    nu = cfg.nu
    if w["smooth"] > 0:
        Hm = 0.5 * (Wv[:, 0] + Wv[:, 1])
        ef = float(np.sum(Hm * Hm * fr["area"]))
        try:
            h, pull = edge_residuals(fr, Wv, ctx.edges, want_grad)
        except DegenerateEdge:
            return inf
        ex = np.exp(-h / (2.0 * nu * nu))
        ee = float(np.sum(1.0 - ex))
        Ulap = ctx.lap @ V[:, :2]
        el = float(np.sum(Ulap * Ulap))
        terms.update(face=ef, edge=ee, lap=el)
        terms["smooth"] = ef + cfg.tau1 * ee + cfg.tau2 * el
        value += w["smooth"] * terms["smooth"]
    value += w["barr"] * terms["barr"]

    if not want_grad:
        return value, None, None, terms

    gV = np.zeros((nv, 3))
    gI = np.zeros((nv, 3)) if st.incident is not None else None
    g_front = None
    gW = np.zeros_like(Wv)
    gcorner = np.zeros_like(P)

    # barrier gradients
    ga = w["barr"] * _f_area_grad(areas, eps1, eps2)
    gcorner[..., :2] += _area_grad(T2) * ga[:, None, None]
    if front_areas is not None:
        gfa = w["barr"] * _f_area_grad(front_areas, eps1, eps2)
        gf2 = _area_grad(S[F][..., :2]) * gfa[:, None, None]
        g_front = np.zeros((nv, 3))
        g_front[:, :2] = _scatter(F, gf2, nv)
    gN = np.zeros((len(F), 3))
    if scene.mode == REFRACT and w["barr"] > 0:
        dfdc = w["barr"] * (-2.0 * scene.eta ** 2 * cN / (m * m)) / 3.0
        gN += np.sum(dfdc[..., None] * A, axis=1)
        if gI is not None:
            gI += _scatter(F, dfdc[..., None] * fr["N"][:, None, :], nv)

    garea = None
    ge1 = ge2 = gc = None
    if w["smooth"] > 0:
        ws = w["smooth"]
        gW[:, 0] += ws * Hm * fr["area"]
        gW[:, 1] += ws * Hm * fr["area"]
        garea = ws * Hm * Hm
        g_h = ws * cfg.tau1 * ex / (2.0 * nu * nu)
        a_, b_, c_, d_, e_ = pull(g_h)
        gW += a_
        gN += b_
        ge1, ge2, gc = c_, d_, e_
        gV[:, :2] += ws * cfg.tau2 * 2.0 * (ctx.lap.T @ Ulap)
    gcorner += face_frames_vjp(fr, gN, ge1, ge2, gc, garea)
    gV += _scatter(F, gcorner, nv)

    if res is not None and (g_pix is not None or g_tris is not None or g_phi is not None):
        if g_pix is not None:
            gt2, gp2 = raster_adjoint(res, scene, g_pix, 0.0)
            g_tris = gt2 if g_tris is None else g_tris + gt2
            g_phi = gp2 if g_phi is None else g_phi + gp2
        gS = backprop(res, scene, g_tris, g_phi, gV, gI, g_front)
    else:
        gS = surface_vjp(st, gV, gI, g_front)
    gS = np.where(ctx.free, gS, 0.0)
    return value, gS, gW, terms


def _geometry_only(st, ctx, scene) -> RenderResult:
    W, H = ctx.mesh.width, ctx.mesh.height
    phi = _source_flux(st, ctx.dist, scene, W, H, True)
    U, pc = _project(st, scene, True)
    return RenderResult(None, U, phi, U.mean(axis=1), tuple(ctx.resolution), st, pc,
                        ctx.dist, (W, H))


class Objective:
    """Callable ``x -> (value, gradient)`` over the packed free variables."""

    def __init__(self, ctx: ObjectiveContext, kind: str = "render"):
        self.ctx = ctx
        self.kind = kind
        self.n_evals = 0

    def __call__(self, x):
        self.n_evals += 1
        S, Wv = self.ctx.unpack(x)
        val, gS, gW, _ = evaluate(self.ctx, S, Wv, self.kind, True)
        if not np.isfinite(val):
            return np.inf, None
        return val, np.concatenate([gS[self.ctx.free], gW.ravel()])

    def terms(self, x) -> dict:
        S, Wv = self.ctx.unpack(x)
        return evaluate(self.ctx, S, Wv, self.kind, False)[3]


def total_objective(vars, scene, target, config, **kw):
    """Rendering-guided objective. ``vars`` is ``(mesh, weingarten)``; ``target``
    is ``(pixels, G_tilde)``. Returns ``(value, (grad_surface, grad_weingarten))``."""
    mesh, Wv = vars
    pixels, G = target
    ctx = ObjectiveContext(mesh, scene, kw.pop("dist", None), config, target_pixels=pixels,
                           G_tilde=G, resolution=(pixels.shape[1], pixels.shape[0]), **kw)
    if ctx.dist is None:
        ctx.dist = Uniform()
    val, gS, gW, _ = evaluate(ctx, surface_variables(mesh, scene), np.asarray(Wv, float), "render")
    return val, (gS, gW)


def update_objective(vars, scene, target_centroids, phi_old, config, **kw):
    """Correspondence-guided objective; returns ``(value, (grad_surface, grad_weingarten))``."""
    mesh, Wv = vars
    if len(target_centroids) != mesh.n_faces or len(phi_old) != mesh.n_faces:
        raise ConfigurationError("correspondences do not match the face count")
    ctx = ObjectiveContext(mesh, scene, kw.pop("dist", None), config,
                           align_target=np.asarray(target_centroids, float),
                           phi_old=np.asarray(phi_old, float), **kw)
    if ctx.dist is None:
        ctx.dist = Uniform()
    val, gS, gW, _ = evaluate(ctx, surface_variables(mesh, scene), np.asarray(Wv, float), "update")
    return val, (gS, gW)
