"""Coarse-to-fine design loop.

Each level alternates a correspondence phase (render, solve OT for the face
centroids, pull each image triangle toward its cell's flux-weighted
centroid) with a rendering-guided phase, then subdivides the mesh, refines
the target and lowers the Welsch scale.
"""
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .energy import (EnergyConfig, Objective, ObjectiveContext, edge_residuals, face_frames,
                     inherit_weingarten)
from .errors import CausticError, ConfigurationError
from .mesh import HeightFieldMesh, build_initial_mesh, internal_edges, subdivide
from .optics import REFRACT, OpticalScene, ParallelLight, PlaneFront, PointLight
from .ot import SiteSet, TargetDensity, cell_centroids, solve_ot
from .render import (FluxImage, GammaModel, Uniform, render, surface_state,
                     target_flux_from_image)
from .solver import SolverOptions, minimize

log = logging.getLogger(__name__)

NU_FLOOR = 1e-6


class PipelineAbort(CausticError):
    def __init__(self, message, checkpoint=None):
        super().__init__(message if checkpoint is None else f"{message} (checkpoint: {checkpoint})")
        self.checkpoint = checkpoint


@dataclass
class PipelineConfig:
    coarsest: int = 32
    levels: Optional[int] = None  # None: reach the target's resolution
    alternations: int = 6
    use_ot: bool = True
    mesh_ratio: float = 1.25
    energy: EnergyConfig = field(default_factory=EnergyConfig)
    render_opts: SolverOptions = field(default_factory=lambda: SolverOptions(max_iters=500))
    update_opts: SolverOptions = field(default_factory=lambda: SolverOptions(max_iters=200))
    ot_opts: SolverOptions = field(default_factory=lambda: SolverOptions(max_iters=200))
    ot_tol: float = 1e-7
    # scene
    # lengths default to final-resolution pixel units: the lens spans the
    # target's pixel width W. Parallel light images onto the lens footprint
    # 3 W away; a point light 6 W below the lens images onto a centred
    # region twice the lens size 6 W away.
    lens_size: Optional[float] = None
    focal_length: Optional[float] = None
    image_scale: Optional[float] = None  # image region side / lens side
    eta: float = 1.49
    mode: str = REFRACT
    light: str = "parallel"
    light_direction: tuple = (0.0, 0.0, 1.0)
    light_distance: Optional[float] = None  # point light below the lens centre
    thickness: Optional[float] = None  # back-surface z for point light (front plane at z = 0)
    gamma: GammaModel = field(default_factory=GammaModel)
    seed: int = 0
    check_subdivision: bool = True

    def __post_init__(self):
        if self.coarsest < 8:
            raise ConfigurationError("coarsest resolution must be at least 8")
        if self.levels is not None and self.levels < 1:
            raise ConfigurationError("levels must be at least 1")
        if self.alternations < 1:
            raise ConfigurationError("alternations must be at least 1")
        for k in ("lens_size", "focal_length", "image_scale", "light_distance", "thickness"):
            v = getattr(self, k)
            if v is not None and not v > 0:
                raise ConfigurationError(f"{k} must be positive")
        if not self.mesh_ratio > 0:
            raise ConfigurationError("mesh_ratio must be positive")
        if self.light not in ("parallel", "point"):
            raise ConfigurationError(f"unknown light type {self.light!r}")


# --------------------------------------------------------------------------
# building blocks
# --------------------------------------------------------------------------

def downsample_target(target_flux: FluxImage, factor: int) -> FluxImage:
    """Box filter in the flux domain; pads with zero flux if needed."""
    if factor < 1 or factor & (factor - 1):
        raise ConfigurationError("factor must be a power of two")
    f = target_flux.flux
    nh, nw = f.shape
    ph, pw = (-nh) % factor, (-nw) % factor
    if ph or pw:
        log.warning("padding %dx%d target by (%d, %d) zero-flux pixels", nw, nh, pw, ph)
        f = np.pad(f, ((0, ph), (0, pw)))
    h, w = f.shape
    coarse = f.reshape(h // factor, factor, w // factor, factor).sum(axis=(1, 3))
    G = None if target_flux.G_tilde is None else target_flux.G_tilde / factor ** 2
    return FluxImage(coarse, target_flux.spilled, G)


def nu_schedule(level: int, de: float, energy: EnergyConfig, k: int) -> float:
    """Welsch scale at a level: alpha_max * ratio**level * D_e, floored."""
    if k <= 1:
        alpha = energy.alpha_max
    else:
        ratio = (energy.alpha_min / energy.alpha_max) ** (1.0 / (k - 1))
        alpha = energy.alpha_min if level == k - 1 else energy.alpha_max * ratio ** level
    return max(alpha * de, NU_FLOOR)


def edge_scale(mesh: HeightFieldMesh, Wv) -> float:
    """Median of sqrt(h) over internal edges."""
    fr = face_frames(mesh.vertices[mesh.faces])
    h, _ = edge_residuals(fr, Wv, internal_edges(mesh.nx, mesh.ny))
    return float(np.median(np.sqrt(np.maximum(h, 0.0))))


def mae(a, b, R: float = 1.0) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ConfigurationError(f"image shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)) / R)


def make_scene(cfg: PipelineConfig, W: float, H: float) -> OpticalScene:
    point = cfg.light == "point"
    if point:
        d = cfg.light_distance if cfg.light_distance is not None else 6.0 * W
        src = PointLight((W / 2, H / 2, -d))
    else:
        src = ParallelLight(cfg.light_direction)
    zf = cfg.focal_length if cfg.focal_length is not None else (6.0 if point else 3.0) * W
    s = cfg.image_scale if cfg.image_scale is not None else (2.0 if point else 1.0)
    region = (W / 2 * (1 - s), H / 2 * (1 - s), W / 2 * (1 + s), H / 2 * (1 + s))
    return OpticalScene(source=src, front=PlaneFront(0.0), eta=cfg.eta,
                        z_focal=zf, mode=cfg.mode, image_region=region)


def lens_thickness(cfg: PipelineConfig, W: float) -> float:
    return cfg.thickness if cfg.thickness is not None else 0.1 * W


def initial_mesh(cfg: PipelineConfig, scene: OpticalScene, W, H, cols, rows) -> HeightFieldMesh:
    nx = max(2, int(round(cfg.mesh_ratio * cols)) + 1)
    ny = max(2, int(round(cfg.mesh_ratio * rows)) + 1)
    if scene.is_point:
        m = build_initial_mesh(W, H, nx, ny, 0.0)
        fp = m.vertices.copy()
        fp[:, 2] = lens_thickness(cfg, W)
        m.front_params = fp
        m.vertices = surface_state(m, scene).V.copy()
        return m
    return build_initial_mesh(W, H, nx, ny, 0.0)


def sync_vertices(mesh: HeightFieldMesh, scene: OpticalScene) -> HeightFieldMesh:
    if scene.is_point:
        mesh.vertices = surface_state(mesh, scene, check=False).V.copy()
    return mesh


def rendered_pixels(mesh, scene, dist, gamma, res, G):
    r = render(mesh, dist, scene, gamma, res)
    return np.clip(gamma.inverse(G * r.flux_image.flux), 0.0, gamma.gmax), r


# --------------------------------------------------------------------------
# checkpoints and metrics
# --------------------------------------------------------------------------

METRIC_FIELDS = ["stage", "level", "alternation", "phase", "resolution", "mae", "spilled",
                 "iterations", "status", "nu", "img", "grad", "bdr", "smooth", "face",
                 "edge", "lap", "barr", "align", "flux", "ot_residual"]


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics(path, records):
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(METRIC_FIELDS) + "\n")
        for r in records:
            fh.write(",".join(_fmt(r.get(k, "")) for k in METRIC_FIELDS) + "\n")


def read_metrics(path):
    out = []
    with open(path) as fh:
        head = fh.readline().strip().split(",")
        for line in fh:
            vals = line.rstrip("\n").split(",")
            rec = {}
            for k, v in zip(head, vals):
                if v == "":
                    continue
                try:
                    rec[k] = int(v)
                except ValueError:
                    try:
                        rec[k] = float(v)
                    except ValueError:
                        rec[k] = v
            out.append(rec)
    return out


def save_checkpoint(run_dir, mesh: HeightFieldMesh, Wv, nu, position, records):
    os.makedirs(run_dir, exist_ok=True)
    path = os.path.join(run_dir, "checkpoint.npz")
    tmp = path + ".tmp.npz"
    arrays = dict(vertices=mesh.vertices, weingarten=Wv, boundary_mask=mesh.boundary_mask)
    if mesh.front_params is not None:
        arrays["front_params"] = mesh.front_params
    np.savez(tmp, **arrays)
    os.replace(tmp, path)
    meta = dict(nx=mesh.nx, ny=mesh.ny, width=mesh.width, height=mesh.height, nu=nu,
                position=position)
    with open(os.path.join(run_dir, "checkpoint.json"), "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
    write_metrics(os.path.join(run_dir, "metrics.csv"), records)
    return path


def load_checkpoint(run_dir):
    with open(os.path.join(run_dir, "checkpoint.json")) as fh:
        meta = json.load(fh)
    data = np.load(os.path.join(run_dir, "checkpoint.npz"))
    fp = data["front_params"] if "front_params" in data.files else None
    mesh = HeightFieldMesh(meta["nx"], meta["ny"], data["vertices"], meta["width"],
                           meta["height"], data["boundary_mask"], fp)
    records = read_metrics(os.path.join(run_dir, "metrics.csv"))
    return mesh, data["weingarten"], meta["nu"], meta["position"], records


# --------------------------------------------------------------------------
# the loop
# --------------------------------------------------------------------------

@dataclass
class RunResult:
    mesh: HeightFieldMesh
    weingarten: np.ndarray
    metrics: List[dict]
    scene: OpticalScene
    final_mae: float
    target_pixels: np.ndarray
    rendered_pixels: np.ndarray


def ladder(cfg: PipelineConfig, cols: int, rows: int):
    """Downsampling factors from coarsest to finest."""
    if cfg.levels is not None:
        k = cfg.levels
    else:
        k = max(1, int(round(math.log2(max(cols, rows) / cfg.coarsest))) + 1)
    return [2 ** (k - 1 - l) for l in range(k)]


def _phase_record(stage, level, alt, phase, res, mae_v, spilled, sres, nu, terms):
    rec = dict(stage=stage, level=level, alternation=alt, phase=phase,
               resolution=f"{res[0]}x{res[1]}", mae=mae_v, spilled=spilled,
               iterations=sres.iterations if sres is not None else 0,
               status=sres.status if sres is not None else "", nu=nu)
    for k, v in terms.items():
        rec[k] = float(v)
    return rec


def run(config: PipelineConfig, target, run_dir: Optional[str] = None,
        resume: bool = False, timings: Optional[list] = None) -> RunResult:
    """Design a surface whose caustic reproduces ``target`` (gray values in [0, gmax])."""
    cfg = config
    target = np.asarray(target, dtype=float)
    rows, cols = target.shape
    W = cfg.lens_size if cfg.lens_size is not None else float(cols)
    H = W * rows / cols
    scene = make_scene(cfg, W, H)
    dist = Uniform()
    full = target_flux_from_image(target, cfg.gamma)
    factors = ladder(cfg, cols, rows)
    k = len(factors)
    for f in factors:
        if cols % f or rows % f:
            raise ConfigurationError(f"target size {cols}x{rows} not divisible by {f}")

    records: List[dict] = []
    start = (0, 0, 0)  # level, alternation, phase index into (ot, render)
    mesh = None
    Wv = None
    nu = None
    if resume and run_dir and os.path.exists(os.path.join(run_dir, "checkpoint.json")):
        mesh, Wv, nu, pos, records = load_checkpoint(run_dir)
        lvl, alt, ph = pos
        ph += 1
        if ph > 1:
            ph, alt = 0, alt + 1
        if alt >= cfg.alternations:
            alt, lvl = 0, lvl + 1
        start = (lvl, alt, ph)
        log.info("resuming at level %d alternation %d phase %d", *start)

    def level_target(l):
        coarse = downsample_target(full, factors[l])
        G = coarse.G_tilde
        return coarse, G, cfg.gamma.inverse(G * coarse.flux)

    for level in range(k):
        if level < start[0]:
            continue
        coarse, G, tpix = level_target(level)
        res = (coarse.width, coarse.height)
        density = TargetDensity(coarse.flux, scene.image_region)
        fresh_level = not (level == start[0] and (start[1], start[2]) != (0, 0))
        if fresh_level:
            if mesh is None:
                mesh = initial_mesh(cfg, scene, W, H, res[0], res[1])
                Wv = np.zeros((mesh.n_faces, 3))
            elif level > 0:
                child = sync_vertices(subdivide(mesh), scene)
                if cfg.check_subdivision and not scene.is_point:
                    a = render(mesh, dist, scene, cfg.gamma, res).flux_image.flux
                    b = render(child, dist, scene, cfg.gamma, res).flux_image.flux
                    diff = float(np.max(np.abs(a - b)))
                    if diff > 1e-12:
                        raise PipelineAbort(f"subdivision changed the render by {diff:.3e}")
                Wv = inherit_weingarten(mesh, child, Wv)
                mesh = child
            de = edge_scale(mesh, Wv)
            nu = nu_schedule(level, de, cfg.energy, k)
            pending_nu = de <= NU_FLOOR
        else:
            pending_nu = False
        for alt in range(cfg.alternations):
            for ph, phase in enumerate(("ot", "render")):
                if (level, alt, ph) < start:
                    continue
                if phase == "ot" and not cfg.use_ot:
                    continue
                t0 = time.perf_counter()
                ecfg = replace(cfg.energy, nu=nu)
                if pending_nu:
                    # no residual scale yet (flat mesh): leave the edge term out
                    # for this phase and measure the scale on its result
                    ecfg = replace(ecfg, tau1=0.0)
                try:
                    if phase == "ot":
                        mesh, Wv, sres, terms = _correspondence_phase(
                            mesh, Wv, scene, dist, ecfg, cfg, density, res)
                    else:
                        mesh, Wv, sres, terms = _render_phase(
                            mesh, Wv, scene, dist, ecfg, cfg, res, tpix, G)
                    if pending_nu:
                        de = edge_scale(mesh, Wv)
                        nu = nu_schedule(level, de, cfg.energy, k)
                        pending_nu = de <= NU_FLOOR
                    pix, r = rendered_pixels(mesh, scene, dist, cfg.gamma, res, G)
                except CausticError as exc:
                    ck = os.path.join(run_dir, "checkpoint.npz") if run_dir else None
                    raise PipelineAbort(f"{phase} phase failed at level {level}: {exc}", ck) from exc
                rec = _phase_record(f"L{level}A{alt}-{phase}", level, alt, phase, res,
                                    mae(pix, tpix, cfg.gamma.gmax), r.flux_image.spilled,
                                    sres, nu, terms)
                records.append(rec)
                if timings is not None:
                    timings.append((rec["stage"], time.perf_counter() - t0))
                log.info("%s mae=%.5g", rec["stage"], rec["mae"])
                if run_dir:
                    save_checkpoint(run_dir, mesh, Wv, nu, [level, alt, ph], records)
    fcoarse, G, tpix = level_target(k - 1)
    pix, _ = rendered_pixels(mesh, scene, dist, cfg.gamma, (fcoarse.width, fcoarse.height), G)
    final = mae(pix, tpix, cfg.gamma.gmax)
    if run_dir:
        write_metrics(os.path.join(run_dir, "metrics.csv"), records)
    return RunResult(mesh, Wv, records, scene, final, tpix, pix)


def _solve(ctx, kind, mesh, Wv, opts):
    obj = Objective(ctx, kind)
    surf = mesh.front_params if ctx.scene.is_point else mesh.vertices
    x0 = ctx.pack(surf, Wv)
    sres = minimize(obj, x0, opts)
    S, W2 = ctx.unpack(sres.x)
    out = ctx.mesh_from(S)
    terms = obj.terms(sres.x)
    return out, W2.copy(), sres, terms


def _correspondence_phase(mesh, Wv, scene, dist, ecfg, cfg, density, res):
    r = render(mesh, dist, scene, cfg.gamma, res)
    sites = SiteSet(r.face_centroids, r.face_flux)
    ot = solve_ot(sites, density, scene.image_region, cfg.ot_opts, cfg.ot_tol)
    targets, has_flux = cell_centroids(ot.partition, density, r.face_centroids)
    mask = np.zeros(mesh.n_faces)
    mask[ot.active] = 1.0
    mask *= has_flux
    ctx = ObjectiveContext(mesh, scene, dist, ecfg, cfg.gamma, res,
                           align_target=targets, align_mask=mask, phi_old=r.face_flux.copy())
    mesh2, W2, sres, terms = _solve(ctx, "update", mesh, Wv, cfg.update_opts)
    terms = dict(terms)
    terms["ot_residual"] = ot.residual
    return mesh2, W2, sres, terms


def _render_phase(mesh, Wv, scene, dist, ecfg, cfg, res, tpix, G):
    ctx = ObjectiveContext(mesh, scene, dist, ecfg, cfg.gamma, res,
                           target_pixels=tpix, G_tilde=G)
    return _solve(ctx, "render", mesh, Wv, cfg.render_opts)
