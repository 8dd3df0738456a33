"""Command-line entry point: ``causticlens <command> ...``.

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
Any config key can be overridden with ``--section.key value`` (or ``--key
value`` when the key name is unique across sections).
"""
import argparse
import logging
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import config as config_mod
from . import io
from .errors import CausticError, ConfigurationError
from .mc import mc_reference_render
from .mesh import HeightFieldMesh
from .ot import SiteSet, TargetDensity, solve_ot
from .pipeline import (PipelineAbort, load_checkpoint, make_scene, mae, run,
                       write_metrics)
from .render import GammaModel, Uniform, render, target_flux_from_image

log = logging.getLogger("causticlens")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigurationError(message)


def _overrides(extra):
    """Turn leftover ``--key value`` tokens into config overrides."""
    out = []
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise ConfigurationError(f"unexpected argument {tok!r}")
        if "=" in tok:
            key, val = tok[2:].split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigurationError(f"option {tok} needs a value")
            key, val = tok[2:], extra[i + 1]
            i += 2
        out.append(config_mod.parse_override(key.replace("-", "_"), val))
    return out


def _resolution(s):
    parts = s.lower().split("x")
    try:
        vals = [int(p) for p in parts]
    except ValueError:
        raise ConfigurationError(f"bad resolution {s!r}, expected N or WxH") from None
    if len(vals) == 1:
        vals = vals * 2
    if len(vals) != 2 or min(vals) < 1:
        raise ConfigurationError(f"bad resolution {s!r}, expected N or WxH")
    return tuple(vals)


def load_mesh(path) -> HeightFieldMesh:
    """A lens from an OBJ file, a checkpoint file or a run directory."""
    if os.path.isdir(path):
        ck = os.path.join(path, "checkpoint.json")
        if os.path.exists(ck):
            return load_checkpoint(path)[0]
        obj = os.path.join(path, "lens.obj")
        if os.path.exists(obj):
            return io.read_obj(obj)
        raise ConfigurationError(f"{path}: no checkpoint or lens.obj inside")
    if not os.path.exists(path):
        raise ConfigurationError(f"mesh not found: {path}")
    if path.endswith(".npz") or path.endswith(".json"):
        return load_checkpoint(os.path.dirname(os.path.abspath(path)))[0]
    return io.read_obj(path)


def _display(flux, G=None):
    """Gray values for a flux image: ``G`` scales flux before inverse gamma.

    Without ``G`` the mean pixel flux maps to white, so a flat lens renders
    a uniform 1.
    """
    G = flux.size if G is None else G
    return np.clip(GammaModel().inverse(G * flux), 0.0, 1.0)


def error_map(a, b, R: float = 1.0) -> np.ndarray:
    """Per-pixel error ``|a - b| / R`` as a gray image."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ConfigurationError(f"image shapes differ: {a.shape} vs {b.shape}")
    return np.abs(a - b) / R


def z_scores(det_flux, mc_flux, n_rays):
    """Pixelwise (det - mc) / sigma with a binomial sigma per pixel."""
    p = np.clip(det_flux, 0.0, 1.0)
    sigma = np.sqrt(np.maximum(p * (1 - p), 1.0 / n_rays) / n_rays)
    return (det_flux - mc_flux) / sigma


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_design(args, extra) -> int:
    rc = config_mod.load(args.config, _overrides(extra))
    if rc.target is None:
        raise ConfigurationError("no target image given ([run] target)")
    if not os.path.exists(rc.target):
        raise ConfigurationError(f"target image not found: {rc.target}")
    out = args.output or rc.output or os.path.splitext(args.config)[0] + "_run"
    target = io.read_image(rc.target)
    os.makedirs(out, exist_ok=True)
    t0 = time.perf_counter()
    try:
        res = run(rc.pipeline, target, run_dir=out, resume=args.resume)
    except PipelineAbort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    io.write_obj(os.path.join(out, "lens.obj"), res.mesh, thickness=rc.obj_thickness)
    io.write_png(os.path.join(out, "render.png"), res.rendered_pixels)
    io.write_pgm(os.path.join(out, "render.pgm"), res.rendered_pixels, bits=16)
    io.write_png(os.path.join(out, "target.png"), res.target_pixels)
    io.write_png(os.path.join(out, "error_map.png"), error_map(res.rendered_pixels, res.target_pixels))
    write_metrics(os.path.join(out, "metrics.csv"), res.metrics)
    if rc.flux_binary or rc.svg:
        r = render(res.mesh, Uniform(), res.scene, rc.pipeline.gamma, res.target_pixels.shape[::-1])
        if rc.flux_binary:
            io.write_flux(os.path.join(out, "flux.bin"), r.flux_image.flux)
        if rc.svg:
            _ot_svg(r, target, res.scene, rc.pipeline.gamma, os.path.join(out, "partition.svg"))
    print(f"final MAE {res.final_mae:.6g} in {time.perf_counter() - t0:.1f} s; results in {out}")
    return EXIT_OK


def cmd_resume(args, extra) -> int:
    args.resume = True
    return cmd_design(args, extra)


def _scene_for(mesh, args, extra):
    rc = config_mod.load(getattr(args, "config", None), _overrides(extra))
    cfg = rc.pipeline
    if mesh.front_params is not None:
        cfg = replace(cfg, light="point")
    return make_scene(cfg, mesh.width, mesh.height), rc


def cmd_render(args, extra) -> int:
    mesh = load_mesh(args.mesh)
    scene, rc = _scene_for(mesh, args, extra)
    res = _resolution(args.resolution)
    r = render(mesh, Uniform(), scene, rc.pipeline.gamma, res)
    flux = r.flux_image.flux
    io.write_image(args.out, _display(flux))
    if args.flux:
        io.write_flux(args.flux, flux)
    print(f"spilled flux {r.flux_image.spilled:.6g}")
    if args.oracle:
        mc = mc_reference_render(mesh, Uniform(), scene, args.rays, args.seed, res)
        z = z_scores(flux, mc.flux, args.rays)
        base, ext = os.path.splitext(args.out)
        io.write_image(base + "_mc" + ext, _display(mc.flux))
        within = float(np.mean(np.abs(z) <= 3.0))
        print(f"oracle: max |z| {np.max(np.abs(z)):.3f}; {100 * within:.2f}% of pixels within 3 sigma")
    return EXIT_OK


def cmd_validate(args, extra) -> int:
    mesh = load_mesh(args.mesh)
    scene, _ = _scene_for(mesh, args, extra)
    res = _resolution(args.resolution)
    try:
        det = render(mesh, Uniform(), scene, resolution=res).flux_image.flux
        mc = mc_reference_render(mesh, Uniform(), scene, args.rays, args.seed, res).flux
    except CausticError as exc:
        print(f"validation refused: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    z = z_scores(det, mc, args.rays)
    m = mae(_display(det), _display(mc))
    ok = bool(np.all(np.abs(z) <= args.z_max))
    print(f"rays {args.rays} seed {args.seed} resolution {res[0]}x{res[1]}")
    print(f"max |z| {np.max(np.abs(z)):.4f} (limit {args.z_max}); mean |z| {np.mean(np.abs(z)):.4f}")
    print(f"MAE(deterministic, Monte-Carlo) {m:.3e}")
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_error_map(args, extra) -> int:
    if extra:
        raise ConfigurationError(f"unexpected arguments {' '.join(extra)}")
    a = io.read_image(args.image_a)
    b = io.read_image(args.image_b)
    e = error_map(a, b)
    print(f"MAE {mae(a, b):.6g}")
    if args.out:
        io.write_image(args.out, e)
    return EXIT_OK


def _ot_svg(r, target, scene, gamma, path):
    tflux = target_flux_from_image(target, gamma).flux
    density = TargetDensity(tflux, scene.image_region)
    ot = solve_ot(SiteSet(r.face_centroids, r.face_flux), density, scene.image_region)
    io.write_partition_svg(path, ot.partition, tflux)
    return ot


def cmd_ot_dump(args, extra) -> int:
    mesh = load_mesh(args.mesh)
    scene, rc = _scene_for(mesh, args, extra)
    target = io.read_image(args.target)
    r = render(mesh, Uniform(), scene, rc.pipeline.gamma, target.shape[::-1])
    ot = _ot_svg(r, target, scene, rc.pipeline.gamma, args.out)
    print(f"OT residual {ot.residual:.3e} after {ot.iterations} iterations ({ot.status})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="causticlens", description="Freeform caustic lens design.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("design", help="run the design pipeline from a config file")
    d.add_argument("config")
    d.add_argument("-o", "--output", help="run directory (default: [run] output)")
    d.add_argument("--resume", action="store_true", help="continue from the last checkpoint")
    d.set_defaults(func=cmd_design)

    r = sub.add_parser("resume", help="continue an interrupted design run")
    r.add_argument("config")
    r.add_argument("-o", "--output")
    r.set_defaults(func=cmd_resume)

    for name, func, hlp in (("render", cmd_render, "render a lens"),
                            ("validate", cmd_validate, "compare the renderer with Monte-Carlo rays")):
        c = sub.add_parser(name, help=hlp)
        c.add_argument("mesh", help="OBJ file, checkpoint or run directory")
        c.add_argument("--config", help="config file supplying scene parameters")
        c.add_argument("--resolution", default="32")
        c.add_argument("--rays", type=int, default=10 ** 7)
        c.add_argument("--seed", type=int, default=0)
        if name == "render":
            c.add_argument("--out", default="render.png")
            c.add_argument("--flux", help="also write the raw flux array here")
            c.add_argument("--oracle", action="store_true", help="also render with Monte-Carlo rays")
        else:
            c.add_argument("--z-max", type=float, default=5.0)
        c.set_defaults(func=func)

    e = sub.add_parser("error-map", help="MAE and per-pixel error between two images")
    e.add_argument("image_a")
    e.add_argument("image_b")
    e.add_argument("--out")
    e.set_defaults(func=cmd_error_map)

    o = sub.add_parser("ot-dump", help="SVG of the power cells for a lens and target")
    o.add_argument("mesh")
    o.add_argument("target")
    o.add_argument("--config")
    o.add_argument("--out", default="partition.svg")
    o.set_defaults(func=cmd_ot_dump)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args, extra = build_parser().parse_known_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args, extra)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CausticError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
