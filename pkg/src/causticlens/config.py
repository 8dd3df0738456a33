"""Plain-text run configuration.

The format is ``[section]`` headers followed by ``key = value`` lines; ``#``
and ``;`` start comments. Every key must appear in :data:`SCHEMA`, and each
error message names the offending line.

Example::

    [run]
    target = examples/two_squares.pgm
    output = runs/two_squares

    [pipeline]
    coarsest = 16
    alternations = 3

    [energy]
    lambda2 = 0        # ablate the gradient term
"""
import os
from dataclasses import dataclass, field, fields
from typing import Optional

from .energy import EnergyConfig
from .errors import ConfigurationError
from .pipeline import PipelineConfig
from .render import GammaModel
from .solver import SolverOptions


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _opt_float(s):
    return None if s.strip().lower() in ("none", "auto", "") else float(s)


def _opt_int(s):
    return None if s.strip().lower() in ("none", "auto", "") else int(s)


def _vec3(s):
    parts = s.replace(",", " ").split()
    if len(parts) != 3:
        raise ValueError(f"expected three numbers, got {s!r}")
    return tuple(float(p) for p in parts)


def _choice(*names):
    def parse(s):
        v = s.strip()
        if v not in names:
            raise ValueError(f"expected one of {', '.join(names)}, got {v!r}")
        return v
    return parse


SCHEMA = {
    "run": {"target": str, "output": str, "seed": int},
    "pipeline": {"coarsest": int, "levels": _opt_int, "alternations": int, "use_ot": _bool,
                 "mesh_ratio": float, "ot_tol": float, "check_subdivision": _bool},
    "scene": {"lens_size": _opt_float, "focal_length": _opt_float, "image_scale": _opt_float,
              "eta": float, "mode": _choice("refract", "reflect"),
              "light": _choice("parallel", "point"), "light_direction": _vec3,
              "light_distance": _opt_float, "thickness": _opt_float},
    "energy": {f.name: (_opt_float if f.name in ("eps1", "eps2") else
                        _choice("forward", "central") if f.name == "grad_operator" else float)
               for f in fields(EnergyConfig)},
    "solver": {"memory": int, "render_iters": int, "update_iters": int, "ot_iters": int},
    "gamma": {"exponent": float, "srgb": _bool},
    "export": {"obj_thickness": float, "svg": _bool, "flux_binary": _bool},
}


@dataclass
class RunConfig:
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    target: Optional[str] = None
    output: Optional[str] = None
    obj_thickness: float = 1.0
    svg: bool = False
    flux_binary: bool = False


def parse_text(text: str, source: str = "<config>") -> dict:
    """Parse into ``{section: {key: (value, line)}}`` with typed values."""
    out = {}
    section = None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw
        for c in ("#", ";"):
            if c in line:
                line = line[:line.index(c)]
        line = line.strip()
        if not line:
            continue
        where = f"{source}:{no}"
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigurationError(f"{where}: malformed section header {raw.strip()!r}")
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigurationError(f"{where}: unknown section [{section}]")
            out.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigurationError(f"{where}: expected 'key = value', got {raw.strip()!r}")
        if section is None:
            raise ConfigurationError(f"{where}: key outside any section")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA[section]:
            raise ConfigurationError(f"{where}: unknown key {key!r} in [{section}]")
        if key in out[section]:
            raise ConfigurationError(f"{where}: duplicate key {key!r} "
                                     f"(first set on line {out[section][key][1]})")
        try:
            out[section][key] = (SCHEMA[section][key](val), no)
        except ValueError as exc:
            raise ConfigurationError(f"{where}: bad value for {section}.{key}: {exc}") from None
    return out


def parse_override(name: str, value: str):
    """``section.key`` (or a unique bare key) with its typed value."""
    if "." in name:
        section, key = name.split(".", 1)
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigurationError(f"unknown option --{name}")
    else:
        hits = [s for s in SCHEMA if name in SCHEMA[s]]
        if len(hits) != 1:
            raise ConfigurationError(f"unknown option --{name}" if not hits else
                                     f"ambiguous option --{name}: use one of "
                                     + ", ".join(f"--{s}.{name}" for s in hits))
        section, key = hits[0], name
    try:
        return section, key, SCHEMA[section][key](value)
    except ValueError as exc:
        raise ConfigurationError(f"bad value for --{name}: {exc}") from None


def build(values: dict, base_dir: str = ".") -> RunConfig:
    """Assemble a :class:`RunConfig` from parsed ``{section: {key: value}}``."""
    v = values
    run = v.get("run", {})
    pipe = dict(v.get("pipeline", {}))
    scene = v.get("scene", {})
    solver = v.get("solver", {})
    gamma = v.get("gamma", {})
    export = v.get("export", {})
    try:
        energy = EnergyConfig(**v.get("energy", {}))
        mem = solver.get("memory", 10)
        cfg = PipelineConfig(
            energy=energy,
            render_opts=SolverOptions(memory=mem, max_iters=solver.get("render_iters", 500)),
            update_opts=SolverOptions(memory=mem, max_iters=solver.get("update_iters", 200)),
            ot_opts=SolverOptions(memory=mem, max_iters=solver.get("ot_iters", 200)),
            gamma=GammaModel(**gamma),
            seed=run.get("seed", 0),
            **pipe, **scene)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None
    if not cfg.eta > 0:
        raise ConfigurationError("scene.eta must be positive")

    def resolve(p):
        return None if p is None else (p if os.path.isabs(p) else os.path.join(base_dir, p))

    return RunConfig(cfg, resolve(run.get("target")), resolve(run.get("output")),
                     export.get("obj_thickness", 1.0), export.get("svg", False),
                     export.get("flux_binary", False))


def load(path: Optional[str], overrides=()) -> RunConfig:
    """Read a config file (or start from defaults) and apply overrides.

    ``overrides`` holds ``(section, key, value)`` triples, e.g. from
    :func:`parse_override`.
    """
    if path is None:
        values = {}
        for section, key, val in overrides:
            values.setdefault(section, {})[key] = val
        return build(values)
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    parsed = parse_text(text, path)
    values = {s: {k: val for k, (val, _) in d.items()} for s, d in parsed.items()}
    for section, key, val in overrides:
        values.setdefault(section, {})[key] = val
    return build(values, os.path.dirname(os.path.abspath(path)))

