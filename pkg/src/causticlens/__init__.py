"""Freeform caustic lens design from a target image.

A height-field lens surface is optimised so that light refracted (or
reflected) by it forms a prescribed image on a receptive plane. The forward
model is an exact, differentiable flux renderer; the design loop alternates
semi-discrete optimal transport with rendering-guided L-BFGS, coarse to fine.
"""
from .errors import (CausticError, ConfigurationError, InvalidHeightField,
                     TotalInternalReflection, ZeroTotalFlux)
from .mesh import HeightFieldMesh, build_initial_mesh, subdivide
from .optics import OpticalScene, ParallelLight, PlaneFront, PointLight
from .render import FluxImage, GammaModel, PixelMap, Uniform, render, target_flux_from_image
from .energy import EnergyConfig
from .solver import SolverOptions, minimize
from .ot import SiteSet, TargetDensity, power_diagram, solve_ot
from .pipeline import PipelineConfig, run

__version__ = "0.1.0"

__all__ = [
    "CausticError", "ConfigurationError", "InvalidHeightField", "TotalInternalReflection",
    "ZeroTotalFlux", "HeightFieldMesh", "build_initial_mesh", "subdivide", "OpticalScene",
    "ParallelLight", "PlaneFront", "PointLight", "FluxImage", "GammaModel", "PixelMap",
    "Uniform", "render", "target_flux_from_image", "EnergyConfig", "SolverOptions",
    "minimize", "SiteSet", "TargetDensity", "power_diagram", "solve_ot", "PipelineConfig",
    "run",
]
