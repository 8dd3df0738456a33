"""Semi-discrete optimal transport between face centroids and a pixel density.

Power cells come from the lower convex hull of the lifted sites
``(x, y, |c|^2 - w)``: hull neighbours are the only sites that can bound a
cell, so each cell is the region rectangle clipped by the power bisectors to
those neighbours. Sites missing from the lower hull have empty cells.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from . import _kernels as K
from .solver import SolverOptions, minimize
from .errors import ZeroFluxCell

log = logging.getLogger(__name__)


@dataclass
class TargetDensity:
    """Piecewise-constant density: ``flux`` per pixel of ``region``."""
    flux: np.ndarray  # (rows, cols), sums to 1
    region: Tuple[float, float, float, float]

    @property
    def grid(self):
        x0, y0, x1, y1 = self.region
        nh, nw = self.flux.shape
        return float(x0), float(y0), (x1 - x0) / nw, (y1 - y0) / nh, nw, nh

    @property
    def pixel_area(self) -> float:
        g = self.grid
        return g[2] * g[3]

    @property
    def density(self) -> np.ndarray:
        return np.ascontiguousarray(self.flux / self.pixel_area)


@dataclass
class SiteSet:
    centroids: np.ndarray  # (n, 2)
    fluxes: np.ndarray     # (n,)
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        self.centroids = np.ascontiguousarray(self.centroids, dtype=float).reshape(-1, 2)
        self.fluxes = np.asarray(self.fluxes, dtype=float)
        if self.weights is None:
            self.weights = np.zeros(len(self.fluxes))
        self.weights = np.asarray(self.weights, dtype=float)


@dataclass
class PowerPartition:
    ptr: np.ndarray
    poly: np.ndarray
    region: Tuple[float, float, float, float]

    def __len__(self):
        return len(self.ptr) - 1

    def cell(self, i) -> np.ndarray:
        return self.poly[self.ptr[i]:self.ptr[i + 1]]

    def areas(self) -> np.ndarray:
        out = np.zeros(len(self))
        for i in range(len(self)):
            c = self.cell(i)
            if len(c) >= 3:
                x, y = c[:, 0], c[:, 1]
                out[i] = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
        return out


# --------------------------------------------------------------------------
# construction
# --------------------------------------------------------------------------

def separate_duplicates(points: np.ndarray, region) -> np.ndarray:
    """Nudge coincident sites apart by a tiny, index-determined offset."""
    x0, y0, x1, y1 = region
    tol = 1e-12 * np.hypot(x1 - x0, y1 - y0)
    order = np.lexsort((points[:, 1], points[:, 0]))
    p = points[order]
    close = np.all(np.abs(np.diff(p, axis=0)) <= tol, axis=1)
    if not close.any():
        return points
    out = points.copy()
    run = 0
    for k in range(1, len(p)):
        run = run + 1 if close[k - 1] else 0
        if run:
            ang = 2.399963 * order[k]  # golden-angle spread, fixed per index
            out[order[k]] += 4 * tol * run * np.array([np.cos(ang), np.sin(ang)])
    log.info("separated %d coincident sites", int(close.sum()))
    return out


def _neighbour_lists(adj_i, adj_j, n):
    a = np.concatenate([adj_i, adj_j])
    b = np.concatenate([adj_j, adj_i])
    key = np.unique(a * n + b)
    a, b = key // n, key % n
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(ptr, a + 1, 1)
    return np.cumsum(ptr), b.astype(np.int64)


def _hull_neighbours(points, weights):
    n = len(points)
    lifted = np.column_stack([points, np.sum(points ** 2, axis=1) - weights])
    # centre and scale the lifted cloud for a well-conditioned hull
    lifted = (lifted - lifted.mean(axis=0)) / np.maximum(lifted.std(axis=0), 1e-300)
    hull = ConvexHull(lifted, qhull_options="Qt Qc Qx")
    lower = hull.simplices[hull.equations[:, 2] < 0]
    i = np.concatenate([lower[:, 0], lower[:, 1], lower[:, 2]])
    j = np.concatenate([lower[:, 1], lower[:, 2], lower[:, 0]])
    return _neighbour_lists(i, j, n)


def _all_neighbours(n):
    ptr = np.arange(n + 1, dtype=np.int64) * max(n - 1, 0)
    idx = np.array([j for i in range(n) for j in range(n) if j != i], dtype=np.int64)
    return ptr, idx


def power_diagram(sites: SiteSet, region, method: str = "hull") -> PowerPartition:
    """Region-clipped power cells of the sites (CCW polygons, possibly empty)."""
    pts = separate_duplicates(sites.centroids, region)
    n = len(pts)
    nbr = None
    if method == "hull" and n > 4:
        try:
            nbr = _hull_neighbours(pts, sites.weights)
        except QhullError:
            log.info("hull construction failed, using all-pairs neighbours")
    if nbr is None:
        nbr = _all_neighbours(n)
    x0, y0, x1, y1 = map(float, region)
    ptr, poly = K.power_cells(np.ascontiguousarray(pts), np.ascontiguousarray(sites.weights, dtype=float),
                              nbr[0], nbr[1], x0, y0, x1, y1)
    return PowerPartition(ptr, poly, (x0, y0, x1, y1))


# --------------------------------------------------------------------------
# integrals
# --------------------------------------------------------------------------

def _moments(part: PowerPartition, centers, density: TargetDensity):
    return K.cell_moments(part.ptr, np.ascontiguousarray(part.poly, dtype=float),
                          np.ascontiguousarray(centers, dtype=float).reshape(-1, 2),
                          density.density, *density.grid)


def _single(cell, c, density):
    cell = np.asarray(cell, dtype=float).reshape(-1, 2)
    part = PowerPartition(np.array([0, len(cell)], dtype=np.int64), cell, density.region)
    return _moments(part, np.asarray(c, dtype=float).reshape(1, 2), density)


def cell_target_flux(cell, density: TargetDensity) -> float:
    """Target flux inside a convex CCW polygon."""
    return float(_single(cell, (0.0, 0.0), density)[0][0])


def integral_squared_distance(cell, c, density: TargetDensity) -> float:
    """Integral of |s - c|^2 times the density over a convex CCW polygon."""
    return float(_single(cell, c, density)[2][0])


def flux_weighted_centroid(cell, density: TargetDensity) -> np.ndarray:
    mass, mom, _, _ = _single(cell, (0.0, 0.0), density)
    if not mass[0] > 0:
        raise ZeroFluxCell("cell receives no target flux")
    return mom[0] / mass[0]


def h_energy(sites: SiteSet, density: TargetDensity, region=None):
    """Convex OT energy of the weights and its gradient."""
    region = density.region if region is None else region
    part = power_diagram(sites, region)
    mass, _, sec, _ = _moments(part, sites.centroids, density)
    w = sites.weights
    value = float(np.sum(-sec + w * mass - sites.fluxes * w))
    return value, mass - sites.fluxes


# --------------------------------------------------------------------------
# solve
# --------------------------------------------------------------------------

@dataclass
class OTResult:
    weights: np.ndarray
    partition: PowerPartition
    residual: float
    iterations: int
    status: str
    active: np.ndarray  # indices of sites that took part in the solve


def solve_ot(sites: SiteSet, density: TargetDensity, region=None,
             opts: SolverOptions = None, tol: float = 1e-7) -> OTResult:
    """Weights whose power cells carry exactly the site fluxes.

    Zero-flux sites are left out and get empty cells. The returned weights
    have zero mean over the active sites.
    """
    region = density.region if region is None else region
    n = len(sites.fluxes)
    active = np.nonzero(sites.fluxes > 0)[0]
    sub = SiteSet(sites.centroids[active], sites.fluxes[active], sites.weights[active].copy())
    opts = opts or SolverOptions(max_iters=200)
    if opts.grad_tol is None:
        opts = SolverOptions(opts.memory, opts.max_iters, tol, opts.step_shrink,
                             opts.armijo_c, opts.max_backtracks)

    def f(w):
        sub.weights = w
        return h_energy(sub, density, region)

    res = minimize(f, sub.weights.copy(), opts)
    w = res.x - res.x.mean()
    sub.weights = w
    part_sub = power_diagram(sub, region)
    mass = _moments(part_sub, sub.centroids, density)[0]
    residual = float(np.max(np.abs(mass - sub.fluxes))) if len(active) else 0.0
    full_w = np.zeros(n)
    full_w[active] = w
    # lay the active partition out over all sites, inactive ones empty
    counts = np.zeros(n, dtype=np.int64)
    counts[active] = np.diff(part_sub.ptr)
    ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    part = PowerPartition(ptr, part_sub.poly, part_sub.region)
    return OTResult(full_w, part, residual, res.iterations, res.status, active)


def cell_centroids(part: PowerPartition, density: TargetDensity, fallback) -> Tuple[np.ndarray, np.ndarray]:
    """Flux-weighted centroid per cell; ``fallback`` (n, 2) where a cell has no flux.

    Returns ``(centroids, has_flux)``; cells without flux but with area use
    their geometric centroid.
    """
    mass, mom, _, area = _moments(part, np.zeros((len(part), 2)), density)
    out = np.array(fallback, dtype=float, copy=True)
    ok = mass > 0
    out[ok] = mom[ok] / mass[ok, None]
    geo = (~ok) & (area > 0)
    if geo.any():
        for i in np.nonzero(geo)[0]:
            c = part.cell(i)
            x, y = c[:, 0], c[:, 1]
            cr = x * np.roll(y, -1) - np.roll(x, -1) * y
            a = 0.5 * cr.sum()
            out[i] = [np.sum((x + np.roll(x, -1)) * cr) / (6 * a),
                      np.sum((y + np.roll(y, -1)) * cr) / (6 * a)]
    return out, ok
