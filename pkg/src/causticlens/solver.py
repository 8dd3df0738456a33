"""Limited-memory BFGS with a backtracking line search that tolerates +inf."""
from collections import deque
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from .errors import ConfigurationError, InfeasibleStart

CONVERGED = "converged"
MAX_ITERS = "max_iters"
STALLED = "stalled_line_search"


@dataclass
class SolverOptions:
    memory: int = 10
    max_iters: int = 500
    grad_tol: Optional[float] = None  # None -> 1e-7 * (1 + |f(x0)|)
    step_shrink: float = 0.5
    armijo_c: float = 1e-4
    max_backtracks: int = 40

    def __post_init__(self):
        if self.memory < 1:
            raise ConfigurationError("memory must be at least 1")
        if self.grad_tol is not None and not self.grad_tol > 0:
            raise ConfigurationError("grad_tol must be positive")
        if not 0 < self.step_shrink < 1 or not 0 < self.armijo_c < 1:
            raise ConfigurationError("step_shrink and armijo_c must lie in (0, 1)")


@dataclass
class SolverResult:
    x: np.ndarray
    value: float
    iterations: int
    status: str
    n_evals: int
    log: List[tuple]


def _direction(g, pairs, gamma):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * np.dot(s, q)
        alphas.append(a)
        q -= a * y
    r = gamma * q
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * np.dot(y, r)
        r += (a - b) * s
    return -r


def minimize(f: Callable, x0, opts: SolverOptions = None,
             callback: Callable = None) -> SolverResult:
    """Minimise ``f(x) -> (value, grad)``; non-finite values mean infeasible."""
    opts = opts or SolverOptions()
    x = np.array(x0, dtype=float)
    fx, g = f(x)
    n_evals = 1
    if not np.isfinite(fx):
        raise InfeasibleStart("objective is not finite at the starting point")
    tol = opts.grad_tol if opts.grad_tol is not None else 1e-7 * (1.0 + abs(fx))
    pairs = deque(maxlen=opts.memory)
    gamma = 1.0
    log = [(0, fx, float(np.max(np.abs(g))) if g.size else 0.0, 0.0)]
    status = MAX_ITERS
    it = 0
    if g.size == 0 or np.max(np.abs(g)) < tol:
        return SolverResult(x, fx, 0, CONVERGED, n_evals, log)
    while it < opts.max_iters:
        if pairs:
            d = _direction(g, pairs, gamma)
        else:
            d = -g / np.linalg.norm(g)
        slope = np.dot(g, d)
        if not slope < 0:
            pairs.clear()
            d = -g / np.linalg.norm(g)
            slope = np.dot(g, d)
        step = 1.0
        accepted = False
        for _ in range(opts.max_backtracks):
            xt = x + step * d
            ft, gt = f(xt)
            n_evals += 1
            if np.isfinite(ft) and ft <= fx + opts.armijo_c * step * slope:
                accepted = True
                break
            step *= opts.step_shrink
        if not accepted:
            if pairs:
                pairs.clear()  # retry once along steepest descent
                continue
            status = STALLED
            break
        it += 1
        s = xt - x
        y = gt - g
        sy = np.dot(s, y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            pairs.append((s, y, 1.0 / sy))
            gamma = sy / np.dot(y, y)
        x, fx, g = xt, ft, gt
        gn = float(np.max(np.abs(g)))
        log.append((it, fx, gn, step))
        if callback is not None:
            callback(it, x, fx, g)
        if gn < tol:
            status = CONVERGED
            break
    return SolverResult(x, fx, it, status, n_evals, log)
