import numpy as np
import pytest

from causticlens.errors import ConfigurationError, InfeasibleStart
from causticlens.solver import CONVERGED, STALLED, SolverOptions, minimize


def test_quadratic():
    r = minimize(lambda x: ((x[0] - 3) ** 2, np.array([2 * (x[0] - 3)])), [0.0])
    assert r.status == CONVERGED and abs(r.x[0] - 3) < 1e-10


def rosen(x):
    a, b = x
    f = (1 - a) ** 2 + 100 * (b - a * a) ** 2
    g = np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])
    return f, g


def test_rosenbrock():
    r = minimize(rosen, [-1.2, 1.0], SolverOptions(max_iters=2000, grad_tol=1e-12))
    assert np.max(np.abs(r.x - 1)) < 1e-8


def test_barrier_never_accepts_infeasible():
    seen = []

    def f(x):
        if x[0] <= 0:
            return np.inf, None
        return -np.log(x[0]) + x[0], np.array([-1 / x[0] + 1])

    r = minimize(f, [2.0], SolverOptions(grad_tol=1e-12),
                 callback=lambda it, x, fx, g: seen.append(x[0]))
    assert abs(r.x[0] - 1) < 1e-10
    assert seen and min(seen) > 0


def test_infeasible_start():
    with pytest.raises(InfeasibleStart):
        minimize(lambda x: (np.inf, None), [0.0])
    with pytest.raises(InfeasibleStart):
        minimize(lambda x: (np.nan, np.zeros(1)), [0.0])


def test_stalled_returns_best():
    # gradient points the wrong way, so no step satisfies Armijo
    r = minimize(lambda x: (float(x[0] ** 2), np.array([-1.0])), [1.0],
                 SolverOptions(max_backtracks=5))
    assert r.status == STALLED and r.x[0] == 1.0 and r.value == 1.0


def test_log_is_monotone(rng):
    A = rng.normal(size=(6, 6))
    Q = A @ A.T + np.eye(6)
    b = rng.normal(size=6)
    r = minimize(lambda x: (0.5 * x @ Q @ x - b @ x, Q @ x - b), np.zeros(6))
    vals = [e[1] for e in r.log]
    assert all(v1 <= v0 for v0, v1 in zip(vals, vals[1:]))
    assert np.allclose(r.x, np.linalg.solve(Q, b), atol=1e-6)


def test_memory_one_still_converges(rng):
    r = minimize(rosen, [-1.2, 1.0], SolverOptions(memory=1, max_iters=20000, grad_tol=1e-10))
    assert np.max(np.abs(r.x - 1)) < 1e-6


@pytest.mark.parametrize("kw", [dict(memory=0), dict(grad_tol=0.0), dict(step_shrink=1.5),
                                dict(armijo_c=0.0)])
def test_options_validation(kw):
    with pytest.raises(ConfigurationError):
        SolverOptions(**kw)
