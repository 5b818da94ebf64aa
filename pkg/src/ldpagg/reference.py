"""Independent centralized solvers used as verification oracles.

Deliberately written without reuse of the simulator code paths so the
distributed implementation can be checked against it.
"""

from __future__ import annotations

import numpy as np


def centralized_minimize(grad, lo, hi, step, x0=None, max_iter=200000,
                         tol=1e-12):
    """Projected gradient descent on exact expectations.

    Runs x <- clip(x - step * grad(x)) until the update norm drops below
    tol. grad takes and returns flat vectors.
    """
    x = np.zeros_like(lo) if x0 is None else np.array(x0, dtype=float)
    x = np.clip(x, lo, hi)
    for _ in range(max_iter):
        x_new = np.clip(x - step * grad(x), lo, hi)
        if np.linalg.norm(x_new - x) < tol:
            return x_new
        x = x_new
    return x


def centralized_trajectory(problem, schedules, T, x0):
    """Deterministic single-node projected-gradient trajectory.

    Mirrors what the noise-free distributed iteration should collapse to
    for m = 1: trackers reproduce g and grad_y f exactly, so each step is
    x <- clip(x - lambda_x(t) * (grad_x f + grad_g . grad_y f)) on the
    expected objective. Returns the (T+1, n) array of iterates.
    """
    x = np.array(x0, dtype=float)
    out = [x.copy()]
    for t in range(T):
        g = problem.g_true(x[None, :])[0]
        Xown = x[None, :]
        # expected-value gradients at (x, g(x)) via the population oracle
        u = g
        if problem.family == "quadratic":
            gx = problem.alpha * (x - problem.c[0])
            gy = problem.gamma * (u - problem.d[0])
            gdot = problem.A[0].T @ gy
        else:
            raise NotImplementedError("centralized trajectory oracle is quadratic-only")
        step = schedules.lambda_x.value(t)
        x = np.clip(x - step * (gx + gdot), problem.box_lo, problem.box_hi)
        out.append(x.copy())
    return np.stack(out)
