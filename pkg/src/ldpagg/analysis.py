"""Metric evaluation, sampling grids, and log-log rate-slope fits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def sampling_grid(T: int, dense_below: int = 100, per_decade: int = 30) -> np.ndarray:
    """Iteration indices at which metrics are recorded.

    Every t below dense_below, then ~per_decade log-spaced integers per
    decade, always including T. Sorted, unique, within [0, T].
    """
    if T < 0:
        raise ValueError("T must be nonnegative")
    pts = set(range(0, min(dense_below, T + 1)))
    if T >= dense_below:
        lo, hi = np.log10(dense_below), np.log10(max(T, dense_below + 1))
        k = max(int(np.ceil((hi - lo) * per_decade)), 2)
        pts.update(int(round(v)) for v in np.logspace(lo, hi, k))
        pts.add(T)
    return np.array(sorted(p for p in pts if 0 <= p <= T), dtype=int)


def metric_eval(problem, X, Y, Z, t, x_star=None, F_star=None):
    """One metric row for the stacked state at iteration t.

    Columns requiring a truth optimizer are omitted (not zero-filled)
    when the problem does not provide one.
    """
    m = problem.m
    xbar_stack = np.tile(X.mean(axis=0), (m, 1))
    row = {
        "t": float(t),
        "consensus_x": float(np.sum((X - xbar_stack) ** 2)),
        "consensus_y": float(np.sum((Y - Y.mean(axis=0)) ** 2)),
        "consensus_z": float(np.sum((Z - Z.mean(axis=0)) ** 2)),
    }
    xown = problem.own_block(X).reshape(problem.n)
    row["grad_norm_sq"] = float(np.sum(problem.grad_F_true(xown) ** 2))
    if x_star is not None:
        row["err_to_opt_sq"] = float(np.sum((xown - x_star) ** 2))
    if F_star is not None:
        row["F_gap"] = problem.F_true(xown) - F_star
    return row


@dataclass
class SlopeFit:
    slope: float
    intercept: float
    r2: float
    t_lo: float
    t_hi: float
    n_points: int
    n_seeds: int
    ci: float = float("nan")

    def as_dict(self):
        return {
            "slope": self.slope, "intercept": self.intercept, "r2": self.r2,
            "window": [self.t_lo, self.t_hi], "n_points": self.n_points,
            "n_seeds": self.n_seeds, "ci": self.ci,
        }


def fit_rate(ts, values_per_seed, window=None, min_points=5) -> SlopeFit:
    """Least-squares slope of log10(cross-seed mean) against log10(t).

    values_per_seed is (n_seeds, len(ts)); all seeds must share the grid
    ts. Window defaults to [max(ts)/100, max(ts)]. Rejects non-finite or
    nonpositive mean values inside the window.
    """
    ts = np.asarray(ts, dtype=float)
    V = np.atleast_2d(np.asarray(values_per_seed, dtype=float))
    if V.shape[1] != ts.size:
        raise ValueError("per-seed series must share the sampling grid")
    if window is None:
        window = (ts.max() / 100.0, ts.max())
    t_lo, t_hi = window
    mask = (ts >= t_lo) & (ts <= t_hi) & (ts > 0)
    mean = V.mean(axis=0)[mask]
    tw = ts[mask]
    if tw.size < min_points:
        raise ValueError(f"need at least {min_points} sampled points in the window")
    if not np.all(np.isfinite(mean)) or np.any(mean <= 0):
        raise ValueError("non-finite or nonpositive values in the fit window")
    lx, ly = np.log10(tw), np.log10(mean)
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, res, _, _ = np.linalg.lstsq(A, ly, rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    ss_res = float(np.sum((A @ coef - ly) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    # rough 95% interval on the slope from the residual variance
    if tw.size > 2 and ss_tot > 0:
        svar = ss_res / (tw.size - 2) / float(np.sum((lx - lx.mean()) ** 2))
        ci = 1.96 * np.sqrt(max(svar, 0.0))
    else:
        ci = float("nan")
    return SlopeFit(slope, intercept, r2, float(t_lo), float(t_hi),
                    int(tw.size), int(V.shape[0]), ci)


def mean_over_seeds(records, column):
    """Stack one metric column across RunRecords sharing a grid; return (ts, matrix)."""
    ts = records[0].ts
    for r in records[1:]:
        if not np.array_equal(r.ts, ts):
            raise ValueError("records do not share a sampling grid")
    V = np.stack([np.asarray(r.columns[column]) for r in records])
    return ts, V
