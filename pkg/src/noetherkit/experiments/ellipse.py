"""Gradient flow on L(w1, w2) = w1^2 + a w2^2 started on one level set.

Q = w1^(2a) / w2^2 is conserved.  For a = 1 every point of the level set
shrinks at the same rate; otherwise the loss at time T depends on Q.
"""
import math

import numpy as np
from scipy.optimize import brentq

from ..conserved import QSpec
from ..flow import FlowConfig, ellipse_problem, integrate
from ._core import ExperimentResult, Table, check, require_grid


def ellipse_init(a, q, L0):
    """The point with w1, w2 > 0, w1^2 + a w2^2 = L0 and w1^(2a) / w2^2 = q."""
    a, q, L0 = float(a), float(q), float(L0)
    if not (a > 0 and L0 > 0):
        raise ValueError("a and L0 must be positive")
    if not q > 0:
        raise ValueError(f"Q = {q} is not reachable on the level set (need Q > 0)")
    top = L0 / a

    # log Q(s) with s = w2^2 is strictly decreasing on (0, L0/a), from +inf to -inf
    def f(s):
        return a * math.log(L0 - a * s) - math.log(s) - math.log(q)

    lo, hi = top * 1e-300, top * (1.0 - 1e-15)
    if f(lo) <= 0.0 or f(hi) >= 0.0:
        raise ValueError(f"Q = {q} is not reachable on the level set L = {L0}")
    s = brentq(f, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    return np.array([math.sqrt(L0 - a * s), math.sqrt(s)])


def exp_ellipse(a, q_grid, L0=1.0, dt=1e-3, T=1.0, seed=0, rows=101):
    q_grid = [float(q) for q in require_grid("q_grid", q_grid)]
    a = float(a)
    steps = int(round(T / dt))
    if steps < 1:
        raise ValueError("T must be at least one step")
    every = max(1, steps // (rows - 1))
    spec = QSpec("EllipseQ", a=a)
    cfg = FlowConfig(mode="rk4", step=dt, steps=steps, record_every=every,
                     q_specs=(spec,), gtol=0.0)

    curves, summary = {}, Table(["q", "w1_0", "w2_0", "loss_T", "closed_form_T",
                                 "max_abs_error", "q_rel_drift"])
    for q in q_grid:
        w0 = ellipse_init(a, q, L0)
        traj = integrate(w0, ellipse_problem(a), cfg)
        t = np.asarray(traj.step, dtype=np.float64) * dt
        exact = w0[0] ** 2 * np.exp(-4.0 * t) + a * w0[1] ** 2 * np.exp(-4.0 * a * t)
        loss = np.asarray(traj.loss)
        curves[q] = (t, loss, exact)
        summary.rows.append([q, float(w0[0]), float(w0[1]), float(loss[-1]), float(exact[-1]),
                             float(np.max(np.abs(loss - exact))),
                             traj.q_drift(spec.name) / q])

    t = curves[q_grid[0]][0]
    cols = ["t"] + [f"loss_q{i}" for i in range(len(q_grid))] + [
        f"exact_q{i}" for i in range(len(q_grid))]
    table = Table(cols)
    for r in range(t.size):
        table.rows.append([float(t[r])] + [float(curves[q][1][r]) for q in q_grid]
                          + [float(curves[q][2][r]) for q in q_grid])

    err = max(row[5] for row in summary.rows)
    final = np.array([row[3] for row in summary.rows])
    spread = float((final.max() - final.min()) / np.mean(np.abs(final)))
    spread_table = Table(["a", "n_q", "loss_T_min", "loss_T_max", "relative_spread"],
                         [[a, len(q_grid), float(final.min()), float(final.max()), spread]])
    verdicts = [check("rk4_matches_closed_form", err, 1e-6, "<=", "summary")]
    if len(q_grid) > 1:
        if a == 1.0:
            verdicts.append(check("loss_independent_of_q", spread, 1e-9, "<=", "spread"))
        else:
            verdicts.append(check("loss_depends_on_q", spread, 1e-3, ">", "spread"))
    config = {"a": a, "q_grid": q_grid, "L0": float(L0), "dt": float(dt), "T": float(T),
              "seed": int(seed), "rows": int(rows)}
    return ExperimentResult("ellipse", {"curves": table, "summary": summary,
                                        "spread": spread_table}, verdicts, config)
