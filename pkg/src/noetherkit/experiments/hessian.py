"""Sharpness of minima as a function of the conserved quantity.

Q here is the unhalved trace Tr[U^T U - V V^T].  In 1D (y = u v x with
x = y = 1, mean loss over one sample) the minimum with imbalance Q has Hessian
eigenvalues {0, 2 sqrt(Q^2 + 4)}.  For a linear multi-dim net one minimum is
found by GD and then moved along the orbit g = cI, which keeps the loss and
shifts Q to each grid value exactly.
"""
import math

import numpy as np

from ..flow import hessian_spectrum, train_to_critical
from ..network import Batch, Identity, MlpParams, Tanh, random_params
from ..symmetry import orbit_dimension_formula
from ._core import ExperimentResult, Table, check, require_grid, spearman, trial_rng


def trace_q(params: MlpParams):
    V, U = params.weights
    return float(np.sum(U * U) - np.sum(V * V))


def move_to_q(params: MlpParams, q):
    """(U, V) -> (U / c, c V) with c chosen so that Tr[U^T U - V V^T] = q."""
    V, U = params.weights
    a, b = float(np.sum(U * U)), float(np.sum(V * V))
    x = (-q + math.sqrt(q * q + 4.0 * a * b)) / (2.0 * b)
    c = math.sqrt(x)
    return MlpParams([c * V, U / c])


def one_d_minimum(q, act=None, dt=1e-2, max_steps=200000, v0=0.5):
    """Train (v, u) from an init with the given Q to a minimum of (1 - u act(v))^2."""
    act = act or Identity()
    if act.kind == "Identity":
        u0 = math.sqrt(q + v0 * v0)
    else:
        # tanh: Q = u^2/2 - (cosh 2v - 1)/4 is conserved instead
        u0 = math.sqrt(2.0 * (q + 0.25 * (math.cosh(2 * v0) - 1.0)))
    params = MlpParams([np.array([[v0]]), np.array([[u0]])])
    batch = Batch(np.ones((1, 1)), np.ones((1, 1)))
    acts = [act, Identity()]
    final, _ = train_to_critical(params, acts, batch, lr=dt, max_steps=max_steps,
                                 gtol=1e-10, mode="rk4")
    return final, acts, batch


def exp_hessian_vs_q(dims=(5, 50, 10), q_grid=(0.0, 4.0, 8.0), eta=0.05, steps=200000,
                     seed=0, one_d_q=(0.0, 1.0, 3.0), samples=20, threshold=1e-3,
                     max_params=1000):
    q_grid = [float(q) for q in require_grid("q_grid", q_grid)]
    one_d_q = [float(q) for q in require_grid("one_d_q", one_d_q)]
    m, h, n = (int(d) for d in dims)

    one_d = Table(["q", "q_reached", "eig_small", "eig_large", "predicted_large", "abs_error"])
    for q in one_d_q:
        final, acts, batch = one_d_minimum(q)
        rep = hessian_spectrum(final, acts, batch, threshold=threshold, max_params=max_params)
        pred = 2.0 * math.sqrt(q * q + 4.0)
        err = max(abs(rep.eigenvalues[0]), abs(rep.eigenvalues[1] - pred))
        one_d.rows.append([q, trace_q(final), float(rep.eigenvalues[0]),
                           float(rep.eigenvalues[1]), pred, float(err)])

    nonlinear = Table(["activation", "q", "eig_small", "eig_large"])
    for q in one_d_q:
        final, acts, batch = one_d_minimum(q, Tanh())
        rep = hessian_spectrum(final, acts, batch, threshold=threshold, max_params=max_params)
        nonlinear.rows.append(["Tanh", q, float(rep.eigenvalues[0]), float(rep.eigenvalues[1])])

    rng = trial_rng(seed, 0)
    X = rng.standard_normal((n, samples))
    A = rng.standard_normal((m, n)) / math.sqrt(n)
    batch = Batch(X, A @ X)
    acts = [Identity(), Identity()]
    base, _ = train_to_critical(random_params([n, h, m], rng), acts, batch, lr=eta,
                                max_steps=steps, gtol=1e-8)
    predicted = orbit_dimension_formula("FullGL", n, h, m)
    multi = Table(["q", "n_params", "near_zero", "predicted_near_zero", "mean_surviving",
                   "largest"])
    spectra = {}
    for q in q_grid:
        params = move_to_q(base, q)
        rep = hessian_spectrum(params, acts, batch, threshold=threshold, max_params=max_params)
        spectra[q] = rep.eigenvalues
        surv = rep.surviving
        multi.rows.append([q, params.n_params, rep.near_zero, predicted,
                           float(surv.mean()) if surv.size else float("nan"), rep.largest])
    eig_table = Table(["index"] + [f"eig_q{i}" for i in range(len(q_grid))],
                      [[j] + [float(spectra[q][j]) for q in q_grid]
                       for j in range(base.n_params)])

    verdicts = [check("one_d_matches_formula", max(r[5] for r in one_d.rows), 1e-3, "<=",
                      "one_d"),
                check("near_zero_count_matches_orbit_dim",
                      max(abs(r[2] - r[3]) for r in multi.rows), 0, "==", "multi")]
    if len(q_grid) >= 2:
        rho = spearman([r[0] for r in multi.rows], [r[4] for r in multi.rows])
        verdicts.append(check("sharpness_rank_correlates_with_q", rho, 0.0, ">", "multi"))
    config = {"dims": [m, h, n], "q_grid": q_grid, "eta": float(eta), "steps": int(steps),
              "seed": int(seed), "one_d_q": one_d_q, "samples": int(samples),
              "threshold": float(threshold), "max_params": int(max_params)}
    return ExperimentResult("hessian-vs-q", {"one_d": one_d, "one_d_tanh": nonlinear,
                                             "multi": multi, "eigenvalues": eig_table},
                            verdicts, config)
