"""How the conserved quantity fixed at initialization shapes convergence."""
import math

import numpy as np

from ..conserved import QSpec, q_elementwise_integral
from ..flow import FlowConfig, run_gd, run_radial_flow, spectral_init
from ..network import Activation, Batch, Identity, MlpParams
from ._core import ExperimentResult, Table, check, map_trials, require_grid, spearman, trial_rng

ELEMENTWISE_KINDS = ("Identity", "LeakyReLU", "Tanh", "Sigmoid")


def _as_activation(act):
    return act if isinstance(act, Activation) else Activation.from_dict(act)


def init_q(U, V, act):
    """Q of ||Y - U sigma(V^T)||^2; for ReLU the elementwise integral becomes 1/2(|U|^2 - |V|^2)."""
    V = np.asarray(V).T
    if act.kind == "LeakyReLU" and act.slope == 0.0:
        return 0.5 * float(np.sum(U * U) - np.sum(V * V))
    return q_elementwise_integral(U, V, act)


def exp_convergence_elementwise(act, variance_grid, eta=1e-3, steps=5000, dims=(5, 50, 10),
                                seed=0, threshold=1e-2, record_every=50):
    """GD on ||Y - U sigma(V^T)||_F^2 (X = I) from inits of varying scale, hence varying Q.

    Steps-to-threshold counts GD steps until the loss falls below
    threshold * ||Y||^2; steps + 1 means the threshold was never reached.
    """
    act = _as_activation(act)
    if act.kind not in ELEMENTWISE_KINDS or (act.kind == "LeakyReLU" and act.slope != 0.0):
        raise ValueError("activation must be Identity, ReLU, Tanh or Sigmoid")
    grid = [(float(a), float(b)) for a, b in require_grid("variance_grid", variance_grid)]
    m, h, n = (int(d) for d in dims)
    Y = trial_rng(seed, 0).standard_normal((m, n))
    batch = Batch(np.eye(n), Y)
    target = threshold * float(np.sum(Y * Y))
    # every step is recorded so the threshold crossing is exact
    cfg = FlowConfig(mode="gd", step=eta, steps=steps, convention="sum", gtol=0.0)
    acts = [act, Identity()]

    def trial(i):
        var_u, var_v = grid[i]
        rng = trial_rng(seed, i + 1)
        U = rng.standard_normal((m, h)) * math.sqrt(var_u)
        V = rng.standard_normal((n, h)) * math.sqrt(var_v)
        q = init_q(U, V, act)
        params = MlpParams([V.T.copy(), U])
        traj = run_gd(params, acts, batch, cfg)
        loss = np.asarray(traj.loss)
        hit = np.flatnonzero(loss <= target)
        reached = int(hit[0]) if hit.size else steps + 1
        return q, reached, loss

    results = map_trials(trial, range(len(grid)))
    summary = Table(["var_u", "var_v", "q", "steps_to_threshold", "final_loss"])
    for (var_u, var_v), (q, reached, loss) in zip(grid, results):
        summary.rows.append([var_u, var_v, q, reached, float(loss[-1])])
    idx = list(range(0, steps + 1, record_every))
    if idx[-1] != steps:
        idx.append(steps)
    curves = Table(["step"] + [f"loss_init{i}" for i in range(len(grid))],
                   [[s] + [float(r[2][s]) if s < r[2].size else float("nan") for r in results]
                    for s in idx])

    qs = [r[0] for r in results]
    reached = [r[1] for r in results]
    rho = spearman(qs, reached)
    distinct = len(set(reached))
    corr = Table(["n_inits", "distinct_steps", "spearman_q_steps"], [[len(grid), distinct, rho]])
    verdicts = [check("steps_vary_with_q", distinct, 1, ">", "correlation"),
                check("rank_correlation_recorded", abs(rho), 0.0, ">", "correlation",
                      asserted=False)]
    config = {"activation": act.to_dict(), "variance_grid": [list(p) for p in grid],
              "eta": float(eta), "steps": int(steps), "dims": [m, h, n], "seed": int(seed),
              "threshold": float(threshold), "record_every": int(record_every)}
    return ExperimentResult("convergence-elementwise",
                            {"summary": summary, "curves": curves, "correlation": corr},
                            verdicts, config)


def exp_radial_convergence(lambda_grid, dt=1e-3, T=5.0, y_spec=None, seed=0,
                           threshold=1e-3, rows=201):
    """Decoupled flow of sigma^x = u/v per singular index for each lambda = u^2 + v^2.

    The random spectral init is rescaled per index so that every index has the
    given lambda while sigma^x(0) stays fixed; the loss curves for different
    lambda are then time-rescalings of one another.
    """
    lambdas = [float(x) for x in require_grid("lambda_grid", lambda_grid)]
    if any(x <= 0 for x in lambdas):
        raise ValueError("lambda values must be positive")
    y_spec = dict(y_spec or {"rows": 5, "cols": 10})
    if set(y_spec) - {"rows", "cols", "Y"}:
        raise ValueError(f"unknown y_spec keys {sorted(set(y_spec) - {'rows', 'cols', 'Y'})}")
    rng = trial_rng(seed, 0)
    if "Y" in y_spec:
        Y = np.asarray(y_spec["Y"], dtype=np.float64)
    else:
        Y = rng.standard_normal((int(y_spec["rows"]), int(y_spec["cols"])))
    init = spectral_init(Y, rng)
    sy = init.sigma_y
    lam0 = init.u_bar**2 + init.v_bar**2
    steps = int(round(T / dt))

    def trial(lam):
        c = np.sqrt(lam / lam0)
        traj = run_radial_flow(c * init.u_bar, c * init.v_bar, sy, dt, steps,
                               q_specs=(QSpec("RadialSpectralLambda"),))
        states = np.array(traj.snapshots)
        h = sy.size
        u, v = states[:, :h], states[:, h:]
        aborted = bool(np.any(np.sign(v) != np.sign(v[0])))
        t = np.asarray(traj.step, dtype=np.float64) * dt
        sx = u / v
        gap = np.abs(sx - sy)
        excess = gap - gap[0] * np.exp(-t[:, None] / lam)
        loss = np.asarray(traj.loss)
        hit = np.flatnonzero(loss <= threshold * loss[0])
        t_hit = float(t[hit[0]]) if hit.size else float("inf")
        drift = traj.q_drift("lambda") / (lam * math.sqrt(h))
        return t, loss, float(excess.max()), t_hit, drift, aborted

    results = map_trials(trial, lambdas)
    summary = Table(["lambda", "time_to_threshold", "max_bound_excess", "lambda_rel_drift",
                     "aborted"])
    for lam, r in zip(lambdas, results):
        summary.rows.append([lam, r[3], r[2], r[4], r[5]])
    t = results[0][0]
    every = max(1, (t.size - 1) // (rows - 1))
    curves = Table(["t"] + [f"loss_lambda{i}" for i in range(len(lambdas))],
                   [[float(t[j])] + [float(r[1][j]) for r in results]
                    for j in range(0, t.size, every)])
    init_table = Table(["index", "sigma_y", "sigma_x0", "u_bar", "v_bar"],
                       [[i, float(sy[i]), float(init.u_bar[i] / init.v_bar[i]),
                         float(init.u_bar[i]), float(init.v_bar[i])] for i in range(sy.size)])

    live = [(lam, r) for lam, r in zip(lambdas, results) if not r[5]]
    excess = max((r[2] for _, r in live), default=float("inf"))
    if any(r[5] for r in results):
        excess = float("inf")
    order = sorted(live, key=lambda p: p[0])
    times = [r[3] for _, r in order]
    violations = sum(1 for a, b in zip(times, times[1:]) if b < a or math.isinf(a))
    verdicts = [check("exponential_bound", excess, 1e-6, "<=", "summary"),
                check("time_monotone_in_lambda", violations, 0, "==", "summary")]
    config = {"lambda_grid": lambdas, "dt": float(dt), "T": float(T),
              "y_spec": {k: (np.asarray(v).tolist() if k == "Y" else int(v))
                         for k, v in sorted(y_spec.items())},
              "seed": int(seed), "threshold": float(threshold), "rows": int(rows)}
    return ExperimentResult("radial-convergence",
                            {"summary": summary, "curves": curves, "init": init_table},
                            verdicts, config)
