"""Ensembles of transformed copies of one trained classifier, clean and under FGSM.

Each member is obtained from the trained weights by g = I + eps M acting on
the hidden layer.  The "group" members use the data-dependent nonlinear action,
which keeps the output at its anchor input unchanged; the other methods are
random transformations of the same size used as baselines.
"""
import math

import numpy as np

from .. import linalg
from ..flow import DivergenceError
from ..network import (Batch, Identity, LeakyReLU, MlpParams, forward, input_grad,
                       random_params, value_and_grad)
from ..nonlinear import DegenerateLocusError, apply_nonlinear_action, pseudo_pi
from ._core import ExperimentResult, Table, check, require_grid, trial_rng

METHODS = ("group", "g_inverse", "random", "shuffle", "perm_interp")
BASE_DEFAULTS = {"classes": 3, "dim": 5, "hidden": 16, "n_train": 300, "n_test": 300,
                 "n_holdout": 50, "radius": 4.0, "noise": 1.0, "slope": 0.1, "lr": 0.02,
                 "steps": 2000}
ANCHOR_BUDGET = 50


def fgsm_attack(model: MlpParams, acts, x, y, eps_atk):
    """x + eps_atk * sign(grad_x L) for the mean squared error against y."""
    if eps_atk < 0:
        raise ValueError("attack strength must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    if eps_atk == 0:
        return x.copy()
    return x + eps_atk * np.sign(input_grad(model, acts, Batch(x, y)))


def make_blobs(rng, classes, dim, count, radius, noise, centers=None):
    if centers is None:
        centers = rng.standard_normal((dim, classes))
        centers *= radius / np.linalg.norm(centers, axis=0)
    labels = rng.integers(0, classes, count)
    X = centers[:, labels] + noise * rng.standard_normal((dim, count))
    Y = np.zeros((classes, count))
    Y[labels, np.arange(count)] = 1.0
    return X, Y, labels, centers


def predict(params, acts, X):
    return np.argmax(forward(params, acts, X).output, axis=0)


def majority_vote(preds, classes):
    """Mode of the member predictions per column; ties go to the lowest class."""
    preds = np.asarray(preds)
    counts = np.zeros((classes, preds.shape[1]), dtype=np.int64)
    for row in preds:
        np.add.at(counts, (row, np.arange(preds.shape[1])), 1)
    return np.argmax(counts, axis=0)


def transform(method, U, V, g, eps, act, anchor, H, rng):
    h = g.shape[0]
    if method == "group":
        return apply_nonlinear_action(U, V, anchor, g, act)
    if method == "g_inverse":
        return U @ linalg.inverse(g), g @ V
    if method == "random":
        return U @ (np.eye(h) + eps * np.diag(rng.standard_normal(h))), g @ V
    if method == "shuffle":
        pi = pseudo_pi(g, H, act)
        return U @ rng.permutation(pi.ravel()).reshape(pi.shape), g @ V
    if method == "perm_interp":
        S = np.eye(h)[rng.permutation(h)]
        P = (np.eye(h) + 0.5 * eps * (np.eye(h) + S)) / (1.0 + eps)
        return U @ linalg.inverse(P), P @ V
    raise ValueError(f"unknown method {method!r}; use one of {METHODS}")


def _base_config(cfg):
    cfg = dict(cfg or {})
    extra = set(cfg) - set(BASE_DEFAULTS)
    if extra:
        raise ValueError(f"unknown base_model_cfg keys {sorted(extra)}")
    return {**BASE_DEFAULTS, **cfg}


def exp_ensemble(base_model_cfg=None, eps_grid=(0.0, 0.01, 0.05, 0.1, 0.3), n_transforms=9,
                 baselines=("g_inverse", "random", "shuffle", "perm_interp"),
                 attack_cfg=None, seed=0):
    bc = _base_config(base_model_cfg)
    eps_grid = [float(e) for e in require_grid("eps_grid", eps_grid)]
    if any(e < 0 for e in eps_grid):
        raise ValueError("eps values must be >= 0")
    baselines = list(baselines)
    for b in baselines:
        if b not in METHODS or b == "group":
            raise ValueError(f"unknown baseline {b!r}")
    attack_cfg = dict(attack_cfg or {"eps": [0.0, 0.1, 0.2, 0.4]})
    if set(attack_cfg) - {"eps"}:
        raise ValueError(f"unknown attack_cfg keys {sorted(set(attack_cfg) - {'eps'})}")
    attacks = [float(e) for e in require_grid("attack eps", attack_cfg["eps"])]
    methods = ["group"] + baselines
    C = int(bc["classes"])

    rng = trial_rng(seed, 0)
    X, Y, _, centers = make_blobs(rng, C, bc["dim"], bc["n_train"], bc["radius"], bc["noise"])
    Xt, Yt, yt, _ = make_blobs(rng, C, bc["dim"], bc["n_test"], bc["radius"], bc["noise"],
                               centers)
    Xh = make_blobs(rng, C, bc["dim"], bc["n_holdout"], bc["radius"], bc["noise"], centers)[0]
    act = LeakyReLU(bc["slope"])
    acts = [act, Identity()]
    params = random_params([bc["dim"], bc["hidden"], C], rng)
    batch = Batch(X, Y)
    for step in range(int(bc["steps"])):
        loss, g = value_and_grad(params, acts, batch)
        if not math.isfinite(loss):
            raise DivergenceError(step, params, float("nan"))
        params = params - g.scale(bc["lr"])
    V, U = params.weights

    adv = {a: fgsm_attack(params, acts, Xt, Yt, a) for a in attacks}
    base_acc = {a: float(np.mean(predict(params, acts, adv[a]) == yt)) for a in attacks}
    clean = Table(["method", "eps", "accuracy", "base_accuracy", "identical_to_base"])
    fgsm = Table(["method", "eps", "attack_eps", "accuracy"])
    for a in attacks:
        fgsm.rows.append(["base", 0.0, a, base_acc[a]])
    anchor = Table(["eps", "member", "anchor_rel_change"])
    eps0_mismatch = 0
    H = V @ Xh
    base_pred = predict(params, acts, Xt)
    base_clean = float(np.mean(base_pred == yt))

    for ei, eps in enumerate(eps_grid):
        members = {m: [] for m in methods}
        for t in range(n_transforms):
            r = trial_rng(seed, 1, ei, t)
            M = r.standard_normal((bc["hidden"], bc["hidden"])) / math.sqrt(bc["hidden"])
            g = np.eye(bc["hidden"]) + eps * M
            order = r.permutation(Xh.shape[1])[:ANCHOR_BUDGET]
            for tries, j in enumerate(order):
                x0 = Xh[:, j]
                try:
                    U2, V2 = apply_nonlinear_action(U, V, x0, g, act)
                    break
                except DegenerateLocusError:
                    if tries == len(order) - 1:
                        raise
            members["group"].append(MlpParams([V2, U2]))
            out0 = forward(params, acts, x0).output
            out1 = forward(members["group"][-1], acts, x0).output
            anchor.rows.append([eps, t, float(np.linalg.norm(out1 - out0) /
                                              max(np.linalg.norm(out0), 1e-300))])
            for mi, m in enumerate(baselines):
                U2, V2 = transform(m, U, V, g, eps, act, x0, H, trial_rng(seed, 2, ei, t, mi))
                members[m].append(MlpParams([V2, U2]))
        for m in methods:
            vote = majority_vote([predict(p, acts, Xt) for p in members[m]], C)
            same = (all(p.equal(params) for p in members[m])
                    and bool(np.array_equal(vote, base_pred)))
            if eps == 0.0 and m == "group" and not same:
                eps0_mismatch += 1
            clean.rows.append([m, eps, float(np.mean(vote == yt)), base_clean, same])
            for a in attacks:
                vote = majority_vote([predict(p, acts, adv[a]) for p in members[m]], C)
                fgsm.rows.append([m, eps, a, float(np.mean(vote == yt))])

    acc = {(r[0], r[1]): r[2] for r in clean.rows}
    positive = [e for e in eps_grid if e > 0]
    verdicts = []
    if 0.0 in eps_grid:
        verdicts.append(check("eps0_identical_to_base", eps0_mismatch, 0, "==", "clean"))
    anchor_worst = max((r[2] for r in anchor.rows), default=0.0)
    verdicts.append(check("group_preserves_anchor_output", anchor_worst, 1e-7, "<=", "anchor"))
    if positive:
        e0 = min(positive)
        drop = 100.0 * (base_clean - acc[("group", e0)])
        verdicts.append(check("group_drop_at_smallest_eps_pct", drop, 1.0, "<=", "clean"))
        for e in positive:
            gap = min((acc[("group", e)] - acc[(b, e)] for b in baselines), default=0.0)
            verdicts.append(check(f"group_not_below_baselines_eps_{e:g}", gap, 0.0, ">=",
                                  "clean", asserted=(e == e0)))
    config = {"base_model_cfg": bc, "eps_grid": eps_grid, "n_transforms": int(n_transforms),
              "baselines": baselines, "attack_cfg": {"eps": attacks}, "seed": int(seed)}
    return ExperimentResult("ensemble", {"clean": clean, "fgsm": fgsm, "anchor": anchor},
                            verdicts, config)
