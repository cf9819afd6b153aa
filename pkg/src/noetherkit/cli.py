"""noetherkit <subcommand> --config <path> [--seed N] [--out DIR] [-v]

Exit codes: 0 all checks pass, 1 a verdict failed, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings

import numpy as np

from . import experiments
from .conserved import QSpec
from .experiments._core import max_workers
from .experiments.hessian import move_to_q, trace_q
from .flow import DivergenceError, FlowConfig, run_gd, run_gf
from .io import atomic_write_text, write_csv
from .network import (FULL_GL, ORTHOGONAL, POSITIVE_DIAGONAL, Batch, forward, load_model,
                      loss_mse, model_to_json, random_params)
from .nonlinear import DegenerateLocusError, apply_nonlinear_action_deep
from .symmetry import (GENERAL_LINEAR, HiddenLieElement, PiSpec, apply_linear_action,
                       check_equivariance, check_grad_orthogonality, hidden_lie_basis,
                       in_full_rank_locus, lie_basis, orbit_dimension_empirical,
                       orbit_dimension_formula, orbit_dimension_generic,
                       sample_group_element, sample_hidden_group)

log = logging.getLogger("noetherkit")

SUBCOMMANDS = ("check", "orbit-dim", "flow", "qscan", "ensemble", "experiment")
CLASS_TO_KIND = {FULL_GL: GENERAL_LINEAR, POSITIVE_DIAGONAL: POSITIVE_DIAGONAL,
                 ORTHOGONAL: ORTHOGONAL}
ORBIT_RESAMPLE_BUDGET = 20


class ConfigError(ValueError):
    pass


def _strict(cfg, required, optional, where="config"):
    if not isinstance(cfg, dict):
        raise ConfigError(f"{where} must be a JSON object")
    missing = [k for k in required if k not in cfg]
    if missing:
        raise ConfigError(f"{where} is missing {missing}")
    extra = set(cfg) - set(required) - set(optional)
    if extra:
        raise ConfigError(f"unknown {where} keys {sorted(extra)}")
    return cfg


def _print_table(columns, rows, stream=None):
    stream = stream or sys.stdout
    cells = [[str(c) for c in columns]] + [[_cell(v) for v in row] for row in rows]
    widths = [max(len(r[j]) for r in cells) for j in range(len(columns))]
    for r in cells:
        print("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip(), file=stream)


def _cell(v):
    if isinstance(v, bool):
        return "PASS" if v else "FAIL"
    if isinstance(v, float):
        return f"{v:.3e}"
    return str(v)


def _data(spec, params, rng):
    """A batch from explicit arrays or Gaussian draws sized to the model."""
    _strict(spec, [], ["X", "Y", "samples"], "data")
    if "X" in spec or "Y" in spec:
        if not ("X" in spec and "Y" in spec):
            raise ConfigError("data needs both X and Y")
        return Batch(np.asarray(spec["X"], dtype=np.float64),
                     np.asarray(spec["Y"], dtype=np.float64))
    k = int(spec.get("samples", 16))
    return Batch(rng.standard_normal((params.widths[0], k)),
                 rng.standard_normal((params.widths[-1], k)))


def _pi_for(acts, kind):
    powers = []
    for act in acts[:-1]:
        if kind == POSITIVE_DIAGONAL and act.kind == "HomogeneousPower":
            powers.append(act.alpha)
        else:
            powers.append(None)
    return PiSpec(tuple(powers))


# ---------------------------------------------------------------- check

CHECK_TOL = {"loss_invariance": 1e-9, "equivariance": 1e-9, "grad_orthogonality": 1e-9,
             "anchor_invariance": 1e-7}


def run_check(cfg, seed=None):
    _strict(cfg, ["model", "group"], ["trials", "spread", "data", "seed", "out"])
    kind = cfg["group"]
    if kind not in CLASS_TO_KIND.values():
        raise ConfigError(f"group must be one of {sorted(CLASS_TO_KIND.values())}")
    params, acts = _load(cfg["model"])
    if params.depth < 2:
        raise ConfigError("the model needs at least one hidden layer")
    trials = int(cfg.get("trials", 20))
    spread = float(cfg.get("spread", 0.5))
    rng = np.random.default_rng(_seed(cfg, seed))
    batch = _data(cfg.get("data", {}), params, rng)
    pi = _pi_for(acts, kind)
    worst = dict.fromkeys(CHECK_TOL, 0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        L0 = loss_mse(params, acts, batch)
        for _ in range(trials):
            g = sample_hidden_group(params, kind, spread, rng)
            L1 = loss_mse(apply_linear_action(params, g, pi), acts, batch)
            worst["loss_invariance"] = max(worst["loss_invariance"],
                                           abs(L1 - L0) / (1.0 + abs(L0)))
            for act, gm, p in zip(acts[:-1], g.mats, pi.powers):
                worst["equivariance"] = max(worst["equivariance"],
                                            check_equivariance(act, gm, p, 10, rng))
            M = _random_lie(params, kind, rng)
            worst["grad_orthogonality"] = max(worst["grad_orthogonality"],
                                              check_grad_orthogonality(params, acts, batch, M, pi))
            worst["anchor_invariance"] = max(worst["anchor_invariance"],
                                             _anchor_trial(params, acts, spread, rng))
    rows = [[name, worst[name], CHECK_TOL[name], bool(worst[name] <= CHECK_TOL[name])]
            for name in CHECK_TOL]
    _print_table(["suite", "worst", "tolerance", "verdict"], rows)
    return 0 if all(r[3] for r in rows) else 1


def _random_lie(params, kind, rng):
    hidden = params.widths[1:-1]
    mats = []
    for n in hidden:
        basis = lie_basis(kind, n, "all")
        mats.append(sum(rng.standard_normal() * b for b in basis))
    return HiddenLieElement.of(mats)


def _anchor_trial(params, acts, spread, rng, budget=50):
    """Relative output change at the anchor under the nonlinear action of random GL elements."""
    gs = [sample_group_element(GENERAL_LINEAR, n, spread, rng) for n in params.widths[1:-1]]
    for _ in range(budget):
        x = rng.standard_normal(params.widths[0])
        try:
            moved = apply_nonlinear_action_deep(params, acts, x, gs)
        except DegenerateLocusError:
            continue
        y0 = forward(params, acts, x).output
        y1 = forward(moved, acts, x).output
        return float(np.linalg.norm(y1 - y0) / max(np.linalg.norm(y0), 1e-300))
    raise RuntimeError(f"no non-degenerate anchor after {budget} draws")


# ---------------------------------------------------------------- orbit-dim

def run_orbit_dim(n, h, m, cls, trials=5, seed=0):
    if min(n, h, m) < 1:
        raise ConfigError("dimensions must be >= 1")
    if cls not in CLASS_TO_KIND:
        raise ConfigError(f"class must be one of {sorted(CLASS_TO_KIND)}")
    rng = np.random.default_rng(seed)
    formula = orbit_dimension_formula(cls, n, h, m)
    generic = orbit_dimension_generic(cls, n, h, m)
    rows = []
    for t in range(trials):
        for _ in range(ORBIT_RESAMPLE_BUDGET):
            params = random_params([n, h, m], rng)
            if in_full_rank_locus(params):
                break
        else:
            raise RuntimeError(f"no full-rank point after {ORBIT_RESAMPLE_BUDGET} draws")
        rank = orbit_dimension_empirical(params, hidden_lie_basis(params, CLASS_TO_KIND[cls]))
        rows.append([t, formula, rank, rank == formula])
    print(f"class={cls} (n,h,m)=({n},{h},{m}) formula={formula} stabilizer_count={generic}")
    _print_table(["trial", "formula", "empirical", "agree"], rows)
    return 0 if all(r[3] for r in rows) else 1


def cmd_orbit_dim(cfg, seed=None):
    _strict(cfg, ["n", "h", "m", "class"], ["trials", "seed", "out"])
    return run_orbit_dim(int(cfg["n"]), int(cfg["h"]), int(cfg["m"]), cfg["class"],
                         int(cfg.get("trials", 5)), _seed(cfg, seed))


# ---------------------------------------------------------------- flow / qscan

FLOW_KEYS = ["mode", "step", "steps", "record_every", "convention", "q_specs", "gtol"]


def _flow_config(cfg):
    specs = tuple(QSpec.from_dict(d) for d in cfg.get("q_specs", []))
    return FlowConfig(mode=cfg.get("mode", "gd"), step=float(cfg.get("step", 1e-2)),
                      steps=int(cfg.get("steps", 1000)),
                      record_every=int(cfg.get("record_every", 1)), q_specs=specs,
                      gtol=float(cfg.get("gtol", 1e-12)),
                      convention=cfg.get("convention", "mean"))


def run_flow(cfg, seed=None, out=None):
    _strict(cfg, ["model"], FLOW_KEYS + ["data", "seed", "out"])
    params, acts = _load(cfg["model"])
    rng = np.random.default_rng(_seed(cfg, seed))
    batch = _data(cfg.get("data", {}), params, rng)
    fc = _flow_config(cfg)
    log.info("%s flow: %d steps of %g", fc.mode, fc.steps, fc.step)
    traj = (run_gd if fc.mode == "gd" else run_gf)(params, acts, batch, fc)
    root = os.path.join(_out(cfg, out), "flow")
    traj.to_csv(os.path.join(root, "trajectory.csv"))
    atomic_write_text(os.path.join(root, "final_model.json"), model_to_json(traj.final_state, acts))
    print(f"steps={traj.step[-1]} loss={traj.loss[-1]:.6e} grad_norm={traj.grad_norm[-1]:.3e} "
          f"stopped={traj.stopped} -> {root}")
    return 0


def run_qscan(cfg, seed=None, out=None):
    """Move a two-layer model along g = cI to each target Tr[U^T U - V V^T], then flow."""
    _strict(cfg, ["model", "q_values"], FLOW_KEYS + ["data", "seed", "out"])
    params, acts = _load(cfg["model"])
    if params.depth != 2:
        raise ConfigError("qscan needs a two-layer model")
    if acts[0].equivariance_class not in (FULL_GL, POSITIVE_DIAGONAL):
        raise ConfigError("qscan rescales the hidden layer, which needs a "
                          "scale-equivariant activation")
    if params.biases is not None:
        raise ConfigError("qscan needs a bias-free model")
    q_values = [float(q) for q in cfg["q_values"]]
    if not q_values:
        raise ConfigError("q_values must be non-empty")
    rng = np.random.default_rng(_seed(cfg, seed))
    batch = _data(cfg.get("data", {}), params, rng)
    fc = _flow_config(cfg)
    root = os.path.join(_out(cfg, out), "qscan")
    L_ref = loss_mse(params, acts, batch, fc.convention)
    rows, worst = [], 0.0
    for i, q in enumerate(q_values):
        moved = move_to_q(params, q)
        traj = (run_gd if fc.mode == "gd" else run_gf)(moved, acts, batch, fc)
        traj.to_csv(os.path.join(root, f"trajectory_q{i}.csv"))
        worst = max(worst, abs(traj.loss[0] - L_ref) / (1.0 + abs(L_ref)))
        rows.append([q, trace_q(moved), traj.loss[0], traj.loss[-1], traj.step[-1]])
    write_csv(os.path.join(root, "summary.csv"),
              ["q_target", "q_start", "loss_start", "loss_final", "steps"], rows)
    _print_table(["q_target", "q_start", "loss_start", "loss_final", "steps"], rows)
    ok = worst <= 1e-9
    print(f"start-loss invariance across Q: {worst:.3e} ({'PASS' if ok else 'FAIL'})")
    return 0 if ok else 1


# ---------------------------------------------------------------- experiments

def run_experiment(name, cfg, seed=None, out=None):
    cfg = dict(cfg)
    if "experiment" in cfg and cfg["experiment"] != name:
        raise ConfigError(f"config is for {cfg['experiment']!r}, not {name!r}")
    cfg["experiment"] = name
    if seed is not None:
        cfg["seed"] = seed
    if out is not None:
        cfg["out"] = out
    try:
        ec = experiments.ExperimentConfig.from_dict(cfg)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    log.info("running %s with seed %d", name, ec.seed)
    result = experiments.run(ec)
    root = result.write(ec.out)
    _print_table(["verdict", "value", "threshold", "asserted", "result"],
                 [[v.name, v.value, v.threshold, "yes" if v.asserted else "no", v.passed]
                  for v in result.verdicts])
    print(f"-> {root}")
    return 0 if result.passed else 1


def cmd_ensemble(cfg, seed=None, out=None):
    _strict(cfg, ["seed"] if seed is None else [],
            ["base_model_cfg", "eps_grid", "n_transforms", "baselines", "attack_cfg",
             "seed", "out"])
    params = {k: v for k, v in cfg.items() if k not in ("seed", "out")}
    body = {"seed": cfg.get("seed", seed), "params": params}
    if cfg.get("out") is not None:
        body["out"] = cfg["out"]
    return run_experiment("ensemble", body, seed, out)


# ---------------------------------------------------------------- plumbing

def _seed(cfg, override):
    s = override if override is not None else cfg.get("seed", 0)
    if isinstance(s, bool) or not isinstance(s, int):
        raise ConfigError("seed must be an integer")
    return s


def _out(cfg, override):
    return override if override is not None else cfg.get("out", "runs")


def _load(path):
    try:
        return load_model(path)
    except OSError as e:
        raise ConfigError(f"cannot read model {path!r}: {e}") from None
    except (ValueError, KeyError, TypeError) as e:
        raise ConfigError(f"bad model file {path!r}: {e}") from None


def _read_config(path):
    if path is None:
        raise ConfigError("--config is required")
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path!r}: {e.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path!r} is not valid JSON: {e}") from None


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="override the output directory")
    common.add_argument("-v", "--verbose", action="count", default=0)
    parser = argparse.ArgumentParser(prog="noetherkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("check", parents=[common], help="symmetry and anchor-invariance checks")
    sub.add_parser("orbit-dim", parents=[common], help="orbit dimension: formula vs rank")
    sub.add_parser("flow", parents=[common], help="GD or RK4 flow with a trajectory CSV")
    sub.add_parser("qscan", parents=[common], help="flows started at several Q on one orbit")
    sub.add_parser("ensemble", parents=[common], help="transformed-model ensemble study")
    exp = sub.add_parser("experiment", parents=[common], help="run a registered experiment")
    exp.add_argument("name", choices=sorted(experiments.REGISTRY))
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(message)s")
    try:
        max_workers()
        cfg = _read_config(args.config)
        if args.command == "check":
            return run_check(cfg, args.seed)
        if args.command == "orbit-dim":
            return cmd_orbit_dim(cfg, args.seed)
        if args.command == "flow":
            return run_flow(cfg, args.seed, args.out)
        if args.command == "qscan":
            return run_qscan(cfg, args.seed, args.out)
        if args.command == "ensemble":
            return cmd_ensemble(cfg, args.seed, args.out)
        return run_experiment(args.name, cfg, args.seed, args.out)
    except ConfigError as e:
        print(f"noetherkit: config error: {e}", file=sys.stderr)
        return 2
    except DivergenceError as e:
        print(f"noetherkit: {e}", file=sys.stderr)
        return 1
    except (ValueError, TypeError, KeyError) as e:
        print(f"noetherkit: invalid input: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
