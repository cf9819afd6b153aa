"""The twelve acceptance criteria, each at its stated tolerance and time budget.

Every test prints one PASS/FAIL line; the lines are repeated in the terminal
summary under "acceptance criteria".
"""
import itertools
import math

import numpy as np

from noetherkit.conserved import QSpec, angular_momentum_residual
from noetherkit.experiments import (exp_ellipse, exp_ensemble, exp_hessian_vs_q,
                                    exp_q_init_distribution, exp_radial_convergence)
from noetherkit.flow import (FlowConfig, delta_q_identity, ellipse_problem, integrate, run_gf,
                             increment_q_change, run_radial_flow, trace_q_change)
from noetherkit.network import (Batch, HomogeneousPower, Identity, LeakyReLU, RadialRescale,
                                Sigmoid, Tanh, forward, grad, loss_mse, random_params, two_layer)
from noetherkit.nonlinear import apply_nonlinear_action, equivariance_map_c, r_matrix
from noetherkit.symmetry import (GENERAL_LINEAR, ORTHOGONAL, POSITIVE_DIAGONAL,
                                 HiddenLieElement, PiSpec, apply_linear_action,
                                 check_grad_orthogonality, hidden_lie_basis, lie_basis,
                                 orbit_dimension_empirical, orbit_dimension_formula,
                                 sample_group_element, sample_hidden_group)


def random_batch(rng, widths, k=8):
    return Batch(rng.standard_normal((widths[0], k)), rng.standard_normal((widths[-1], k)))


def random_lie(params, kind, rng):
    mats = []
    for n in params.widths[1:-1]:
        mats.append(sum(rng.standard_normal() * e for e in lie_basis(kind, n)))
    return HiddenLieElement.of(mats)


def two_layer_output(U, V, act, x):
    return forward(two_layer(U, V), [act, Identity()], x.reshape(-1, 1)).output.ravel()


# ---------------------------------------------------------------- 1

def test_criterion_01_exact_symmetry_invariance(criterion):
    with criterion(1, "exact-symmetry loss invariance", 5) as c:
        rng = np.random.default_rng(101)
        for act, kind in ((Identity(), GENERAL_LINEAR), (LeakyReLU(0.1), POSITIVE_DIAGONAL),
                          (RadialRescale("inverse_square"), ORTHOGONAL)):
            worst = 0.0
            for _ in range(100):
                widths = [int(rng.integers(1, 6)), int(rng.integers(2, 7)),
                          int(rng.integers(2, 7)), int(rng.integers(1, 6))]
                p = random_params(widths, rng, biases=bool(rng.integers(2)))
                acts = [act, act, Identity()]
                b = random_batch(rng, widths)
                g = sample_hidden_group(p, kind, 0.5, rng)
                L0 = loss_mse(p, acts, b)
                L1 = loss_mse(apply_linear_action(p, g), acts, b)
                worst = max(worst, abs(L1 - L0) / (1.0 + abs(L0)))
            c.check(f"{act}/{kind}", worst <= 1e-9, f"worst {worst:.2e}")
    assert c.passed, c.failures()


# ---------------------------------------------------------------- 2

def test_criterion_02_r_matrix_identities(criterion):
    with criterion(2, "R_z first column, inverse and norm identities", 2) as c:
        rng = np.random.default_rng(102)
        worst = {"first_column": 0.0, "transpose_inverse": 0.0, "norm": 0.0}
        for _ in range(1000):
            h = int(rng.integers(2, 17))
            z = rng.standard_normal(h) * math.exp(rng.uniform(-3, 3))
            R = r_matrix(z)
            r = math.sqrt(float(z @ z))
            worst["first_column"] = max(worst["first_column"],
                                        np.linalg.norm(R.mat[:, 0] - z) / r)
            worst["transpose_inverse"] = max(worst["transpose_inverse"],
                                             np.abs(R.inverse() @ R.mat - np.eye(h)).max())
            worst["norm"] = max(worst["norm"],
                                abs(np.linalg.norm(R.mat, 2) - r) / r,
                                np.abs(R.mat @ R.mat.T / r**2 - np.eye(h)).max())
        for name, value in worst.items():
            c.check(name, value <= 1e-10, f"worst {value:.2e}")
    assert c.passed, c.failures()


# ---------------------------------------------------------------- 3

def test_criterion_03_anchor_invariance_and_cocycle(criterion):
    with criterion(3, "nonlinear action anchor invariance and cocycle", 5) as c:
        rng = np.random.default_rng(103)
        for act in (Sigmoid(), Tanh(), LeakyReLU(0.1)):
            worst = 0.0
            for _ in range(100):
                h, n, m = (int(rng.integers(2, 9)), int(rng.integers(1, 6)),
                           int(rng.integers(1, 5)))
                U, V = rng.standard_normal((m, h)), rng.standard_normal((h, n))
                x = rng.standard_normal(n)
                g = sample_group_element(GENERAL_LINEAR, h, 0.5, rng)
                U2, V2 = apply_nonlinear_action(U, V, x, g, act)
                before = two_layer_output(U, V, act, x)
                after = two_layer_output(U2, V2, act, x)
                worst = max(worst, np.linalg.norm(after - before) / np.linalg.norm(before))
            c.check(f"anchor {act}", worst <= 1e-7, f"worst relative {worst:.2e}")
        worst = 0.0
        for _ in range(100):
            h = int(rng.integers(2, 9))
            z = rng.standard_normal(h)
            g1 = sample_group_element(GENERAL_LINEAR, h, 0.5, rng)
            g2 = sample_group_element(GENERAL_LINEAR, h, 0.5, rng)
            lhs = equivariance_map_c(g1 @ g2, z, Sigmoid())
            rhs = equivariance_map_c(g1, g2 @ z, Sigmoid()) @ equivariance_map_c(g2, z, Sigmoid())
            worst = max(worst, np.linalg.norm(lhs - rhs) / np.linalg.norm(lhs))
        c.check("cocycle", worst <= 1e-9, f"worst relative {worst:.2e}")
    assert c.passed, c.failures()


# ---------------------------------------------------------------- 4

def test_criterion_04_gradient_orthogonality_and_angular_momentum(criterion):
    with criterion(4, "gradient orthogonality and angular-momentum residual", 5) as c:
        rng = np.random.default_rng(104)
        cases = [(Identity(), GENERAL_LINEAR, None), (LeakyReLU(0.2), POSITIVE_DIAGONAL, None),
                 (HomogeneousPower(3.0), POSITIVE_DIAGONAL, 3.0),
                 (RadialRescale("inverse_square"), ORTHOGONAL, None),
                 (RadialRescale("tanh_ratio"), ORTHOGONAL, None)]
        for act, kind, power in cases:
            worst = 0.0
            for _ in range(100):
                widths = [3, int(rng.integers(2, 6)), int(rng.integers(2, 6)), 2]
                p = random_params(widths, rng)
                pi = PiSpec.power(power, 2) if power is not None else None
                b = random_batch(rng, widths)
                M = random_lie(p, kind, rng)
                worst = max(worst, check_grad_orthogonality(p, [act, act, Identity()], b, M, pi))
            c.check(f"orthogonality {act}", worst <= 1e-9, f"worst {worst:.2e}")
        for act in (RadialRescale("inverse_square"), Identity()):
            worst = 0.0
            for _ in range(100):
                widths = [3, int(rng.integers(2, 6)), 2]
                p = random_params(widths, rng)
                G = grad(p, [act, Identity()], random_batch(rng, widths))
                nu = angular_momentum_residual(p.weights[1], p.weights[0], G.weights[1],
                                               G.weights[0])
                worst = max(worst, np.linalg.norm(nu) / (p.norm() * G.norm()))
            c.check(f"angular momentum {act}", worst <= 1e-9, f"worst {worst:.2e}")
    assert c.passed, c.failures()


# ---------------------------------------------------------------- 5

def test_criterion_05_delta_q_identity_and_bound(criterion):
    with criterion(5, "one-step GD change of Q: identity and bound", 2) as c:
        rng = np.random.default_rng(105)
        worst_identity, bound_violations = 0.0, 0
        for _ in range(1000):
            widths = [int(rng.integers(1, 5)), int(rng.integers(1, 6)), int(rng.integers(1, 5))]
            p = random_params(widths, rng)
            b = random_batch(rng, widths)
            eta = float(rng.uniform(1e-3, 0.3))
            G = grad(p, [Identity(), Identity()], b)
            (V, U), (GV, GU) = p.weights, G.weights
            exact, bound = delta_q_identity(U, V, GU, GV, eta)
            step = increment_q_change(U, V, -eta * GU, -eta * GV)
            if bound > 0:
                worst_identity = max(worst_identity, abs(step - exact) / bound)
            step = trace_q_change(U, V, U - eta * GU, V - eta * GV)
            bound_violations += abs(step) > bound * (1 + 1e-12)
        c.check("identity", worst_identity <= 1e-12, f"worst relative {worst_identity:.2e}")
        c.check("bound", bound_violations == 0, f"{bound_violations} violations")
    assert c.passed, c.failures()


# ---------------------------------------------------------------- 6

def _network_drift(act, spec, identity_input=False, biases=False, seed=106):
    rng = np.random.default_rng(seed)
    widths = [3, 4, 2]
    p = random_params(widths, rng, biases=biases)
    X = np.eye(3) if identity_input else rng.standard_normal((3, 5))
    b = Batch(X, rng.standard_normal((2, X.shape[1])))
    cfg = FlowConfig(mode="rk4", step=1e-4, steps=10_000, record_every=500, q_specs=(spec,),
                     gtol=0.0)
    traj = run_gf(p, [act, Identity()], b, cfg)
    return traj.q_drift(spec.name) / spec.scale(p)


def test_criterion_06_conservation_under_rk4(criterion):
    with criterion(6, "conservation under RK4 flow and fourth-order drift", 60) as c:
        cases = [
            ("ImbalanceMatrix", Identity(), QSpec("ImbalanceMatrix"), {"biases": True}),
            ("HomogeneousDiag/LeakyReLU", LeakyReLU(0.2), QSpec("HomogeneousDiag"), {}),
            ("HomogeneousDiag/power", HomogeneousPower(2.0), QSpec("HomogeneousDiag", alpha=2.0),
             {}),
            ("QM", Identity(), QSpec("QM", M=HiddenLieElement.of([np.diag([1.0, 2.0, -1.0, 0.5])])),
             {}),
            ("ElementwiseIntegral", Tanh(), QSpec("ElementwiseIntegral", activation=Tanh()),
             {"identity_input": True}),
        ]
        for label, act, spec, kw in cases:
            d = _network_drift(act, spec, **kw)
            c.check(label, d < 1e-5, f"relative drift {d:.2e}")
        spec = QSpec("RadialSpectralLambda")
        u0, v0 = np.array([0.3, 0.8, 1.0]), np.array([0.5, 0.9, 0.6])
        traj = run_radial_flow(u0, v0, np.array([3.0, 1.5, 0.4]), 1e-4, 10_000, 500, (spec,))
        d = traj.q_drift("lambda") / spec.scale(np.concatenate([u0, v0]))
        c.check("RadialSpectralLambda", d < 1e-5, f"relative drift {d:.2e}")
        spec = QSpec("EllipseQ", a=3.0)
        w0 = np.array([1.2, 0.7])
        traj = integrate(w0, ellipse_problem(3.0),
                         FlowConfig(mode="rk4", step=1e-4, steps=10_000, record_every=500,
                                    q_specs=(spec,), gtol=0.0))
        d = traj.q_drift("ellipse") / spec.scale(w0)
        c.check("EllipseQ", d < 1e-5, f"relative drift {d:.2e}")

        rng = np.random.default_rng(0)
        p = random_params([3, 4, 2], rng)
        b = random_batch(rng, [3, 4, 2], k=5)
        spec = QSpec("ImbalanceMatrix")
        drift = []
        for dt in (0.05, 0.025):
            n = int(round(2.0 / dt))
            traj = run_gf(p, [Identity(), Identity()], b,
                          FlowConfig(step=dt, steps=n, record_every=n, q_specs=(spec,), gtol=0.0))
            drift.append(float(np.linalg.norm(traj.dq["imbalance1"][-1])))
        ratio = drift[0] / drift[1]
        c.check("halving ratio", 12.0 <= ratio <= 21.0, f"ratio {ratio:.1f}")
    assert c.passed, c.failures()


# ---------------------------------------------------------------- 7

def test_criterion_07_xavier_q_distribution(criterion):
    with criterion(7, "Xavier-initialized Q centred at m - h", 30) as c:
        for dims, expected in (((100, 100, 100), 0.0), ((200, 100, 100), 100.0),
                               ((100, 200, 100), -100.0)):
            res = exp_q_init_distribution(*dims, samples=1000, seed=7)
            row = [r for r in res.tables["summary"].rows if r[0] == "trace"][0]
            _, mean, se, exp_mean, z = row
            c.check(f"{dims}", exp_mean == expected and abs(z) <= 4.0,
                    f"mean {mean:.2f} expected {expected:g} z {z:.2f}")
    assert c.passed, c.failures()


# ---------------------------------------------------------------- 8

CLASS_KIND = {"FullGL": GENERAL_LINEAR, "PositiveDiagonal": POSITIVE_DIAGONAL,
              "Orthogonal": ORTHOGONAL}


def test_criterion_08_orbit_dimension_formula(criterion):
    with criterion(8, "orbit dimension: formula against Jacobian rank", 60) as c:
        rng = np.random.default_rng(108)
        mismatches = []
        for cls, (n, h, m) in itertools.product(CLASS_KIND, itertools.product(range(1, 5),
                                                                               repeat=3)):
            formula = orbit_dimension_formula(cls, n, h, m)
            ranks = set()
            for _ in range(5):
                p = random_params([n, h, m], rng)
                ranks.add(orbit_dimension_empirical(p, hidden_lie_basis(p, CLASS_KIND[cls])))
            if ranks != {formula}:
                mismatches.append(f"{cls}{(n, h, m)} formula {formula} rank {sorted(ranks)}")
        c.check("all 192 cells", not mismatches,
                f"{len(mismatches)} cells disagree, e.g. " + ", ".join(mismatches[:3]))
    assert c.passed, c.failures()


# ---------------------------------------------------------------- 9

def test_criterion_09_hessian_sharpness(criterion):
    with criterion(9, "Hessian spectrum at trained minima", 600) as c:
        res = exp_hessian_vs_q(dims=(5, 50, 10), q_grid=[0.0], one_d_q=(0.0, 1.0, 3.0), seed=0)
        one_d = res.tables["one_d"]
        for q, err in zip(one_d.column("q"), one_d.column("abs_error")):
            c.check(f"1D Q={q:g}", err <= 1e-3, f"error {err:.2e}")
        multi = res.tables["multi"].rows[0]
        cols = res.tables["multi"].columns
        row = dict(zip(cols, multi))
        c.check("700 of 750 near zero", row["n_params"] == 750 and row["near_zero"] == 700,
                f"{row['near_zero']} of {row['n_params']}")
    assert c.passed, c.failures()


# ---------------------------------------------------------------- 10

def test_criterion_10_radial_convergence(criterion):
    with criterion(10, "radial spectral convergence bound and lambda ordering", 30) as c:
        res = exp_radial_convergence([0.5, 1.0, 2.0, 4.0], seed=0)
        for v in res.verdicts:
            c.check(v.name, v.passed, f"value {v.value:.3g}")
        times = res.tables["summary"].column("time_to_threshold")
        c.check("ordered times", times == sorted(times) and all(map(math.isfinite, times)),
                f"{times}")
    assert c.passed, c.failures()


# ---------------------------------------------------------------- 11

def test_criterion_11_ellipse(criterion):
    with criterion(11, "ellipse loss curves against Q", 10) as c:
        grid = [0.5, 1.0, 2.0, 4.0]
        circle = exp_ellipse(1.0, grid)
        ellipse = exp_ellipse(3.0, grid)
        v = circle.verdict("loss_independent_of_q")
        c.check("a=1 spread", v.passed, f"{v.value:.2e}")
        v = ellipse.verdict("loss_depends_on_q")
        c.check("a=3 spread", v.passed, f"{v.value:.2e}")
        for name, res in (("a=1", circle), ("a=3", ellipse)):
            v = res.verdict("rk4_matches_closed_form")
            c.check(f"{name} closed form", v.passed, f"{v.value:.2e}")
    assert c.passed, c.failures()


# ---------------------------------------------------------------- 12

def test_criterion_12_ensemble_mechanism(criterion, tmp_path):
    with criterion(12, "ensemble mechanism and determinism", 120) as c:
        first = exp_ensemble(seed=0)
        for name in ("eps0_identical_to_base", "group_drop_at_smallest_eps_pct",
                     "group_preserves_anchor_output"):
            v = first.verdict(name)
            c.check(name, v.passed, f"{v.value:.3g}")
        c.check("fgsm table", len(first.tables["fgsm"].rows) > 0, "empty")
        a = first.write(tmp_path / "a")
        b = exp_ensemble(seed=0).write(tmp_path / "b")
        same = all((tmp_path / "a" / "ensemble" / "tables" / f).read_bytes()
                   == (tmp_path / "b" / "ensemble" / "tables" / f).read_bytes()
                   for f in ("clean.csv", "fgsm.csv", "anchor.csv"))
        c.check("byte-identical tables", same and a != b, "tables differ between runs")
    assert c.passed, c.failures()
