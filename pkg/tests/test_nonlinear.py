import math

import numpy as np
import pytest

from noetherkit.network import (Identity, LeakyReLU, MlpParams, Sigmoid, Tanh, forward,
                                random_params, two_layer)
from noetherkit.nonlinear import (DegenerateLocusError, apply_nonlinear_action,
                                  apply_nonlinear_action_deep, equivariance_map_c,
                                  lipschitz_bound, pseudo_pi, r_matrix, r_matrix_entrywise,
                                  rotation_from_angles, spherical_coordinates)
from noetherkit.symmetry import GENERAL_LINEAR, sample_group_element


def invertible(h, rng, spread=0.5):
    return sample_group_element(GENERAL_LINEAR, h, spread, rng)


def output(U, V, act, x):
    return forward(two_layer(U, V), [act, Identity()], np.asarray(x).reshape(-1, 1)).output.ravel()


# ---------------------------------------------------------------- spherical frame

def test_spherical_examples():
    sc = spherical_coordinates([1.0, 0.0, 0.0, 0.0])
    assert sc.r == 1.0 and np.array_equal(sc.angles, np.zeros(3))
    sc = spherical_coordinates([0.0, 1.0])
    assert sc.r == 1.0 and sc.angles[0] == pytest.approx(math.pi / 2, abs=1e-15)
    sc = spherical_coordinates([3.0, 4.0])
    assert sc.r == 5.0 and sc.angles[0] == pytest.approx(0.9273, abs=1e-4)


@pytest.mark.parametrize("h", [2, 3, 5, 9])
def test_spherical_reconstruction(h):
    rng = np.random.default_rng(h)
    for _ in range(50):
        z = rng.standard_normal(h)
        assert np.allclose(spherical_coordinates(z).to_cartesian(), z, atol=1e-13)


def test_spherical_tail_zero_keeps_sign():
    z = np.array([-2.0, 0.0, 0.0])
    assert np.allclose(spherical_coordinates(z).to_cartesian(), z)
    with pytest.raises(ValueError):
        spherical_coordinates(np.zeros(3))


def test_rotation_examples():
    assert np.array_equal(rotation_from_angles([0.0]), np.eye(2))
    assert np.allclose(rotation_from_angles([math.pi / 2]), [[0.0, -1.0], [1.0, 0.0]],
                       atol=1e-15)


def test_rotation_three_by_three_form():
    b1, b2 = np.random.default_rng(0).uniform(0, math.pi, 2)
    s1, c1, s2, c2 = math.sin(b1), math.cos(b1), math.sin(b2), math.cos(b2)
    expected = [[c1, -s1, 0.0], [s1 * c2, c1 * c2, -s2], [s1 * s2, c1 * s2, c2]]
    assert np.allclose(rotation_from_angles([b1, b2]), expected, atol=1e-15)


def test_rotation_is_orthogonal():
    rng = np.random.default_rng(1)
    for n in range(1, 10):
        R = rotation_from_angles(rng.uniform(-3, 3, n))
        assert np.allclose(R.T @ R, np.eye(n + 1), atol=1e-13)


def test_r_matrix_examples():
    assert np.allclose(r_matrix([1.0, 0.0, 0.0]).mat, np.eye(3))
    assert np.allclose(r_matrix([3.0, 4.0]).mat, [[3.0, -4.0], [4.0, 3.0]], atol=1e-14)


def test_r_matrix_invariants():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        h = int(rng.integers(2, 17))
        z = rng.standard_normal(h) * rng.uniform(0.1, 10)
        R = r_matrix(z)
        r2 = float(z @ z)
        assert np.allclose(R.mat[:, 0], z, rtol=1e-10, atol=1e-10 * math.sqrt(r2))
        assert np.allclose(R.mat @ R.mat.T / r2, np.eye(h), atol=1e-10)
        assert np.allclose(R.inverse() @ R.mat, np.eye(h), atol=1e-10)


def test_r_matrix_entry_formula_on_generic_branch():
    rng = np.random.default_rng(3)
    for h in (2, 3, 6):
        z = rng.standard_normal(h)
        assert np.allclose(r_matrix_entrywise(z), r_matrix(z).mat, atol=1e-10)


def test_r_matrix_rejects_zero():
    with pytest.raises(DegenerateLocusError):
        r_matrix(np.zeros(4))


# ---------------------------------------------------------------- nonlinear action

def sigmoid_instance(seed, h=4, n=3, m=2):
    rng = np.random.default_rng(seed)
    return (rng, rng.standard_normal((m, h)), rng.standard_normal((h, n)),
            rng.standard_normal(n), invertible(h, rng))


def test_identity_g_is_noop():
    _, U, V, x, _ = sigmoid_instance(0)
    U2, V2 = apply_nonlinear_action(U, V, x, np.eye(4), Sigmoid())
    assert np.array_equal(U2, U) and np.array_equal(V2, V)


@pytest.mark.parametrize("act", [Sigmoid(), Tanh(), LeakyReLU(0.1)], ids=str)
def test_anchor_output_preserved(act):
    for seed in range(20):
        _, U, V, x, g = sigmoid_instance(seed)
        U2, V2 = apply_nonlinear_action(U, V, x, g, act)
        before, after = output(U, V, act, x), output(U2, V2, act, x)
        assert np.linalg.norm(after - before) <= 1e-8 * max(1.0, np.linalg.norm(before))


def test_other_inputs_generally_change():
    rng, U, V, x, g = sigmoid_instance(7)
    U2, V2 = apply_nonlinear_action(U, V, x, g, Sigmoid())
    other = rng.standard_normal(3)
    assert np.linalg.norm(output(U2, V2, Sigmoid(), other) - output(U, V, Sigmoid(), other)) > 1e-6


def test_action_axioms():
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        h = int(rng.integers(2, 9))
        for act in (Sigmoid(), Tanh()):
            U, V = rng.standard_normal((2, h)), rng.standard_normal((h, 3))
            x = rng.standard_normal(3)
            g1, g2 = invertible(h, rng, 0.3), invertible(h, rng, 0.3)
            step = apply_nonlinear_action(*apply_nonlinear_action(U, V, x, g2, act), x, g1, act)
            once = apply_nonlinear_action(U, V, x, g1 @ g2, act)
            assert np.allclose(step[0], once[0], atol=1e-8) and np.allclose(step[1], once[1])


def test_degenerate_anchor_raises():
    U, V = np.ones((1, 2)), np.ones((2, 2))
    with pytest.raises(DegenerateLocusError):
        apply_nonlinear_action(U, V, np.zeros(2), 2.0 * np.eye(2), Tanh())


def test_deep_identity_and_anchor():
    rng = np.random.default_rng(11)
    p = random_params([3, 4, 5, 2], rng, biases=True)
    acts = [Sigmoid(), Tanh(), Identity()]
    x = rng.standard_normal(3)
    assert apply_nonlinear_action_deep(p, acts, x, [np.eye(4), np.eye(5)]).equal(p)
    gs = [invertible(4, rng), invertible(5, rng)]
    q = apply_nonlinear_action_deep(p, acts, x, gs)
    before = forward(p, acts, x.reshape(-1, 1))
    after = forward(q, acts, x.reshape(-1, 1))
    assert np.allclose(after.output, before.output, rtol=1e-7, atol=1e-9)
    for g, z0, z1 in zip(gs, before.pre, after.pre):
        assert np.allclose(z1, g @ z0, atol=1e-9)


def test_deep_shape_mismatch():
    p = random_params([2, 3, 1], np.random.default_rng(0))
    with pytest.raises(ValueError):
        apply_nonlinear_action_deep(p, [Sigmoid(), Identity()], np.ones(2), [np.eye(2)])


def test_deep_matches_two_layer():
    rng, U, V, x, g = sigmoid_instance(5)
    q = apply_nonlinear_action_deep(MlpParams([V, U]), [Sigmoid(), Identity()], x, [g])
    U2, V2 = apply_nonlinear_action(U, V, x, g, Sigmoid())
    assert np.allclose(q.weights[1], U2, atol=1e-12) and np.allclose(q.weights[0], V2)


# ---------------------------------------------------------------- c(g, z)

def test_c_identity_and_equivariance():
    rng = np.random.default_rng(4)
    z = rng.standard_normal(3)
    assert np.allclose(equivariance_map_c(np.eye(3), z, Sigmoid()), np.eye(3), atol=1e-12)
    g = invertible(3, rng)
    sig = lambda v: 1 / (1 + np.exp(-v))
    assert np.allclose(equivariance_map_c(g, z, Sigmoid()) @ sig(z), sig(g @ z), atol=1e-12)


def test_c_cocycle():
    rng = np.random.default_rng(6)
    for _ in range(20):
        z = rng.standard_normal(3)
        g1, g2 = invertible(3, rng), invertible(3, rng)
        lhs = equivariance_map_c(g1 @ g2, z, Sigmoid())
        rhs = equivariance_map_c(g1, g2 @ z, Sigmoid()) @ equivariance_map_c(g2, z, Sigmoid())
        assert np.linalg.norm(lhs - rhs) <= 1e-9 * max(1.0, np.linalg.norm(lhs))


# ---------------------------------------------------------------- Lipschitz bound

def test_lipschitz_identity_reduces_to_plain_bound():
    _, U, V, x, _ = sigmoid_instance(8)
    expected = 0.25 * np.linalg.norm(U, 2) * np.linalg.norm(V, 2)
    assert lipschitz_bound(U, V, x, np.eye(4), Sigmoid()) == pytest.approx(expected, rel=1e-8)


def test_lipschitz_scalar_by_hand():
    u, v, x, g = 2.0, -1.5, 0.7, 3.0
    sig = lambda t: 1 / (1 + math.exp(-t))
    expected = 0.25 * abs(u) * abs(v) * sig(v * x) * abs(g) / sig(g * v * x)
    got = lipschitz_bound([[u]], [[v]], [x], [[g]], Sigmoid())
    assert got == pytest.approx(expected, rel=1e-12)


def test_lipschitz_bound_dominates_quotients():
    rng, U, V, x, g = sigmoid_instance(9)
    U2, V2 = apply_nonlinear_action(U, V, x, g, Sigmoid())
    bound = lipschitz_bound(U, V, x, g, Sigmoid())
    for _ in range(1000):
        a, b = rng.standard_normal(3) * 2, rng.standard_normal(3) * 2
        quotient = (np.linalg.norm(output(U2, V2, Sigmoid(), a) - output(U2, V2, Sigmoid(), b))
                    / np.linalg.norm(a - b))
        assert quotient <= bound * (1 + 1e-12)


def test_lipschitz_unknown_constant():
    from noetherkit.network import HomogeneousPower
    with pytest.raises(ValueError):
        lipschitz_bound(np.ones((1, 1)), np.ones((1, 1)), [1.0], [[2.0]], HomogeneousPower(3.0))


# ---------------------------------------------------------------- batch stand-in

def test_pseudo_pi_single_column_recovers_features():
    rng = np.random.default_rng(12)
    g = invertible(3, rng)
    H = rng.standard_normal((3, 1))
    P = pseudo_pi(g, H, Sigmoid())
    sig = lambda v: 1 / (1 + np.exp(-v))
    assert np.allclose(P @ sig(g @ H), sig(H), atol=1e-12)


def test_pseudo_pi_identity_when_g_is_identity():
    H = np.random.default_rng(13).standard_normal((3, 10))
    assert np.allclose(pseudo_pi(np.eye(3), H, Tanh()), np.eye(3), atol=1e-10)
