"""Linear actions of the hidden symmetry group and their infinitesimal versions.

A hidden group element is one invertible matrix per hidden layer.  It acts by
W_i -> g_i W_i pi(g_{i-1})^{-1} and b_i -> g_i b_i, where the boundary layers
carry identities.  pi is either the identity representation or, for positive
diagonal groups, the power map g -> g^alpha.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import linalg
from .network import (FULL_GL, ORTHOGONAL, POSITIVE_DIAGONAL, MlpParams,
                      activation_apply, grad)

GENERAL_LINEAR = "GeneralLinear"
GROUP_KINDS = (GENERAL_LINEAR, POSITIVE_DIAGONAL, ORTHOGONAL)

# which group kinds each activation equivariance class admits
ADMITS = {
    FULL_GL: {GENERAL_LINEAR, POSITIVE_DIAGONAL, ORTHOGONAL},
    POSITIVE_DIAGONAL: {POSITIVE_DIAGONAL},
    ORTHOGONAL: {ORTHOGONAL},
    None: set(),
}


class IncompatibleActionWarning(UserWarning):
    """The group kind is not a symmetry for the activation it is applied across."""


class DegenerateParamsWarning(UserWarning):
    """Parameters are outside the full-rank locus."""


def is_member(kind, g, tol=1e-9):
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        return False
    if kind == GENERAL_LINEAR:
        scale = float(np.max(np.abs(g))) if g.size else 0.0
        return scale > 0 and abs(linalg.det(g / scale)) > 1e-12
    if kind == POSITIVE_DIAGONAL:
        return bool(np.all(g[~np.eye(len(g), dtype=bool)] == 0.0) and np.all(np.diag(g) > 0.0))
    if kind == ORTHOGONAL:
        return float(np.linalg.norm(g.T @ g - np.eye(len(g)))) <= tol
    raise ValueError(f"unknown group kind {kind!r}")


@dataclass(frozen=True)
class HiddenGroupElement:
    mats: tuple
    kinds: tuple

    def __post_init__(self):
        mats = tuple(np.array(m, dtype=np.float64) for m in self.mats)
        kinds = tuple(self.kinds)
        if len(kinds) != len(mats):
            raise ValueError("one group kind per hidden layer")
        for i, (m, k) in enumerate(zip(mats, kinds)):
            if not is_member(k, m):
                raise ValueError(f"g_{i + 1} is not in {k}")
        object.__setattr__(self, "mats", mats)
        object.__setattr__(self, "kinds", kinds)

    @classmethod
    def of(cls, mats, kind=GENERAL_LINEAR):
        mats = list(mats)
        kinds = [kind] * len(mats) if isinstance(kind, str) else list(kind)
        return cls(tuple(mats), tuple(kinds))

    @classmethod
    def identity(cls, params: MlpParams, kind=GENERAL_LINEAR):
        return cls.of([np.eye(n) for n in params.widths[1:-1]], kind)

    def __matmul__(self, other):
        kinds = tuple(a if a == b else GENERAL_LINEAR for a, b in zip(self.kinds, other.kinds))
        return HiddenGroupElement(tuple(a @ b for a, b in zip(self.mats, other.mats)), kinds)


def _flag(m, tol=1e-12):
    if np.all(np.abs(m - m.T) <= tol):
        return "symmetric"
    if np.all(np.abs(m + m.T) <= tol):
        return "antisymmetric"
    return "general"


@dataclass(frozen=True)
class HiddenLieElement:
    mats: tuple
    flag: Optional[str] = None

    def __post_init__(self):
        mats = tuple(np.array(m, dtype=np.float64) for m in self.mats)
        nonzero = [m for m in mats if np.any(m)]
        flags = {_flag(m) for m in nonzero}
        if not nonzero:
            actual = self.flag or "symmetric"
        elif len(flags) == 1:
            actual = flags.pop()
        else:
            actual = "general"
        if self.flag is not None and self.flag != actual:
            raise ValueError(f"flag {self.flag!r} does not match matrices ({actual})")
        object.__setattr__(self, "mats", mats)
        object.__setattr__(self, "flag", actual)

    @classmethod
    def of(cls, mats):
        return cls(tuple(mats))


@dataclass(frozen=True)
class PiSpec:
    """Per hidden layer: None for pi(g) = g, or a float alpha for pi(g) = g^alpha."""

    powers: tuple = ()

    @classmethod
    def identity(cls, n_hidden):
        return cls((None,) * n_hidden)

    @classmethod
    def power(cls, alpha, n_hidden):
        return cls((float(alpha),) * n_hidden)

    def rule(self, i):
        return self.powers[i] if i < len(self.powers) else None


def _as_group(g, params):
    if isinstance(g, HiddenGroupElement):
        return g
    if isinstance(g, np.ndarray) and g.ndim == 2:
        g = [g]
    return HiddenGroupElement.of(list(g), GENERAL_LINEAR)


def _as_lie(M):
    if isinstance(M, HiddenLieElement):
        return M
    if isinstance(M, np.ndarray) and M.ndim == 2:
        M = [M]
    return HiddenLieElement.of(list(M))


def _pi(pi, i):
    return None if pi is None else pi.rule(i)


def _pi_inv(g, power):
    """pi(g)^{-1}."""
    if power is None:
        return linalg.inverse(g)
    d = np.diag(g)
    if np.any(g[~np.eye(len(g), dtype=bool)] != 0.0) or np.any(d <= 0.0):
        raise ValueError("power representations need positive diagonal elements")
    return np.diag(d ** (-power))


def compatibility_problems(acts, g: HiddenGroupElement, pi=None):
    """Hidden layers where the action is not a symmetry of the network."""
    problems = []
    for i, kind in enumerate(g.kinds):
        act = acts[i]
        power = _pi(pi, i)
        cls = act.equivariance_class
        if np.allclose(g.mats[i], np.eye(len(g.mats[i]))):
            continue
        if kind not in ADMITS[cls]:
            problems.append(f"layer {i + 1}: {act.kind} does not admit {kind}")
        elif act.kind == "HomogeneousPower":
            if power is None or power != act.alpha:
                problems.append(f"layer {i + 1}: needs pi = power {act.alpha}")
        elif power is not None and power != 1.0:
            problems.append(f"layer {i + 1}: power pi with {act.kind}")
    return problems


def apply_linear_action(params: MlpParams, g, pi: Optional[PiSpec] = None, acts=None):
    """g . theta.  When `acts` is given, incompatible pairings raise a warning."""
    g = _as_group(g, params)
    hidden = params.widths[1:-1]
    if len(g.mats) != len(hidden) or any(m.shape[0] != n for m, n in zip(g.mats, hidden)):
        raise ValueError(f"group element shapes do not match hidden widths {hidden}")
    if acts is not None:
        problems = compatibility_problems(acts, g, pi)
        if problems:
            warnings.warn("; ".join(problems), IncompatibleActionWarning, stacklevel=2)
    L = params.depth
    ws, bs = [], []
    for i in range(L):
        w = params.weights[i]
        if i < L - 1:
            w = g.mats[i] @ w
        if i > 0:
            w = w @ _pi_inv(g.mats[i - 1], _pi(pi, i - 1))
        ws.append(w)
        if params.biases is not None:
            b = params.biases[i]
            bs.append(g.mats[i] @ b if i < L - 1 else b.copy())
    return MlpParams(ws, bs if params.biases is not None else None)


def transport(g, grads: MlpParams, pi: Optional[PiSpec] = None):
    """Transpose action: G_i -> g_i^T G_i pi(g_{i-1})^{-T}, b_i -> g_i^T b_i."""
    g = _as_group(g, grads)
    L = grads.depth
    ws, bs = [], []
    for i in range(L):
        w = grads.weights[i]
        if i < L - 1:
            w = g.mats[i].T @ w
        if i > 0:
            w = w @ _pi_inv(g.mats[i - 1], _pi(pi, i - 1)).T
        ws.append(w)
        if grads.biases is not None:
            b = grads.biases[i]
            bs.append(g.mats[i].T @ b if i < L - 1 else b.copy())
    return MlpParams(ws, bs if grads.biases is not None else None)


def _dpi(m, power):
    return m if power is None else power * m


def apply_infinitesimal(params: MlpParams, M, pi: Optional[PiSpec] = None):
    """The tangent M.theta: M_i W_i - W_i dpi(M_{i-1}) and M_i b_i."""
    M = _as_lie(M)
    L = params.depth
    ws, bs = [], []
    for i in range(L):
        w = params.weights[i]
        t = np.zeros_like(w)
        if i < L - 1:
            t += M.mats[i] @ w
        if i > 0:
            t -= w @ _dpi(M.mats[i - 1], _pi(pi, i - 1))
        ws.append(t)
        if params.biases is not None:
            b = params.biases[i]
            bs.append(M.mats[i] @ b if i < L - 1 else np.zeros_like(b))
    return MlpParams(ws, bs if params.biases is not None else None)


def check_equivariance(act, g, pi_power=None, samples=100, rng=None):
    """max over random z of |sigma(gz) - pi(g) sigma(z)| / (1 + |sigma(gz)|)."""
    rng = np.random.default_rng(0) if rng is None else rng
    g = np.asarray(g, dtype=np.float64)
    if pi_power is None:
        pg = g
    else:
        pg = np.diag(np.diag(g) ** pi_power)
    worst = 0.0
    for _ in range(samples):
        z = rng.standard_normal((g.shape[0], 1))
        lhs = activation_apply(act, g @ z)
        rhs = pg @ activation_apply(act, z)
        res = float(np.linalg.norm(lhs - rhs)) / (1.0 + float(np.linalg.norm(lhs)))
        worst = max(worst, res)
    return worst


def check_grad_orthogonality(params, acts, batch, M, pi=None, convention="mean"):
    """|<grad L, M.theta>| / (|grad L| |M.theta| + 1e-30)."""
    G = grad(params, acts, batch, convention)
    T = apply_infinitesimal(params, M, pi)
    return abs(G.dot(T)) / (G.norm() * T.norm() + 1e-30)


def check_grad_equivariance(params, acts, batch, g, pi=None, convention="mean"):
    """Relative residual of g^T . grad_{g.theta} L against grad_theta L."""
    g = _as_group(g, params)
    G0 = grad(params, acts, batch, convention)
    G1 = grad(apply_linear_action(params, g, pi), acts, batch, convention)
    diff = (transport(g, G1, pi) - G0).norm()
    return diff / max(G0.norm(), 1e-300) if G0.norm() > 0 else diff


def _choose2(x):
    return x * (x - 1) // 2 if x >= 2 else 0


def orbit_dimension_formula(cls, n, h, m):
    """Generic orbit dimension from the two-regime table (h vs max(n, m))."""
    big = max(n, m)
    if cls == FULL_GL:
        low, high = h * h, h * (n + m) - n * m
    elif cls == POSITIVE_DIAGONAL:
        low, high = h, big
    elif cls == ORTHOGONAL:
        low, high = _choose2(h), _choose2(h) - _choose2(h - big)
    else:
        raise ValueError(f"unknown equivariance class {cls!r}")
    if h == big:
        assert low == high, "regimes must agree at h = max(n, m)"
    return low if h <= big else high


def orbit_dimension_generic(cls, n, h, m):
    """Rank of the infinitesimal action at a generic point, from stabilizer counting.

    The stabilizer algebra of a generic (U, V) is {A : A V = 0, U A = 0}
    intersected with the group's algebra.  This agrees with the table for
    h <= max(n, m) and for the general linear group everywhere.
    """
    if cls == FULL_GL:
        return h * h - max(0, h - n) * max(0, h - m)
    if cls == POSITIVE_DIAGONAL:
        return h
    if cls == ORTHOGONAL:
        return _choose2(h) - _choose2(max(0, h - n - m))
    raise ValueError(f"unknown equivariance class {cls!r}")


def in_full_rank_locus(params: MlpParams, rel=1e-6):
    for w in params.weights:
        _, s, _ = linalg.svd_jacobi(w)
        if s[0] == 0.0 or s[-1] <= rel * s[0]:
            return False
    return True


def orbit_dimension_empirical(params: MlpParams, basis, pi=None, rel_tol=1e-8):
    """Numerical rank of the flattened tangents M.theta over a Lie basis."""
    if not in_full_rank_locus(params):
        warnings.warn("parameters are outside the full-rank locus", DegenerateParamsWarning,
                      stacklevel=2)
    cols = [apply_infinitesimal(params, _as_lie(M), pi).flatten() for M in basis]
    if not cols:
        return 0
    return linalg.numerical_rank(np.stack(cols, axis=1), rel_tol)


def _unit(dim, k, l):
    e = np.zeros((dim, dim))
    e[k, l] = 1.0
    return e


def lie_basis(kind, dim, part="all"):
    """Basis of (a part of) the Lie algebra of a single-layer group."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    sym = [_unit(dim, k, k) for k in range(dim)] + [
        _unit(dim, k, l) + _unit(dim, l, k) for k in range(dim) for l in range(k + 1, dim)]
    anti = [_unit(dim, k, l) - _unit(dim, l, k) for k in range(dim) for l in range(k + 1, dim)]
    if kind == GENERAL_LINEAR:
        if part == "all":
            return [_unit(dim, k, l) for k in range(dim) for l in range(dim)]
        if part == "symmetric":
            return sym
        if part == "antisymmetric":
            return anti
    elif kind == POSITIVE_DIAGONAL and part in ("all", "symmetric"):
        return [_unit(dim, k, k) for k in range(dim)]
    elif kind == ORTHOGONAL and part in ("all", "antisymmetric"):
        return anti
    raise ValueError(f"no {part!r} part for {kind}")


def hidden_lie_basis(params: MlpParams, kind, part="all"):
    """Lie basis over all hidden layers, one nonzero layer per element."""
    hidden = params.widths[1:-1]
    out = []
    for i, n in enumerate(hidden):
        for m in lie_basis(kind, n, part):
            mats = [np.zeros((k, k)) for k in hidden]
            mats[i] = m
            out.append(HiddenLieElement.of(mats))
    return out


def sample_group_element(kind, dim, spread, rng, budget=100):
    if spread < 0:
        raise ValueError("spread must be >= 0")
    if kind == GENERAL_LINEAR:
        for _ in range(budget):
            g = np.eye(dim) + spread * rng.standard_normal((dim, dim))
            if abs(linalg.det(g)) > 1e-6:
                return g
        raise RuntimeError(f"no invertible sample after {budget} draws")
    if kind == ORTHOGONAL:
        # QR of a perturbed identity: spread 0 gives I, large spread is near Haar
        q, r = linalg.qr(np.eye(dim) + spread * rng.standard_normal((dim, dim)))
        return q * np.where(np.diag(r) < 0, -1.0, 1.0)
    if kind == POSITIVE_DIAGONAL:
        return np.diag(np.exp(spread * rng.standard_normal(dim)))
    raise ValueError(f"unknown group kind {kind!r}")


def sample_hidden_group(params: MlpParams, kind, spread, rng):
    return HiddenGroupElement.of(
        [sample_group_element(kind, n, spread, rng) for n in params.widths[1:-1]], kind)


def group_exp(M, t=1.0):
    """exp(t M) layerwise, as a general-linear hidden element."""
    M = _as_lie(M)
    return HiddenGroupElement.of([linalg.expm(t * m) for m in M.mats], GENERAL_LINEAR)
