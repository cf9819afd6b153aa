"""Data-dependent action of the full general linear group on a hidden layer.

The construction rests on R_z, a scaled rotation whose first column is z,
built from the hyperspherical angles of z.  Transforming U by
R_{sigma(Vx)} R_{sigma(gVx)}^{-1} undoes the effect of V -> gV at the anchor
input x, for any invertible g and any activation that is nonzero there.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import linalg
from .network import MlpParams, activation_apply, forward


class DegenerateLocusError(ValueError):
    """The anchor input hits a zero feature, where R_z is undefined."""


@dataclass(frozen=True)
class SphericalCoords:
    r: float
    angles: np.ndarray

    def to_cartesian(self):
        h = self.angles.size + 1
        a = np.append(self.angles, 0.0)
        sines = np.concatenate(([1.0], np.cumprod(np.sin(a[:-1]))))
        return self.r * np.cos(a) * sines[:h]


def spherical_coordinates(z) -> SphericalCoords:
    z = np.asarray(z, dtype=np.float64).ravel()
    h = z.size
    suffix = np.empty(h)
    acc = 0.0
    for i in range(h - 1, -1, -1):
        acc = math.hypot(z[i], acc)
        suffix[i] = acc
    r = suffix[0]
    if r == 0.0:
        raise ValueError("the zero vector has no spherical coordinates")
    angles = np.zeros(h - 1)
    for i in range(h - 1):
        if suffix[i + 1] < 1e-12 * r:
            # remaining tail is numerically zero: keep the sign of z_i, zero the rest
            angles[i] = math.atan2(0.0, z[i])
            break
        if i == h - 2:
            angles[i] = math.atan2(z[h - 1], z[h - 2])
        else:
            angles[i] = math.atan2(suffix[i + 1], z[i])
    return SphericalCoords(float(r), angles)


def rotation_from_angles(beta):
    """The (n+1)x(n+1) orthogonal matrix R(beta) with beta_0 = beta_{n+1} = 0.

    Entry (i, j), 1-based: cos(beta_{j-1}) prod_{k=j}^{i-1} sin(beta_k) cos(beta_i)
    for j <= i, -sin(beta_i) for j = i + 1, and 0 otherwise.
    """
    beta = np.asarray(beta, dtype=np.float64).ravel()
    n = beta.size
    ext = np.concatenate(([0.0], beta, [0.0]))
    s, c = np.sin(ext), np.cos(ext)
    R = np.zeros((n + 1, n + 1))
    for j in range(1, n + 2):
        prods = np.concatenate(([1.0], np.cumprod(s[j:n + 1])))
        rows = np.arange(j, n + 2)
        R[rows - 1, j - 1] = c[j - 1] * prods * c[rows]
    for i in range(1, n + 1):
        R[i - 1, i] = -s[i]
    return R


@dataclass(frozen=True)
class RMatrix:
    mat: np.ndarray
    norm: float

    def inverse(self):
        return self.mat.T / self.norm**2


def r_matrix(z) -> RMatrix:
    z = np.asarray(z, dtype=np.float64).ravel()
    r = math.sqrt(float(z @ z))
    if r <= 1e-12 * math.sqrt(z.size):
        raise DegenerateLocusError("R_z needs a vector bounded away from zero")
    sc = spherical_coordinates(z)
    return RMatrix(sc.r * rotation_from_angles(sc.angles), sc.r)


def r_matrix_entrywise(z):
    """Entry formula z_i cos(a_{j-1}) / prod_{k<j} sin(a_k) below the superdiagonal.

    Only valid where no sine of the angles vanishes; used as a cross-check.
    """
    z = np.asarray(z, dtype=np.float64).ravel()
    h = z.size
    sc = spherical_coordinates(z)
    a = np.concatenate(([0.0], sc.angles, [0.0]))
    R = np.zeros((h, h))
    for i in range(1, h + 1):
        for j in range(1, i + 1):
            R[i - 1, j - 1] = z[i - 1] * math.cos(a[j - 1]) / np.prod(np.sin(a[1:j]))
        if i < h:
            R[i - 1, i] = -sc.r * math.sin(a[i])
    return R


def _feature(act, z):
    return activation_apply(act, np.asarray(z, dtype=np.float64).reshape(-1, 1)).ravel()


def _check_nondegenerate(act, z, a, where):
    if math.sqrt(float(a @ a)) <= 1e-10:
        raise DegenerateLocusError(f"sigma({where}) is numerically zero")
    if act.vanishes_at_zero and math.sqrt(float(z @ z)) <= 1e-10:
        raise DegenerateLocusError(f"{where} is numerically zero")


def _is_identity(g):
    g = np.asarray(g)
    return g.shape[0] == g.shape[1] and np.array_equal(g, np.eye(g.shape[0]))


def equivariance_map_c(g, z, act):
    """c(g, z) = R_{sigma(gz)} R_{sigma(z)}^{-1}, so that sigma(gz) = c(g, z) sigma(z)."""
    g = np.asarray(g, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64).ravel()
    gz = g @ z
    a, ga = _feature(act, z), _feature(act, gz)
    _check_nondegenerate(act, z, a, "z")
    _check_nondegenerate(act, gz, ga, "gz")
    return r_matrix(ga).mat @ r_matrix(a).inverse()


def apply_nonlinear_action(U, V, x, g, act):
    """(U R_{sigma(Vx)} R_{sigma(gVx)}^{-1}, gV) for a single anchor x."""
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if _is_identity(g):
        return U.copy(), V.copy()
    z = V @ np.asarray(x, dtype=np.float64).ravel()
    gz = g @ z
    a, ga = _feature(act, z), _feature(act, gz)
    _check_nondegenerate(act, z, a, "Vx")
    _check_nondegenerate(act, gz, ga, "gVx")
    return U @ r_matrix(a).mat @ r_matrix(ga).inverse(), g @ V


def apply_nonlinear_action_deep(params: MlpParams, acts, x, g):
    """Multi-layer version: W_i -> g_i W_i R_{sigma(Z_{i-1})} R_{sigma(g_{i-1} Z_{i-1})}^{-1}.

    `g` is a sequence with one matrix per hidden layer.  Biases map as
    b_i -> g_i b_i.  The features then satisfy Z_i(g.theta, x) = g_i Z_i(theta, x).
    """
    mats = list(getattr(g, "mats", g))
    L = params.depth
    hidden = params.widths[1:-1]
    if len(mats) != L - 1 or any(np.shape(m) != (n, n) for m, n in zip(mats, hidden)):
        raise ValueError(f"group element shapes do not match hidden widths {hidden}")
    if all(_is_identity(m) for m in mats):
        return params.map(np.copy)
    trace = forward(params, acts, np.asarray(x, dtype=np.float64).reshape(-1, 1))
    gs = [np.eye(params.widths[0])] + [np.asarray(m, dtype=np.float64) for m in mats] + [None]
    ws, bs = [], []
    for i in range(L):
        w = params.weights[i]
        if i > 0:
            z = trace.pre[i - 1].ravel()
            gz = gs[i] @ z
            a, ga = _feature(acts[i - 1], z), _feature(acts[i - 1], gz)
            _check_nondegenerate(acts[i - 1], z, a, f"Z_{i}")
            _check_nondegenerate(acts[i - 1], gz, ga, f"g_{i} Z_{i}")
            w = w @ r_matrix(a).mat @ r_matrix(ga).inverse()
        if i < L - 1:
            w = gs[i + 1] @ w
        ws.append(w)
        if params.biases is not None:
            b = params.biases[i]
            bs.append(gs[i + 1] @ b if i < L - 1 else b.copy())
    return MlpParams(ws, bs if params.biases is not None else None)


def lipschitz_bound(U, V, x, g, act, eta=None):
    """eta |U| |V| |sigma(Vx)| |g| / |sigma(gVx)| with operator norms by power iteration."""
    eta = act.lipschitz if eta is None else eta
    if eta is None:
        raise ValueError(f"no Lipschitz constant known for {act.kind}")
    U, V, g = (np.asarray(m, dtype=np.float64) for m in (U, V, g))
    z = V @ np.asarray(x, dtype=np.float64).ravel()
    a, ga = _feature(act, z), _feature(act, g @ z)
    _check_nondegenerate(act, z, a, "Vx")
    _check_nondegenerate(act, g @ z, ga, "gVx")
    ratio = math.sqrt(float(a @ a)) / math.sqrt(float(ga @ ga))
    return (eta * linalg.operator_norm(U) * linalg.operator_norm(V)
            * linalg.operator_norm(g) * ratio)


def pseudo_pi(g, H, act, rel_cutoff=1e-10):
    """sigma(H) sigma(gH)^+ : the least-squares stand-in for pi(g) on a batch H."""
    H = np.asarray(H, dtype=np.float64)
    if H.ndim == 1:
        H = H[:, None]
    return activation_apply(act, H) @ linalg.pinv(activation_apply(act, g @ H), rel_cutoff)
