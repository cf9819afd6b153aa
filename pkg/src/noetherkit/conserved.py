"""Conserved quantities of gradient flow induced by parameter-space symmetries."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .network import Activation, MlpParams, integral_sigma_over_dsigma
from .symmetry import HiddenLieElement, PiSpec, apply_infinitesimal, _as_lie

VARIANTS = ("ImbalanceMatrix", "QM", "HomogeneousDiag", "ElementwiseIntegral",
            "RadialSpectralLambda", "EllipseQ")


def _two(U, V):
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if U.ndim != 2 or V.ndim != 2 or U.shape[1] != V.shape[0]:
        raise ValueError(f"need U (m x h) and V (h x n), got {U.shape} and {V.shape}")
    return U, V


def action_inner_product(params: MlpParams, M, pi: Optional[PiSpec] = None):
    """<theta, M.theta> for any M (identically zero when M is antisymmetric)."""
    return params.dot(apply_infinitesimal(params, M, pi))


def q_m(params: MlpParams, M, pi: Optional[PiSpec] = None):
    M = _as_lie(M)
    if M.flag != "symmetric":
        raise ValueError(f"Q_M needs a symmetric M (got {M.flag}); "
                         "antisymmetric M gives the zero function")
    return action_inner_product(params, M, pi)


def q_m_grad(params: MlpParams, M, pi: Optional[PiSpec] = None):
    """Gradient of Q_M: for symmetric M the tangent map is self-adjoint, so 2 M.theta."""
    q_m(params, M, pi)
    return apply_infinitesimal(params, M, pi).scale(2.0)


def q_imbalance_matrix(U, V):
    U, V = _two(U, V)
    return V @ V.T - U.T @ U


def q_homogeneous_diag(U, V, alpha):
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    U, V = _two(U, V)
    return np.sum(V * V, axis=1) - alpha * np.sum(U * U, axis=0)


def _integral_term(V, act, x0):
    return float(np.sum(integral_sigma_over_dsigma(act, V) - integral_sigma_over_dsigma(act, x0)))


def q_elementwise_integral(U, V, act: Activation, x0=0.0):
    """1/2 Tr[U^T U] - sum_{a,j} integral_{x0}^{V_aj} sigma/sigma'."""
    U, V = _two(U, V)
    return 0.5 * float(np.sum(U * U)) - _integral_term(V, act, x0)


def angular_momentum_residual(U, V, G_U, G_V):
    U, V = _two(U, V)
    G_U = np.asarray(G_U, dtype=np.float64)
    G_V = np.asarray(G_V, dtype=np.float64)
    if G_U.shape != U.shape or G_V.shape != V.shape:
        raise ValueError("gradient shapes must match U and V")
    Ud, Vd = -G_U, -G_V
    return V @ Vd.T - Vd @ V.T + U.T @ Ud - Ud.T @ U


def q_radial_spectral(u_diag, v_diag):
    u = np.asarray(u_diag, dtype=np.float64)
    v = np.asarray(v_diag, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError("u and v must have equal lengths")
    return u * u + v * v


def q_ellipse(w, a):
    w1, w2 = (float(t) for t in np.asarray(w, dtype=np.float64).ravel())
    if w2 == 0.0:
        raise ValueError("w2 must be nonzero")
    if w1 <= 0.0 and float(a) != int(a):
        raise ValueError("w1 must be positive for non-integer a")
    return w1 ** (2.0 * a) / w2**2


def normalized_q_baseline(U0, V0, act, x0=0.0):
    U0, V0 = _two(U0, V0)
    return 0.5 * float(np.sum(U0 * U0)), _integral_term(V0, act, x0)


def normalized_q(U, V, act, x0, baseline_terms):
    """|f1(U) - f2(V)| / (|f1(U0)| + |f2(V0)|) with f1 = 1/2 Tr U^T U, f2 = sum F(V)."""
    f10, f20 = baseline_terms
    denom = abs(f10) + abs(f20)
    if denom == 0.0:
        raise ValueError("zero normalization at t = 0")
    U, V = _two(U, V)
    return abs(0.5 * float(np.sum(U * U)) - _integral_term(V, act, x0)) / denom


# ---------------------------------------------------------------- declarative specs

@dataclass(frozen=True)
class QSpec:
    """A conserved quantity to evaluate along a trajectory.

    ImbalanceMatrix / HomogeneousDiag / ElementwiseIntegral read V = W_layer and
    U = W_{layer+1} from MlpParams; QM reads the whole parameter tuple;
    RadialSpectralLambda reads a flat state (u_1..u_h, v_1..v_h); EllipseQ
    reads (w1, w2).
    """

    variant: str
    layer: int = 1
    M: Optional[HiddenLieElement] = None
    pi: Optional[PiSpec] = None
    alpha: float = 1.0
    activation: Optional[Activation] = None
    x0: float = 0.0
    a: float = 1.0
    label: Optional[str] = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown QSpec variant {self.variant!r}")
        if self.variant == "QM" and self.M is None:
            raise ValueError("QM needs M")
        if self.variant == "ElementwiseIntegral" and self.activation is None:
            raise ValueError("ElementwiseIntegral needs an activation")

    @property
    def name(self):
        if self.label:
            return self.label
        return {
            "ImbalanceMatrix": f"imbalance{self.layer}",
            "QM": "qm",
            "HomogeneousDiag": f"hdiag{self.layer}",
            "ElementwiseIntegral": "elementwise",
            "RadialSpectralLambda": "lambda",
            "EllipseQ": "ellipse",
        }[self.variant]

    def _uv(self, params):
        if not isinstance(params, MlpParams):
            raise TypeError(f"{self.variant} is evaluated on MlpParams")
        i = self.layer
        if not 1 <= i < params.depth:
            raise ValueError(f"layer {i} is not a hidden layer of a depth-{params.depth} net")
        V, U = params.weights[i - 1], params.weights[i]
        b = params.biases[i - 1] if params.biases is not None else None
        return U, V, b

    def evaluate(self, state):
        v = self.variant
        if v == "ImbalanceMatrix":
            U, V, b = self._uv(state)
            q = q_imbalance_matrix(U, V)
            return q + np.outer(b, b) if b is not None else q
        if v == "HomogeneousDiag":
            U, V, b = self._uv(state)
            q = q_homogeneous_diag(U, V, self.alpha)
            return q + b * b if b is not None else q
        if v == "ElementwiseIntegral":
            U, V, _ = self._uv(state)
            return np.float64(q_elementwise_integral(U, V, self.activation, self.x0))
        if v == "QM":
            return np.float64(q_m(state, self.M, self.pi))
        if v == "RadialSpectralLambda":
            y = np.asarray(state, dtype=np.float64)
            h = y.size // 2
            return q_radial_spectral(y[:h], y[h:])
        return np.float64(q_ellipse(state, self.a))

    def scale(self, state):
        """Natural magnitude used to turn drift into relative drift."""
        v = self.variant
        if v in ("ImbalanceMatrix", "HomogeneousDiag"):
            U, V, b = self._uv(state)
            w = self.alpha if v == "HomogeneousDiag" else 1.0
            s = float(np.linalg.norm(V @ V.T)) + w * float(np.linalg.norm(U.T @ U))
            return s + (float(b @ b) if b is not None else 0.0)
        if v == "ElementwiseIntegral":
            U, V, _ = self._uv(state)
            f1, f2 = normalized_q_baseline(U, V, self.activation, self.x0)
            return abs(f1) + abs(f2)
        if v == "QM":
            return state.norm() * apply_infinitesimal(state, self.M, self.pi).norm()
        return float(np.linalg.norm(np.atleast_1d(self.evaluate(state))))

    def to_dict(self):
        d = {"variant": self.variant}
        if self.variant in ("ImbalanceMatrix", "HomogeneousDiag", "ElementwiseIntegral"):
            d["layer"] = self.layer
        if self.variant == "HomogeneousDiag":
            d["alpha"] = self.alpha
        if self.variant == "ElementwiseIntegral":
            d["activation"] = self.activation.to_dict()
            d["x0"] = self.x0
        if self.variant == "QM":
            d["M"] = [m.tolist() for m in self.M.mats]
            d["pi"] = list(self.pi.powers) if self.pi is not None else None
        if self.variant == "EllipseQ":
            d["a"] = self.a
        if self.label:
            d["label"] = self.label
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        variant = d.pop("variant", None)
        allowed = {"layer", "alpha", "activation", "x0", "M", "pi", "a", "label"}
        extra = set(d) - allowed
        if extra:
            raise ValueError(f"unknown QSpec keys: {sorted(extra)}")
        kw = {}
        for key in ("layer", "alpha", "x0", "a", "label"):
            if key in d:
                kw[key] = d[key]
        if "activation" in d:
            kw["activation"] = Activation.from_dict(d["activation"])
        if "M" in d:
            kw["M"] = HiddenLieElement.of([np.array(m, dtype=np.float64) for m in d["M"]])
        if d.get("pi") is not None:
            kw["pi"] = PiSpec(tuple(d["pi"]))
        return cls(variant, **kw)
