"""Multilayer perceptrons: parameters, activations, forward pass, loss and backprop.

Weights follow the column-sample convention: layer i maps features of width
n_{i-1} to n_i through Z_i = W_i A_{i-1} + b_i and A_i = sigma_i(Z_i), with the
k samples stored as the columns of X.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

POINTWISE = ("Identity", "LeakyReLU", "Sigmoid", "Tanh", "HomogeneousPower")
RADIAL = ("RadialRescale", "RowRadial")
PROFILES = ("inverse_square", "tanh_ratio")
CONVENTIONS = ("mean", "half", "sum")

FULL_GL = "FullGL"
POSITIVE_DIAGONAL = "PositiveDiagonal"
ORTHOGONAL = "Orthogonal"


# ---------------------------------------------------------------- activations

def _profile(name, r):
    """Return (f(r), f'(r)/r) for a radial profile, elementwise over r."""
    r = np.asarray(r, dtype=np.float64)
    if name == "inverse_square":
        if np.any(r == 0.0):
            raise ValueError("inverse_square profile is singular at a zero vector")
        return 1.0 / r**2, -2.0 / r**4
    if name == "tanh_ratio":
        small = r < 1e-3
        safe = np.where(small, 1.0, r)
        th = np.tanh(safe)
        f = np.where(small, 1.0 - r**2 / 3.0 + 2.0 * r**4 / 15.0, th / safe)
        sech2 = 1.0 - th**2
        fp_over_r = np.where(small, -2.0 / 3.0 + 8.0 * r**2 / 15.0,
                             (safe * sech2 - th) / safe**3)
        return f, fp_over_r
    raise ValueError(f"unknown radial profile {name!r}")


@dataclass(frozen=True)
class Activation:
    """A tagged activation.  Use the module-level constructors."""

    kind: str
    slope: float = 0.0
    alpha: float = 1.0
    profile: Optional[str] = None

    def __str__(self):
        extra = {"LeakyReLU": self.slope, "HomogeneousPower": self.alpha}.get(self.kind)
        if self.profile is not None:
            extra = self.profile
        return self.kind if extra is None else f"{self.kind}({extra})"

    def __post_init__(self):
        if self.kind not in POINTWISE + RADIAL:
            raise ValueError(f"unknown activation kind {self.kind!r}")
        if self.kind == "LeakyReLU" and not self.slope >= 0.0:
            raise ValueError("LeakyReLU slope must be >= 0")
        if self.kind == "HomogeneousPower" and not self.alpha > 0.0:
            raise ValueError("HomogeneousPower exponent must be > 0")
        if self.kind in RADIAL and self.profile not in PROFILES:
            raise ValueError(f"radial profile must be one of {PROFILES}")

    @property
    def equivariance_class(self):
        return {
            "Identity": FULL_GL,
            "LeakyReLU": POSITIVE_DIAGONAL,
            "HomogeneousPower": POSITIVE_DIAGONAL,
            "RadialRescale": ORTHOGONAL,
        }.get(self.kind)

    @property
    def is_pointwise(self):
        return self.kind in POINTWISE

    @property
    def vanishes_at_zero(self):
        return self.kind != "Sigmoid"

    @property
    def lipschitz(self):
        """Global Lipschitz constant of a pointwise activation, or None."""
        return {
            "Identity": 1.0,
            "LeakyReLU": max(1.0, self.slope),
            "Sigmoid": 0.25,
            "Tanh": 1.0,
        }.get(self.kind)

    def __call__(self, z):
        return activation_apply(self, z)

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "LeakyReLU":
            d["slope"] = self.slope
        elif self.kind == "HomogeneousPower":
            d["alpha"] = self.alpha
        elif self.kind in RADIAL:
            d["profile"] = self.profile
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        kind = d.pop("kind", None)
        allowed = {"LeakyReLU": {"slope"}, "HomogeneousPower": {"alpha"},
                   "RadialRescale": {"profile"}, "RowRadial": {"profile"}}.get(kind, set())
        extra = set(d) - allowed
        if extra:
            raise ValueError(f"unexpected keys for {kind}: {sorted(extra)}")
        if kind == "LeakyReLU":
            return cls(kind, slope=float(d.get("slope", 0.0)))
        if kind == "HomogeneousPower":
            return cls(kind, alpha=float(d["alpha"]))
        if kind in RADIAL:
            return cls(kind, profile=d.get("profile"))
        return cls(kind)


def Identity():
    return Activation("Identity")


def LeakyReLU(slope):
    return Activation("LeakyReLU", slope=float(slope))


def ReLU():
    return Activation("LeakyReLU", slope=0.0)


def Sigmoid():
    return Activation("Sigmoid")


def Tanh():
    return Activation("Tanh")


def HomogeneousPower(alpha):
    """Signed power sign(z)|z|^alpha, so that sigma(c z) = c^alpha sigma(z) for c > 0."""
    return Activation("HomogeneousPower", alpha=float(alpha))


def RadialRescale(profile="inverse_square"):
    return Activation("RadialRescale", profile=profile)


def RowRadial(profile="inverse_square"):
    return Activation("RowRadial", profile=profile)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def activation_apply(act: Activation, z):
    z = np.asarray(z, dtype=np.float64)
    k = act.kind
    if k == "Identity":
        return z.copy()
    if k == "LeakyReLU":
        return np.maximum(z, 0.0) + act.slope * np.minimum(z, 0.0)
    if k == "Sigmoid":
        return _sigmoid(z)
    if k == "Tanh":
        return np.tanh(z)
    if k == "HomogeneousPower":
        return np.sign(z) * np.abs(z) ** act.alpha
    axis = 0 if k == "RadialRescale" else 1
    zz = z if z.ndim == 2 else z.reshape(-1, 1) if axis == 0 else z.reshape(1, -1)
    r = np.sqrt(np.sum(zz * zz, axis=axis, keepdims=True))
    f, _ = _profile(act.profile, r)
    return (f * zz).reshape(z.shape)


def activation_derivative(act: Activation, z):
    """Entrywise derivative for pointwise kinds.

    Radial kinds return one Jacobian per vector: shape (k, n, n) for the
    columns of an n-by-k RadialRescale input, (n, k, k) for the rows of a
    RowRadial input.
    """
    z = np.asarray(z, dtype=np.float64)
    k = act.kind
    if k == "Identity":
        return np.ones_like(z)
    if k == "LeakyReLU":
        return np.where(z > 0.0, 1.0, act.slope)
    if k == "Sigmoid":
        s = _sigmoid(z)
        return s * (1.0 - s)
    if k == "Tanh":
        return 1.0 - np.tanh(z) ** 2
    if k == "HomogeneousPower":
        a = act.alpha
        with np.errstate(divide="ignore", invalid="ignore"):
            d = a * np.abs(z) ** (a - 1.0)
        return np.where(z == 0.0, 1.0 if a == 1.0 else 0.0, d)
    vecs = z.T if k == "RadialRescale" else z
    if vecs.ndim == 1:
        vecs = vecs[None, :]
    r = np.sqrt(np.sum(vecs * vecs, axis=1))
    f, g = _profile(act.profile, r)
    eye = np.eye(vecs.shape[1])
    return f[:, None, None] * eye + g[:, None, None] * vecs[:, :, None] * vecs[:, None, :]


def activation_vjp(act: Activation, z, upstream):
    """Pull `upstream` (dL/dsigma) back to dL/dz without forming Jacobians."""
    z = np.asarray(z, dtype=np.float64)
    if act.is_pointwise:
        return activation_derivative(act, z) * upstream
    axis = 0 if act.kind == "RadialRescale" else 1
    r = np.sqrt(np.sum(z * z, axis=axis, keepdims=True))
    f, g = _profile(act.profile, r)
    # the per-vector Jacobian f I + (f'/r) z z^T is symmetric
    return f * upstream + g * z * np.sum(z * upstream, axis=axis, keepdims=True)


def integral_sigma_over_dsigma(act: Activation, x):
    """Antiderivative F with F' = sigma/sigma', for the elementwise conserved quantity."""
    x = np.asarray(x, dtype=np.float64)
    if act.kind == "Sigmoid":
        return x + np.exp(x)
    if act.kind == "Tanh":
        return 0.25 * np.cosh(2.0 * x)
    if act.kind == "Identity" or (act.kind == "LeakyReLU" and act.slope > 0.0):
        return 0.5 * x * x
    raise ValueError(f"sigma/sigma' has no antiderivative for {act.kind}"
                     + (" with slope 0" if act.kind == "LeakyReLU" else ""))


def sigma_over_dsigma(act: Activation, x):
    x = np.asarray(x, dtype=np.float64)
    if act.kind == "Sigmoid":
        return 1.0 + np.exp(x)
    if act.kind == "Tanh":
        return np.sinh(x) * np.cosh(x)
    if act.kind == "Identity" or (act.kind == "LeakyReLU" and act.slope > 0.0):
        return x.copy()
    raise ValueError(f"sigma/sigma' undefined for {act.kind}")


# ---------------------------------------------------------------- parameters

@dataclass(frozen=True)
class MlpParams:
    """theta = (W_1, ..., W_L) with optional biases (b_1, ..., b_L)."""

    weights: tuple
    biases: Optional[tuple] = None

    def __post_init__(self):
        ws = tuple(np.array(w, dtype=np.float64) for w in self.weights)
        if not ws:
            raise ValueError("at least one layer is required")
        for i, w in enumerate(ws):
            if w.ndim != 2:
                raise ValueError(f"weight {i} must be 2-D")
            if i and w.shape[1] != ws[i - 1].shape[0]:
                raise ValueError(f"shape chain broken at layer {i + 1}: "
                                 f"{ws[i - 1].shape} -> {w.shape}")
        object.__setattr__(self, "weights", ws)
        if self.biases is not None:
            bs = tuple(np.array(b, dtype=np.float64).reshape(-1) for b in self.biases)
            if len(bs) != len(ws):
                raise ValueError("one bias per layer is required")
            for i, (w, b) in enumerate(zip(ws, bs)):
                if b.shape != (w.shape[0],):
                    raise ValueError(f"bias {i} has length {b.size}, expected {w.shape[0]}")
            object.__setattr__(self, "biases", bs)

    @property
    def widths(self):
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def depth(self):
        return len(self.weights)

    @property
    def has_biases(self):
        return self.biases is not None

    def arrays(self):
        return list(self.weights) + (list(self.biases) if self.biases is not None else [])

    @property
    def n_params(self):
        return sum(a.size for a in self.arrays())

    def flatten(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def unflatten(self, vec):
        """A new MlpParams with this structure and entries from `vec`."""
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.n_params:
            raise ValueError(f"expected {self.n_params} entries, got {vec.size}")
        out, pos = [], 0
        for a in self.arrays():
            out.append(vec[pos:pos + a.size].reshape(a.shape))
            pos += a.size
        L = self.depth
        return MlpParams(out[:L], out[L:] if self.biases is not None else None)

    def map(self, fn, other=None):
        if other is None:
            ws = [fn(w) for w in self.weights]
            bs = None if self.biases is None else [fn(b) for b in self.biases]
        else:
            ws = [fn(a, b) for a, b in zip(self.weights, other.weights)]
            bs = None if self.biases is None else [fn(a, b) for a, b in zip(self.biases, other.biases)]
        return MlpParams(ws, bs)

    def __add__(self, other):
        return self.map(np.add, other)

    def __sub__(self, other):
        return self.map(np.subtract, other)

    def scale(self, c):
        return self.map(lambda a: c * a)

    def dot(self, other):
        """Full-index contraction <self, other>."""
        return float(sum(np.sum(a * b) for a, b in zip(self.arrays(), other.arrays())))

    def norm(self):
        return math.sqrt(self.dot(self))

    def zeros_like(self):
        return self.map(np.zeros_like)

    def allclose(self, other, atol=0.0, rtol=1e-12):
        return all(np.allclose(a, b, atol=atol, rtol=rtol)
                   for a, b in zip(self.arrays(), other.arrays()))

    def equal(self, other):
        return (self.depth == other.depth and self.has_biases == other.has_biases
                and all(a.shape == b.shape and np.array_equal(a, b)
                        for a, b in zip(self.arrays(), other.arrays())))


def two_layer(U, V):
    """Bias-free two-layer parameters with hidden map V and output map U."""
    return MlpParams([V, U])


def random_params(widths: Sequence[int], rng, scale=1.0, biases=False):
    """Gaussian weights with variance scale^2 / fan_in."""
    ws = [rng.standard_normal((widths[i + 1], widths[i])) * scale / math.sqrt(widths[i])
          for i in range(len(widths) - 1)]
    bs = [rng.standard_normal(widths[i + 1]) * scale for i in range(len(widths) - 1)] if biases else None
    return MlpParams(ws, bs)


@dataclass(frozen=True)
class Batch:
    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64, ndmin=2)
        Y = np.array(self.Y, dtype=np.float64, ndmin=2)
        if X.shape[1] != Y.shape[1]:
            raise ValueError("X and Y must have the same number of columns")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def k(self):
        return self.X.shape[1]


@dataclass(frozen=True)
class ForwardTrace:
    inputs: np.ndarray
    pre: list = field(default_factory=list)
    post: list = field(default_factory=list)

    @property
    def output(self):
        return self.post[-1]


def _check_acts(params, acts):
    if len(acts) != params.depth:
        raise ValueError(f"{params.depth} layers but {len(acts)} activations")


def forward(params: MlpParams, acts, X) -> ForwardTrace:
    _check_acts(params, acts)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != params.widths[0]:
        raise ValueError(f"input has {X.shape[0]} rows, network expects {params.widths[0]}")
    pre, post = [], []
    a = X
    for i, (w, act) in enumerate(zip(params.weights, acts)):
        z = w @ a
        if params.biases is not None:
            z = z + params.biases[i][:, None]
        a = activation_apply(act, z)
        pre.append(z)
        post.append(a)
    return ForwardTrace(X, pre, post)


def _loss_from_residual(res, k, convention):
    sq = float(np.sum(res * res))
    if convention == "mean":
        return sq / k
    if convention == "half":
        return 0.5 * sq
    if convention == "sum":
        return sq
    raise ValueError(f"unknown loss convention {convention!r}; use one of {CONVENTIONS}")


def _residual_scale(k, convention):
    # dL/dF = scale * (F - Y)
    return {"mean": 2.0 / k, "half": 1.0, "sum": 2.0}[convention]


def loss_mse(params, acts, batch: Batch, convention="mean"):
    out = forward(params, acts, batch.X).output
    if out.shape != batch.Y.shape:
        raise ValueError(f"output shape {out.shape} does not match Y {batch.Y.shape}")
    return _loss_from_residual(out - batch.Y, batch.k, convention)


def _backward(params, acts, trace, upstream):
    gw = [None] * params.depth
    gb = [None] * params.depth
    delta = upstream
    for i in range(params.depth - 1, -1, -1):
        dz = activation_vjp(acts[i], trace.pre[i], delta)
        prev = trace.inputs if i == 0 else trace.post[i - 1]
        gw[i] = dz @ prev.T
        gb[i] = dz.sum(axis=1)
        delta = params.weights[i].T @ dz
    return MlpParams(gw, gb if params.biases is not None else None), delta


def value_and_grad(params, acts, batch: Batch, convention="mean"):
    trace = forward(params, acts, batch.X)
    res = trace.output - batch.Y
    g, _ = _backward(params, acts, trace, _residual_scale(batch.k, convention) * res)
    return _loss_from_residual(res, batch.k, convention), g


def grad(params, acts, batch: Batch, convention="mean"):
    return value_and_grad(params, acts, batch, convention)[1]


def input_grad(params, acts, batch: Batch, convention="mean"):
    """dL/dX with the parameters held fixed."""
    trace = forward(params, acts, batch.X)
    res = trace.output - batch.Y
    _, dx = _backward(params, acts, trace, _residual_scale(batch.k, convention) * res)
    return dx


def grad_fd(params, acts, batch: Batch, step=1e-5, convention="mean"):
    """Central finite differences, one coordinate at a time."""
    theta = params.flatten()
    out = np.empty_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = step
        lp = loss_mse(params.unflatten(theta + e), acts, batch, convention)
        lm = loss_mse(params.unflatten(theta - e), acts, batch, convention)
        out[j] = (lp - lm) / (2.0 * step)
    return params.unflatten(out)


# ---------------------------------------------------------------- model files

def _num(x):
    x = float(x)
    if not math.isfinite(x):
        raise ValueError("model files hold finite numbers only")
    return format(x, ".17g")


def _nums(a):
    return "[" + ",".join(_num(x) for x in np.asarray(a).ravel()) + "]"


def model_to_json(params: MlpParams, acts) -> str:
    _check_acts(params, acts)
    ws = ",".join('{"rows":%d,"cols":%d,"data":%s}' % (w.shape[0], w.shape[1], _nums(w))
                  for w in params.weights)
    if params.biases is None:
        bs = "null"
    else:
        bs = "[" + ",".join('{"len":%d,"data":%s}' % (b.size, _nums(b)) for b in params.biases) + "]"
    act_parts = []
    for a in acts:
        d = a.to_dict()
        items = []
        for key, val in d.items():
            items.append(json.dumps(key) + ":" + (_num(val) if isinstance(val, float) else json.dumps(val)))
        act_parts.append("{" + ",".join(items) + "}")
    widths = json.dumps(list(params.widths))
    return ('{"widths":%s,"weights":[%s],"biases":%s,"activations":[%s]}'
            % (widths, ws, bs, ",".join(act_parts)))


def model_from_json(text: str):
    doc = json.loads(text)
    extra = set(doc) - {"widths", "weights", "biases", "activations"}
    if extra:
        raise ValueError(f"unknown model keys: {sorted(extra)}")
    ws = []
    for w in doc["weights"]:
        if set(w) != {"rows", "cols", "data"}:
            raise ValueError("weight entries need exactly rows, cols, data")
        data = np.array(w["data"], dtype=np.float64)
        if data.size != w["rows"] * w["cols"]:
            raise ValueError("weight data length does not match rows*cols")
        ws.append(data.reshape(w["rows"], w["cols"]))
    bs = None
    if doc.get("biases") is not None:
        bs = []
        for b in doc["biases"]:
            data = np.array(b["data"], dtype=np.float64)
            if "len" in b and b["len"] != data.size:
                raise ValueError("bias length mismatch")
            bs.append(data)
    params = MlpParams(ws, bs)
    if list(params.widths) != list(doc["widths"]):
        raise ValueError(f"widths {doc['widths']} disagree with weights {params.widths}")
    acts = [Activation.from_dict(a) for a in doc["activations"]]
    _check_acts(params, acts)
    return params, acts


def save_model(path, params, acts):
    from .io import atomic_write_text

    atomic_write_text(path, model_to_json(params, acts))


def load_model(path):
    with open(path) as fh:
        return model_from_json(fh.read())
