"""Gradient descent and RK4 gradient flow with trajectory recording.

The integrator works on flat vectors; network problems are flattened through
MlpParams and unflattened again whenever a conserved quantity is evaluated.
Also here: the one-step drift identity for the layer imbalance, finite
difference Hessians and the spectral (singular-frame) initialization.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import linalg
from .io import write_csv
from .network import Batch, Identity, MlpParams, RowRadial, value_and_grad

MODES = ("gd", "rk4")


class DivergenceError(RuntimeError):
    """The loss became non-finite; carries the last finite state."""

    def __init__(self, step, last_state, last_loss):
        super().__init__(f"loss diverged at step {step} (last finite loss {last_loss:.3e})")
        self.step = step
        self.last_state = last_state
        self.last_loss = last_loss


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class FlowConfig:
    mode: str = "gd"
    step: float = 1e-2
    steps: int = 1000
    record_every: int = 1
    q_specs: tuple = ()
    gtol: float = 1e-12
    ltol: float = 0.0
    convention: str = "mean"
    snapshots: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not self.step > 0:
            raise ValueError("step size must be > 0")
        if self.steps < 1 or self.record_every < 1:
            raise ValueError("steps and record_every must be >= 1")
        object.__setattr__(self, "q_specs", tuple(self.q_specs))


@dataclass
class Trajectory:
    step: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    q: dict = field(default_factory=dict)
    dq: dict = field(default_factory=dict)
    snapshots: list = field(default_factory=list)
    final_state: object = None
    stopped: str = "steps"

    def q_drift(self, name):
        """max_t |Q(t) - Q(0)| (Frobenius over components)."""
        return max(float(np.linalg.norm(d)) for d in self.dq[name])

    def csv_columns(self):
        cols = ["step", "loss", "grad_norm"]
        for prefix, series in (("q", self.q), ("dq", self.dq)):
            for name, values in series.items():
                size = np.asarray(values[0]).size
                cols += [f"{prefix}_{name}"] if size == 1 else [
                    f"{prefix}_{name}_{j}" for j in range(size)]
        return cols

    def csv_rows(self):
        rows = []
        for t in range(len(self.step)):
            row = [int(self.step[t]), float(self.loss[t]), float(self.grad_norm[t])]
            for series in (self.q, self.dq):
                for values in series.values():
                    row += [float(x) for x in np.asarray(values[t]).ravel()]
            rows.append(row)
        return rows

    def to_csv(self, path):
        write_csv(path, self.csv_columns(), self.csv_rows())


def integrate(y0, loss_and_grad: Callable, cfg: FlowConfig, wrap: Callable = None):
    """Run GD or RK4 on -grad L from the flat state y0.

    `loss_and_grad(y)` returns (loss, gradient); `wrap(y)` converts a flat state
    into whatever the configured QSpecs evaluate on.
    """
    wrap = wrap or (lambda y: y)
    y = np.array(y0, dtype=np.float64)
    traj = Trajectory()
    q0 = {}
    for spec in cfg.q_specs:
        q0[spec.name] = np.asarray(spec.evaluate(wrap(y)), dtype=np.float64)
        traj.q[spec.name] = []
        traj.dq[spec.name] = []

    def record(t, loss, gnorm, y):
        traj.step.append(t)
        traj.loss.append(loss)
        traj.grad_norm.append(gnorm)
        state = wrap(y)
        for spec in cfg.q_specs:
            val = np.asarray(spec.evaluate(state), dtype=np.float64)
            traj.q[spec.name].append(val)
            traj.dq[spec.name].append(val - q0[spec.name])
        if cfg.snapshots:
            traj.snapshots.append(y.copy())

    h = cfg.step
    loss, g = loss_and_grad(y)
    if not math.isfinite(loss):
        raise DivergenceError(0, wrap(y), float("nan"))
    for t in range(cfg.steps + 1):
        gnorm = float(np.linalg.norm(g))
        done = gnorm < cfg.gtol or loss < cfg.ltol
        if t % cfg.record_every == 0 or t == cfg.steps or done:
            record(t, loss, gnorm, y)
        if done:
            traj.stopped = "gtol" if gnorm < cfg.gtol else "ltol"
            break
        if t == cfg.steps:
            break
        if cfg.mode == "gd":
            y_new = y - h * g
        else:
            k1 = -g
            k2 = -loss_and_grad(y + 0.5 * h * k1)[1]
            k3 = -loss_and_grad(y + 0.5 * h * k2)[1]
            k4 = -loss_and_grad(y + h * k3)[1]
            y_new = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y_new)):
            raise DivergenceError(t + 1, wrap(y), loss)
        new_loss, new_g = loss_and_grad(y_new)
        if not (math.isfinite(new_loss) and np.all(np.isfinite(new_g))):
            raise DivergenceError(t + 1, wrap(y), loss)
        y, loss, g = y_new, new_loss, new_g
    traj.final_state = wrap(y)
    return traj


def _network_problem(params: MlpParams, acts, batch: Batch, convention):
    def loss_and_grad(theta):
        p = params.unflatten(theta)
        with np.errstate(over="ignore", invalid="ignore"):
            loss, g = value_and_grad(p, acts, batch, convention)
        return loss, g.flatten()

    return loss_and_grad, params.unflatten


def run_gd(params: MlpParams, acts, batch: Batch, cfg: FlowConfig) -> Trajectory:
    if cfg.mode != "gd":
        cfg = FlowConfig(**{**cfg.__dict__, "mode": "gd"})
    fn, wrap = _network_problem(params, acts, batch, cfg.convention)
    return integrate(params.flatten(), fn, cfg, wrap)


def run_gf(params: MlpParams, acts, batch: Batch, cfg: FlowConfig) -> Trajectory:
    if cfg.mode != "rk4":
        cfg = FlowConfig(**{**cfg.__dict__, "mode": "rk4"})
    fn, wrap = _network_problem(params, acts, batch, cfg.convention)
    return integrate(params.flatten(), fn, cfg, wrap)


# ---------------------------------------------------------------- one-step drift

def delta_q_identity(U, V, G_U, G_V, eta):
    """Exact one-step change of Tr[U^T U - V V^T] under GD and its bound."""
    gu = float(np.sum(np.asarray(G_U) ** 2))
    gv = float(np.sum(np.asarray(G_V) ** 2))
    return eta**2 * (gu - gv), eta**2 * (gu + gv)


def trace_q_change(U0, V0, U1, V1):
    """Tr[U1^T U1 - V1 V1^T] - Tr[U0^T U0 - V0 V0^T] as sums of (a-b)(a+b)."""
    U0, V0, U1, V1 = (np.asarray(m, dtype=np.float64) for m in (U0, V0, U1, V1))
    return float(np.sum((U1 - U0) * (U1 + U0)) - np.sum((V1 - V0) * (V1 + V0)))


def increment_q_change(U, V, dU, dV):
    """Change of Tr[U^T U - V V^T] along (dU, dV) without rounding to a new state.

    Storing U + dU costs about eps |U|^2, which swamps eta^2 |G|^2 for small steps.
    """
    U, V, dU, dV = (np.asarray(m, dtype=np.float64) for m in (U, V, dU, dV))
    return float(np.sum(dU * (2.0 * U + dU)) - np.sum(dV * (2.0 * V + dV)))


# ---------------------------------------------------------------- Hessians

@dataclass(frozen=True)
class HessianReport:
    eigenvalues: np.ndarray
    near_zero: int
    largest: float
    threshold: float

    @property
    def surviving(self):
        return self.eigenvalues[np.abs(self.eigenvalues) > self.threshold]


def hessian_from_grad(grad_fn, theta, step_scale=1e-4, symmetrize=True):
    """Central differences of an analytic gradient, step step_scale * (1 + |theta_i|)."""
    theta = np.asarray(theta, dtype=np.float64)
    n = theta.size
    H = np.empty((n, n))
    for i in range(n):
        h = step_scale * (1.0 + abs(theta[i]))
        e = np.zeros(n)
        e[i] = h
        H[:, i] = (grad_fn(theta + e) - grad_fn(theta - e)) / (2.0 * h)
    return 0.5 * (H + H.T) if symmetrize else H


def hessian_fd(params: MlpParams, acts, batch: Batch, step_scale=1e-4, convention="mean",
               max_params=500, symmetrize=True):
    if params.n_params > max_params:
        raise ValueError(f"{params.n_params} parameters exceed the Hessian cost guard "
                         f"({max_params}); raise max_params explicitly")
    fn, _ = _network_problem(params, acts, batch, convention)
    return hessian_from_grad(lambda th: fn(th)[1], params.flatten(), step_scale, symmetrize)


def hessian_spectrum(params, acts, batch, convention="mean", threshold=1e-3,
                     max_params=500, step_scale=1e-4):
    H = hessian_fd(params, acts, batch, step_scale, convention, max_params)
    w, _ = linalg.eigh_jacobi(H)
    return HessianReport(w, int(np.sum(np.abs(w) <= threshold)), float(w[-1]), threshold)


def train_to_critical(params, acts, batch, convention="mean", lr=1e-2, max_steps=200000,
                      gtol=1e-8, mode="gd"):
    """Descend until |grad L| < gtol; raises ConvergenceError otherwise."""
    cfg = FlowConfig(mode=mode, step=lr, steps=max_steps, record_every=max_steps,
                     gtol=gtol, convention=convention)
    traj = (run_gd if mode == "gd" else run_gf)(params, acts, batch, cfg)
    if traj.stopped != "gtol":
        raise ConvergenceError(f"|grad L| = {traj.grad_norm[-1]:.3e} after {max_steps} steps")
    return traj.final_state, traj


# ---------------------------------------------------------------- spectral frame

@dataclass(frozen=True)
class SpectralInit:
    U0: np.ndarray
    V0: np.ndarray
    Phi: np.ndarray
    Psi: np.ndarray
    u_bar: np.ndarray
    v_bar: np.ndarray
    sigma_y: np.ndarray


def spectral_init(Y, rng, low=0.1, high=1.1):
    """U0 = Phi diag(u), V0 = Psi diag(v) in the singular frame Y = Phi Sigma Psi^T."""
    Y = np.asarray(Y, dtype=np.float64)
    Phi, s, Psi = linalg.svd_jacobi(Y)
    h = s.size
    u = rng.uniform(low, high, h)
    v = rng.uniform(low, high, h)
    return SpectralInit(Phi * u, Psi * v, Phi, Psi, u, v, s)


def spectral_network(U, V, Y):
    """Loss 1/2 |Y - U g(V^T)|^2 with g the row-radial map h(r) = 1/r^2, as an MLP."""
    Y = np.asarray(Y, dtype=np.float64)
    n = Y.shape[1]
    params = MlpParams([np.asarray(V).T, np.asarray(U)])
    return params, [RowRadial("inverse_square"), Identity()], Batch(np.eye(n), Y)


def radial_spectral_rhs(u, v, sigma_y):
    """Per-index velocities of the decoupled flow with g(v) = 1/v."""
    u, v, sy = (np.asarray(t, dtype=np.float64) for t in (u, v, sigma_y))
    if np.any(v == 0.0):
        raise ValueError("v must be nonzero")
    r = sy - u / v
    return r / v, -r * u / v**2


def radial_sigma_dot(u, v, sigma_y):
    """d/dt (u/v) along the flow, computed from the velocities."""
    ud, vd = radial_spectral_rhs(u, v, sigma_y)
    return ud / v - u * vd / v**2


def radial_problem(sigma_y):
    sy = np.asarray(sigma_y, dtype=np.float64)
    h = sy.size

    def loss_and_grad(y):
        u, v = y[:h], y[h:]
        if np.any(v == 0.0):
            return float("nan"), np.full_like(y, np.nan)
        ud, vd = radial_spectral_rhs(u, v, sy)
        r = sy - u / v
        return 0.5 * float(r @ r), -np.concatenate([ud, vd])

    return loss_and_grad


def run_radial_flow(u0, v0, sigma_y, dt, steps, record_every=1, q_specs=()):
    cfg = FlowConfig(mode="rk4", step=dt, steps=steps, record_every=record_every,
                     q_specs=q_specs, gtol=0.0, snapshots=True)
    return integrate(np.concatenate([u0, v0]), radial_problem(sigma_y), cfg)


def ellipse_problem(a):
    def loss_and_grad(w):
        return float(w[0] ** 2 + a * w[1] ** 2), np.array([2.0 * w[0], 2.0 * a * w[1]])

    return loss_and_grad
