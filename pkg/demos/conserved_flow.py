"""Conserved quantities along gradient flow, and how gradient descent breaks them.

    python3 demos/conserved_flow.py
"""
import numpy as np

from noetherkit.conserved import QSpec
from noetherkit.flow import FlowConfig, run_gd, run_gf
from noetherkit.network import Batch, Identity, LeakyReLU, Tanh, random_params

rng = np.random.default_rng(1)
widths = [4, 6, 3]
params = random_params(widths, rng)
# whitened inputs (X = I): the tanh quantity is only conserved there
batch = Batch(np.eye(4), rng.standard_normal((3, 4)))

cases = [("linear", Identity(), QSpec("ImbalanceMatrix", layer=1)),
         ("leaky relu", LeakyReLU(0.2), QSpec("HomogeneousDiag", layer=1)),
         ("tanh", Tanh(), QSpec("ElementwiseIntegral", activation=Tanh()))]

print("max |Q(t) - Q(0)| over 1000 steps to t = 1")
print(f"  {'network':12s} {'Q':12s} {'rk4':>10s} {'gd':>10s}")
for label, act, spec in cases:
    acts = [act, Identity()]
    cfg = FlowConfig(mode="rk4", step=1e-3, steps=1000, record_every=10, q_specs=(spec,))
    gf = run_gf(params, acts, batch, cfg)
    gd = run_gd(params, acts, batch, cfg)
    print(f"  {label:12s} {spec.name:12s} {gf.q_drift(spec.name):10.2e} "
          f"{gd.q_drift(spec.name):10.2e}")

print("\ngd drift of the linear imbalance shrinks with the step size")
acts, spec = [Identity(), Identity()], QSpec("ImbalanceMatrix", layer=1)
for eta in (1e-1, 1e-2, 1e-3):
    steps = int(round(1.0 / eta))
    cfg = FlowConfig(mode="gd", step=eta, steps=steps, record_every=1, q_specs=(spec,))
    print(f"  eta = {eta:<6g} drift = {run_gd(params, acts, batch, cfg).q_drift(spec.name):.2e}")
