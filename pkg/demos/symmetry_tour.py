"""Hidden-layer symmetries of a small MLP: which group actions leave the loss alone.

    python3 demos/symmetry_tour.py
"""
import warnings

import numpy as np

from noetherkit.network import (Batch, Identity, LeakyReLU, RadialRescale, Sigmoid, forward,
                                loss_mse, random_params)
from noetherkit.nonlinear import apply_nonlinear_action
from noetherkit.symmetry import (GENERAL_LINEAR, ORTHOGONAL, POSITIVE_DIAGONAL,
                                 apply_linear_action, orbit_dimension_formula,
                                 orbit_dimension_generic, sample_group_element,
                                 sample_hidden_group)

rng = np.random.default_rng(0)
widths = [3, 5, 2]
params = random_params(widths, rng)
batch = Batch(rng.standard_normal((3, 16)), rng.standard_normal((2, 16)))

print("loss change under a random hidden-layer group element")
for act, kind in ((Identity(), GENERAL_LINEAR), (LeakyReLU(0.1), POSITIVE_DIAGONAL),
                  (RadialRescale("inverse_square"), ORTHOGONAL), (Sigmoid(), GENERAL_LINEAR)):
    acts = [act, Identity()]
    g = sample_hidden_group(params, kind, 0.5, rng)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        moved = apply_linear_action(params, g)
    delta = abs(loss_mse(moved, acts, batch) - loss_mse(params, acts, batch))
    print(f"  {str(act):30s} {kind:16s} |dL| = {delta:.2e}")

# sigmoid has no linear symmetry, but a data-dependent one fixes the output at one anchor
V, U = params.weights
x = rng.standard_normal(3)
g = sample_group_element(GENERAL_LINEAR, 5, 0.5, rng)
U2, V2 = apply_nonlinear_action(U, V, x, g, Sigmoid())


def out(U, V, z):
    return forward(type(params)([V, U]), [Sigmoid(), Identity()], z.reshape(-1, 1)).output.ravel()


z = rng.standard_normal(3)
print("\nnonlinear action with sigmoid")
print(f"  at the anchor     |df| = {np.linalg.norm(out(U2, V2, x) - out(U, V, x)):.2e}")
print(f"  at another input  |df| = {np.linalg.norm(out(U2, V2, z) - out(U, V, z)):.2e}")

print("\ngeneric orbit dimension, table vs stabilizer count (n, h, m) = (1, h, 1)")
for h in (1, 2, 3, 4):
    row = [f"{cls}: {orbit_dimension_formula(cls, 1, h, 1)}/{orbit_dimension_generic(cls, 1, h, 1)}"
           for cls in ("FullGL", "PositiveDiagonal", "Orthogonal")]
    print(f"  h={h}  " + "  ".join(row))
