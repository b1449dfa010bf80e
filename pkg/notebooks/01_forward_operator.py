"""
The multi-coil forward operator
===============================

Build a small parallel-imaging forward model, check its adjoint with a
dot test and look at the singular values of the dense matrix.
"""

# %%
# Coil maps are normalized so that the squared magnitudes sum to one at every
# pixel; with a full mask the operator is then an isometry.
import numpy as np

from tgvn import ForwardOp, adjoint, forward, materialize
from tgvn.data import make_coil_maps, make_mask

maps = make_coil_maps(4, (16, 16), seed=0)
print("sum |S|^2 range:", np.ptp(np.sum(np.abs(maps) ** 2, axis=0)))

# %%
# Keep a quarter of the phase-encode lines, with a fully sampled centre.
mask = make_mask(16, "random", accel=4, center_fraction=0.125, seed=0)
print("kept lines:", np.flatnonzero(mask.kept))
op = ForwardOp(maps, mask)

# %%
# Dot test: <A x, k> and <x, A^H k> agree to rounding error.
rng = np.random.default_rng(1)
x = rng.standard_normal(op.shape) + 1j * rng.standard_normal(op.shape)
k = rng.standard_normal(op.kspace_shape) + 1j * rng.standard_normal(op.kspace_shape)
lhs = np.vdot(k, forward(x, op))
rhs = np.vdot(adjoint(k, op), x)
print(f"dot test mismatch: {abs(lhs - rhs):.2e}")

# %%
# The dense matrix has one row per kept k-space sample. Its singular values
# sit in [0, 1]; the small ones are the directions the measurements barely see.
dense = materialize(op)
sigma = np.linalg.svd(dense, compute_uv=False)
print("matrix shape:", dense.shape)
print("sigma max / min:", sigma.max(), sigma.min())
print("fraction below 1/3:", np.mean(sigma < 1 / 3))
