"""
Projecting onto the ambiguous space
===================================

Compare the hard SVD projector with its soft, matrix-free counterpart, and
check the single-coil closed form.
"""

# %%
import numpy as np

from tgvn import CGConfig, ForwardOp, approx_project, exact_projector, materialize, singlecoil_project
from tgvn.data import make_coil_maps, make_mask

op = ForwardOp(make_coil_maps(2, (8, 8), 3), make_mask(8, "random", 2, 0.125, 3))
dense = materialize(op)
rng = np.random.default_rng(0)
z = rng.standard_normal(op.shape) + 1j * rng.standard_normal(op.shape)

# %%
# The soft version weights each right singular vector by
# delta^2 / (delta^2 + sigma^2). Conjugate gradient applies it without ever
# forming the matrix.
delta = 1 / 3
_, s, vh = np.linalg.svd(dense, full_matrices=True)
sig = np.zeros(64)
sig[: s.size] = s
weights = delta**2 / (delta**2 + sig**2)
soft = (vh.conj().T * weights) @ vh @ z.ravel()
cg = approx_project(op, delta, z, CGConfig(max_iters=200, tol=1e-10))
print(f"CG vs SVD weights: {np.linalg.norm(cg.ravel() - soft) / np.linalg.norm(z):.2e}")

# %%
# The hard projector keeps exactly the directions with sigma < delta. Every
# unit vector from that space changes the measurements by at most delta.
p = exact_projector(dense, delta)
x_a = p @ z.ravel()
x_a /= np.linalg.norm(x_a)
print(f"||A x_a|| = {np.linalg.norm(dense @ x_a):.3f} < delta = {delta:.3f}")

# %%
# With one coil and identity sensitivity, A^H A is diagonal in k-space:
# kept lines are scaled by delta^2 / (1 + delta^2), which is 0.1 here.
single = ForwardOp.single_coil((8, 8), op.mask)
closed = singlecoil_project(op.mask, delta, z)
iterative = approx_project(single, delta, z, CGConfig(max_iters=200, tol=1e-12))
print(f"closed form vs CG: {np.max(np.abs(closed - iterative)):.2e}")
