"""
Choosing the ambiguity threshold
================================

Inspect the singular spectrum of an operator and the thresholds the two
heuristic policies suggest.
"""

# %%
import numpy as np

from tgvn import ForwardOp, materialize
from tgvn.data import make_coil_maps, make_mask
from tgvn.spectrum import ambiguous_dim, suggest_delta, svd_spectrum

op = ForwardOp(make_coil_maps(3, (16, 16), 0), make_mask(16, "random", 4, 0.125, 0))
spec = svd_spectrum(materialize(op), vectors=False)
print(f"rank {spec.rank}, null space {spec.null_dim}, sigma in [{spec.positive[-1]:.3f}, {spec.positive[0]:.3f}]")

# %%
# Neither policy is principled; both are offered as starting points.
for policy in ("gap", "quantile"):
    delta = suggest_delta(spec, policy)
    print(f"{policy:>8}: delta {delta:.3f}, ambiguous dimension {ambiguous_dim(spec, delta)}")

# %%
# The ambiguous dimension grows with delta, from the null space upwards.
for delta in np.geomspace(0.01, 1, 5):
    print(f"delta {delta:.3f}: {ambiguous_dim(spec, delta)} directions")
