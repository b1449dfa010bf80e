"""Projections onto the ambiguous space of a forward operator.

The ambiguous space holds the domain directions whose singular values fall
below a threshold ``delta``. Three evaluations of the projection exist:

* ``exact``: binary weights from a full SVD of the dense operator,
* ``cg``: soft weights ``delta**2 / (delta**2 + sigma**2)``, applied as
  ``(I + A^H A / delta**2)^{-1}`` with conjugate gradient,
* ``singlecoil``: the same soft weights in closed form for a single coil with
  identity sensitivity, where ``A^H A`` is diagonal in k-space.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cg import CGConfig, CGResult, conjugate_gradient
from .operators import ForwardOp, SamplingMask, fft2c, ifft2c, materialize
from .spectrum import svd_spectrum

__all__ = [
    "ProjectorSpec",
    "exact_projector",
    "approx_project",
    "singlecoil_project",
    "trust_guidance",
    "make_projector",
]

MODES = ("exact", "cg", "singlecoil")


@dataclass(frozen=True)
class ProjectorSpec:
    delta: float = 1.0 / 3.0
    mode: str = "cg"
    cg: CGConfig = field(default_factory=CGConfig)

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be > 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


def exact_projector(dense: np.ndarray, delta: float) -> np.ndarray:
    """Orthogonal projector onto ``span{v_i : sigma_i < delta}``, null space included."""
    if not delta > 0:
        raise ValueError("delta must be > 0")
    spec = svd_spectrum(dense)
    keep = np.ones(spec.n_cols, dtype=bool)
    keep[: spec.rank] = spec.positive < delta
    v = spec.v[:, keep]
    return v @ v.conj().T


def approx_project(
    op: ForwardOp,
    delta: float,
    z: np.ndarray,
    cg: CGConfig = CGConfig(),
    full_output: bool = False,
):
    """Apply ``(I + A^H A / delta**2)^{-1}`` to ``z`` by conjugate gradient.

    Returns the solution, or ``(solution, CGResult)`` with ``full_output``.
    Non-convergence within ``cg.max_iters`` is reported through the result's
    ``converged`` flag, never raised.
    """
    if not delta > 0:
        raise ValueError("delta must be > 0")
    z = np.asarray(z, dtype=np.complex128)
    if z.shape != op.shape:
        raise ValueError(f"image shape {z.shape} does not match operator shape {op.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("input contains non-finite values")
    inv_d2 = 1.0 / delta**2

    def normal(y):
        return y + inv_d2 * op.gram(y)

    result: CGResult = conjugate_gradient(normal, z, cg)
    if full_output:
        return result.x, result
    return result.x


def singlecoil_project(mask, delta: float, z: np.ndarray) -> np.ndarray:
    """Closed-form soft projection for one coil with identity sensitivity.

    Kept k-space lines are scaled by ``delta**2 / (1 + delta**2)``, unkept
    lines pass unchanged. ``mask`` may be a :class:`SamplingMask` or a raw
    boolean vector over the last axis.
    """
    if not delta > 0:
        raise ValueError("delta must be > 0")
    kept = mask.kept if isinstance(mask, SamplingMask) else np.asarray(mask, dtype=bool)
    d2 = delta**2
    weights = np.where(kept, d2 / (1.0 + d2), 1.0)
    return ifft2c(fft2c(z) * weights)


def make_projector(spec: ProjectorSpec, op: ForwardOp):
    """Return ``z -> P z`` for the requested evaluation mode.

    The exact mode materializes ``op`` and decomposes it once here, so the
    returned callable is cheap to apply repeatedly.
    """
    if spec.mode == "exact":
        p = exact_projector(materialize(op), spec.delta)
        shape = op.shape
        return lambda z: (p @ np.asarray(z).ravel()).reshape(shape)
    if spec.mode == "singlecoil":
        if op.n_coils != 1 or not np.allclose(op.maps, 1.0):
            raise ValueError("singlecoil mode requires one coil with identity sensitivity")
        return lambda z: singlecoil_project(op.mask, spec.delta, z)
    return lambda z: approx_project(op, spec.delta, z, spec.cg)


def trust_guidance(
    x: np.ndarray,
    h: np.ndarray,
    mu: float,
    spec: ProjectorSpec,
    op: ForwardOp,
    projector=None,
) -> np.ndarray:
    """``mu * P(x - h)``, with ``P`` chosen by ``spec.mode``.

    ``projector`` accepts a callable from :func:`make_projector` to avoid
    rebuilding the exact projector on every call.
    """
    x = np.asarray(x)
    h = np.asarray(h)
    if x.shape != h.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {h.shape}")
    if mu < 0:
        raise ValueError("mu must be >= 0")
    if mu == 0:
        return np.zeros(x.shape, dtype=np.complex128)
    if projector is None:
        projector = make_projector(spec, op)
    return mu * projector(x - h)
