"""Refinement / side-map blocks and the scalar trainer."""
from .blocks import RefinementSpec, SideMapSpec, apply_refinement, apply_sidemap, identity_kernel
from .fit import FitReport, expand_free, fit_scalars, reconstruction_loss

__all__ = [
    "RefinementSpec",
    "SideMapSpec",
    "apply_refinement",
    "apply_sidemap",
    "identity_kernel",
    "FitReport",
    "fit_scalars",
    "expand_free",
    "reconstruction_loss",
]
