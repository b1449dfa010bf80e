"""Trust-guided unrolled reconstruction for multi-coil MRI inverse problems."""
from .cg import CGConfig, conjugate_gradient
from .operators import ForwardOp, SamplingMask, adjoint, fft2c, forward, gram, ifft2c, materialize
from .plugins import RefinementSpec, SideMapSpec, fit_scalars
from .projector import ProjectorSpec, approx_project, exact_projector, singlecoil_project, trust_guidance
from .solver import CascadeConfig, run_cascade

__version__ = "0.1.0"
