"""Unrolled cascade execution.

Each step of the cascade updates the iterate as

    x <- x - eta * A^H (A x - k) - G(x) - Phi(x)

where ``Phi`` is the refinement block and ``G`` depends on the mode:

* ``varnet``: ``G = 0``,
* ``tgvn``:   ``G = mu * P(x - H(s))`` with ``P`` the ambiguous-space projector,
* ``noproj``: ``G = mu * (x - H(s))``.

The cascade starts from the zero-filled reconstruction ``A^H k``, or from
zero with ``init="zero"``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .cg import CGConfig
from .operators import ForwardOp
from .plugins.blocks import RefinementSpec, SideMapSpec, apply_refinement, apply_sidemap
from .projector import ProjectorSpec, make_projector, trust_guidance

__all__ = [
    "CascadeConfig",
    "CascadeTrace",
    "StepParams",
    "NonFiniteError",
    "cascade_step",
    "run_cascade",
    "normalize_complex",
    "denormalize_complex",
    "WhiteningState",
]

MODES = ("varnet", "tgvn", "noproj")
INITS = ("adjoint", "zero")


class NonFiniteError(FloatingPointError):
    """A cascade step produced NaN or infinity."""

    def __init__(self, step: int, what: str = "iterate"):
        super().__init__(f"non-finite {what} at cascade step {step}")
        self.step = step


def _per_step(value, T: int, name: str) -> tuple:
    if isinstance(value, (list, tuple)):
        if len(value) != T:
            raise ValueError(f"{name} has {len(value)} entries, expected T={T}")
        return tuple(value)
    return (value,) * T


@dataclass(frozen=True)
class CascadeConfig:
    """Parameters of a ``T``-step unrolled cascade.

    Scalars and single specs are broadcast to all ``T`` steps. ``mu`` is
    ignored in ``varnet`` mode; ``projector`` selects how the ambiguous-space
    projection is evaluated in ``tgvn`` mode.
    """

    T: int
    mode: str = "varnet"
    eta: Sequence[float] | float = 1.0
    mu: Sequence[float] | float = 0.1
    delta: float = 1.0 / 3.0
    refinement: Sequence[RefinementSpec] | RefinementSpec = field(default_factory=RefinementSpec)
    sidemap: Sequence[SideMapSpec] | SideMapSpec = field(default_factory=SideMapSpec)
    cg: CGConfig = field(default_factory=CGConfig)
    projector: str = "cg"
    normalize_refinement: bool = False
    init: str = "adjoint"

    def __post_init__(self):
        if self.T < 0:
            raise ValueError("T must be >= 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}, got {self.init!r}")
        for name in ("eta", "mu", "refinement", "sidemap"):
            object.__setattr__(self, name, _per_step(getattr(self, name), self.T, name))
        object.__setattr__(self, "eta", tuple(float(e) for e in self.eta))
        object.__setattr__(self, "mu", tuple(float(m) for m in self.mu))
        if any(not np.isfinite(e) or e < 0 for e in self.eta):
            raise ValueError("eta entries must be finite and >= 0")
        if any(not np.isfinite(m) or m < 0 for m in self.mu):
            raise ValueError("mu entries must be finite and >= 0")
        # validates delta and projector mode
        ProjectorSpec(self.delta, self.projector, self.cg)

    @property
    def projector_spec(self) -> ProjectorSpec:
        return ProjectorSpec(self.delta, self.projector, self.cg)

    def step(self, t: int) -> StepParams:
        return StepParams(self.eta[t], self.mu[t], self.refinement[t], self.sidemap[t])

    def replace(self, **kw) -> CascadeConfig:
        return replace(self, **kw)

    def bind_oracle(self, truth: np.ndarray) -> CascadeConfig:
        return replace(self, sidemap=tuple(sm.bind(truth) for sm in self.sidemap))


@dataclass(frozen=True)
class StepParams:
    eta: float
    mu: float
    refinement: RefinementSpec
    sidemap: SideMapSpec


@dataclass
class CascadeTrace:
    """Iterates ``x^0 .. x^T`` with per-iterate residuals ``||A x^t - k||``
    and per-step trust-guidance norms."""

    iterates: list[np.ndarray]
    dc_residuals: list[float]
    guidance_norms: list[float]


@dataclass(frozen=True)
class WhiteningState:
    mean: complex
    whiten: np.ndarray
    unwhiten: np.ndarray


_DEGENERATE_RTOL = 1e-12


def normalize_complex(img: np.ndarray) -> tuple[np.ndarray, WhiteningState]:
    """Center and decorrelate the real and imaginary channels of ``img``.

    With channel covariance ``C`` and ``L = cholesky(inv(C))`` the channels
    are mapped by ``L.T``, giving zero mean and identity covariance.
    Singular covariances (constant channels) get ``1e-8 * I`` added first.
    """
    img = np.asarray(img)
    if img.size < 2:
        raise ValueError("need at least two pixels to estimate a covariance")
    chans = np.stack([img.real.ravel(), img.imag.ravel()])
    mean = chans.mean(axis=1)
    centered = chans - mean[:, None]
    cov = centered @ centered.T / centered.shape[1]
    scale = max(np.trace(cov), np.finfo(float).tiny)
    if np.linalg.eigvalsh(cov)[0] <= _DEGENERATE_RTOL * scale:
        cov = cov + 1e-8 * np.eye(2)
    chol = np.linalg.cholesky(np.linalg.inv(cov))
    whiten = chol.T
    unwhiten = np.linalg.inv(whiten)
    out = whiten @ centered
    state = WhiteningState(complex(mean[0], mean[1]), whiten, unwhiten)
    return (out[0] + 1j * out[1]).reshape(img.shape), state


def denormalize_complex(img: np.ndarray, state: WhiteningState) -> np.ndarray:
    """Inverse of the affine map applied by :func:`normalize_complex`."""
    img = np.asarray(img)
    chans = np.stack([img.real.ravel(), img.imag.ravel()])
    out = state.unwhiten @ chans
    return (out[0] + 1j * out[1]).reshape(img.shape) + state.mean


def _wrapped(fn, x: np.ndarray, normalize: bool) -> np.ndarray:
    if not normalize:
        return fn(x)
    xn, state = normalize_complex(x)
    return denormalize_complex(fn(xn), state)


def _check_finite(arr: np.ndarray, step: int, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(step, what)


def _step(x, k, s, op, params: StepParams, mode, projector, normalize, t):
    dc = op.adjoint(op.forward(x) - k)
    phi = _wrapped(lambda v: apply_refinement(params.refinement, v), x, normalize)
    _check_finite(phi, t, "refinement output")
    guidance = None
    if mode != "varnet":
        src = s if s is not None else params.sidemap.payload
        h = _wrapped(lambda v: apply_sidemap(params.sidemap, v, op.shape), src, normalize)
        _check_finite(h, t, "side map output")
        if mode == "tgvn":
            guidance = trust_guidance(x, h, params.mu, None, op, projector=projector)
        else:
            guidance = params.mu * (x - h)
    if guidance is None:
        x_new = x - params.eta * dc - phi
    else:
        x_new = x - params.eta * dc - guidance - phi
    _check_finite(x_new, t, "iterate")
    return x_new, guidance


def cascade_step(
    x: np.ndarray,
    k: np.ndarray,
    s: np.ndarray | None,
    op: ForwardOp,
    params: StepParams,
    mode: str = "varnet",
    projector: ProjectorSpec | None = None,
    normalize_refinement: bool = False,
    step_index: int = 0,
) -> np.ndarray:
    """One cascade update; see the module docstring for the three modes."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    x = np.asarray(x, dtype=np.complex128)
    if x.shape != op.shape:
        raise ValueError(f"iterate shape {x.shape} does not match operator {op.shape}")
    if mode != "varnet" and s is None and params.sidemap.kind != "oracle":
        raise ValueError(f"mode {mode!r} needs side information")
    project = None
    if mode == "tgvn" and params.mu != 0:
        project = make_projector(projector or ProjectorSpec(), op)
    x_new, _ = _step(x, k, s, op, params, mode, project, normalize_refinement, step_index)
    return x_new


def run_cascade(
    cfg: CascadeConfig,
    op: ForwardOp,
    k: np.ndarray,
    s: np.ndarray | None = None,
) -> tuple[np.ndarray, CascadeTrace]:
    """Run all ``cfg.T`` steps from ``x^0 = A^H k`` (or zero); deterministic in its inputs."""
    k = np.asarray(k, dtype=np.complex128)
    if k.shape != op.kspace_shape:
        raise ValueError(f"k-space shape {k.shape} does not match operator {op.kspace_shape}")
    needs_side = cfg.mode != "varnet" and any(sm.kind != "oracle" for sm in cfg.sidemap)
    if needs_side and s is None:
        raise ValueError(f"mode {cfg.mode!r} needs side information")
    if s is not None:
        s = np.asarray(s, dtype=np.complex128)

    project = None
    if cfg.mode == "tgvn" and any(m != 0 for m in cfg.mu):
        project = make_projector(cfg.projector_spec, op)

    x = op.adjoint(k) if cfg.init == "adjoint" else np.zeros(op.shape, dtype=np.complex128)
    iterates = [x]
    residuals = [float(np.linalg.norm(op.forward(x) - k))]
    guidance_norms = []
    for t in range(cfg.T):
        x, guidance = _step(
            x, k, s, op, cfg.step(t), cfg.mode, project, cfg.normalize_refinement, t
        )
        iterates.append(x)
        residuals.append(float(np.linalg.norm(op.forward(x) - k)))
        guidance_norms.append(0.0 if guidance is None else float(np.linalg.norm(guidance)))
    return x, CascadeTrace(iterates, residuals, guidance_norms)
