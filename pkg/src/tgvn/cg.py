"""Krylov solvers for Hermitian positive-definite systems.

Two conjugate-direction iterations are available. ``"cr"`` (conjugate
residual) minimizes the residual norm over the Krylov space, so its residual
history never increases; ``"cg"`` is the classic Hestenes-Stiefel iteration,
which minimizes the energy norm of the error instead and may see the residual
norm rise between iterations. Both cost one operator application per
iteration and converge to the same solution.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

METHODS = ("cr", "cg")


@dataclass(frozen=True)
class CGConfig:
    """Stopping rule: whichever of ``max_iters`` or relative residual ``tol`` comes first."""

    max_iters: int = 10
    tol: float = 1e-10
    method: str = "cr"

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")


@dataclass
class CGResult:
    x: np.ndarray
    converged: bool
    iterations: int
    residual_norms: list[float] = field(default_factory=list)


def conjugate_gradient(
    apply: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    config: CGConfig = CGConfig(),
    x0: np.ndarray | None = None,
) -> CGResult:
    """Solve ``apply(x) = b`` for Hermitian positive-definite ``apply``.

    Hitting ``max_iters`` is not an error: the last iterate is returned with
    ``converged=False``. ``residual_norms[0]`` is the initial residual.
    """
    b = np.asarray(b)
    b_norm = np.linalg.norm(b)
    if x0 is None:
        x = np.zeros_like(b)
        r = b.copy()
    else:
        x = np.array(x0, dtype=b.dtype)
        r = b - apply(x)
    history = [float(np.linalg.norm(r))]
    if b_norm == 0.0:
        return CGResult(np.zeros_like(b), True, 0, history)
    if history[0] <= config.tol * b_norm:
        return CGResult(x, True, 0, history)
    step = _cr if config.method == "cr" else _cg
    return step(apply, x, r, b_norm, config, history)


def _cg(apply, x, r, b_norm, config, history):
    p = r.copy()
    rr = np.vdot(r, r).real
    for it in range(1, config.max_iters + 1):
        ap = apply(p)
        alpha = rr / np.vdot(p, ap).real
        x = x + alpha * p
        r = r - alpha * ap
        rr_new = np.vdot(r, r).real
        history.append(float(np.sqrt(rr_new)))
        if history[-1] <= config.tol * b_norm:
            return CGResult(x, True, it, history)
        p = r + (rr_new / rr) * p
        rr = rr_new
    return CGResult(x, False, config.max_iters, history)


def _cr(apply, x, r, b_norm, config, history):
    ar = apply(r)
    p, ap = r.copy(), ar.copy()
    rar = np.vdot(r, ar).real
    for it in range(1, config.max_iters + 1):
        alpha = rar / np.vdot(ap, ap).real
        x = x + alpha * p
        r = r - alpha * ap
        history.append(float(np.linalg.norm(r)))
        if history[-1] <= config.tol * b_norm:
            return CGResult(x, True, it, history)
        ar = apply(r)
        rar_new = np.vdot(r, ar).real
        beta = rar_new / rar
        p = r + beta * p
        ap = ar + beta * ap
        rar = rar_new
    return CGResult(x, False, config.max_iters, history)
