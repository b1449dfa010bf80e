"""Refinement and side-map blocks.

These stand in for the learned networks of an unrolled reconstruction: a
refinement block returns a regularizer-gradient surrogate that the cascade
subtracts, and a side-map block turns side information into an image the
iterate can be compared against.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import convolve2d

__all__ = ["RefinementSpec", "SideMapSpec", "apply_refinement", "apply_sidemap", "identity_kernel"]


def identity_kernel(size: int = 1) -> np.ndarray:
    if size < 1 or size % 2 == 0:
        raise ValueError("kernel side must be odd and positive")
    k = np.zeros((size, size), dtype=np.complex128)
    k[size // 2, size // 2] = 1.0
    return k


def _check_kernel(kernel) -> np.ndarray:
    kernel = np.asarray(kernel, dtype=np.complex128)
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1]:
        raise ValueError("kernel must be square")
    if kernel.shape[0] % 2 == 0 or kernel.shape[0] > 7:
        raise ValueError("kernel side must be odd and at most 7")
    return kernel


def _convolve(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    if kernel.shape[0] > x.shape[0] or kernel.shape[1] > x.shape[1]:
        raise ValueError(f"kernel {kernel.shape} is larger than image {x.shape}")
    return convolve2d(x, kernel, mode="same", boundary="fill", fillvalue=0)


@dataclass(frozen=True, eq=False)
class RefinementSpec:
    """``kind`` is one of ``zero``, ``tikhonov`` (``lam * x``) or ``conv``."""

    kind: str = "zero"
    lam: float = 0.0
    kernel: np.ndarray = field(default_factory=identity_kernel)

    def __post_init__(self):
        if self.kind not in ("zero", "tikhonov", "conv"):
            raise ValueError(f"unknown refinement kind {self.kind!r}")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        object.__setattr__(self, "kernel", _check_kernel(self.kernel))

    def with_params(self, **kw) -> RefinementSpec:
        return replace(self, **kw)


@dataclass(frozen=True, eq=False)
class SideMapSpec:
    """``kind`` is one of ``identity``, ``linear`` (convolution) or ``oracle``.

    The oracle kind returns a stored ground-truth image regardless of its
    input. It exists for upper-bound experiments only and must be requested
    with ``allow_oracle=True``. With ``payload=None`` the experiment harness
    binds each slice's ground truth before running.
    """

    kind: str = "identity"
    kernel: np.ndarray = field(default_factory=identity_kernel)
    payload: np.ndarray | None = None
    allow_oracle: bool = False

    def __post_init__(self):
        if self.kind not in ("identity", "linear", "oracle"):
            raise ValueError(f"unknown side-map kind {self.kind!r}")
        if self.kind == "oracle" and not self.allow_oracle:
            raise ValueError("oracle side maps are restricted to test/experiment harnesses")
        object.__setattr__(self, "kernel", _check_kernel(self.kernel))

    @classmethod
    def oracle(cls, payload: np.ndarray | None = None) -> SideMapSpec:
        return cls(kind="oracle", payload=payload, allow_oracle=True)

    def bind(self, truth: np.ndarray) -> SideMapSpec:
        """Attach ``truth`` as the oracle payload; other kinds are returned unchanged."""
        if self.kind != "oracle":
            return self
        return replace(self, payload=np.asarray(truth))

    def with_params(self, **kw) -> SideMapSpec:
        return replace(self, **kw)


def apply_refinement(spec: RefinementSpec, x: np.ndarray) -> np.ndarray:
    if spec.kind == "zero":
        return np.zeros(np.shape(x), dtype=np.complex128)
    if spec.kind == "tikhonov":
        return spec.lam * x
    return _convolve(x, spec.kernel)


def apply_sidemap(spec: SideMapSpec, s: np.ndarray, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Map side information ``s`` onto the reconstruction grid.

    ``shape`` is the reconstruction grid; a mismatch with ``s`` (or with the
    oracle payload) raises ``ValueError``.
    """
    if spec.kind == "oracle":
        if spec.payload is None:
            raise ValueError("oracle side map has no payload bound")
        out = np.asarray(spec.payload)
    else:
        s = np.asarray(s)
        out = s if spec.kind == "identity" else _convolve(s, spec.kernel)
    if shape is not None and out.shape != tuple(shape):
        raise ValueError(f"side map output {out.shape} does not match grid {tuple(shape)}")
    return out
