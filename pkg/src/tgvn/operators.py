"""Multi-coil Cartesian MRI forward model.

Images are 2-D complex arrays of shape ``(H, W)``; multi-coil k-space is a
``(C, H, W)`` complex array on the full frequency grid, with unkept
phase-encode lines (columns) held at exactly zero.

The FFT is unitary and centered, so at full sampling with coil maps
satisfying ``sum_i |S_i|**2 == 1`` the forward operator is an isometry and
its singular values live on ``[0, 1]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "fft2c",
    "ifft2c",
    "SamplingMask",
    "ForwardOp",
    "forward",
    "adjoint",
    "gram",
    "materialize",
    "MaterializeError",
    "DEFAULT_MAX_ENTRIES",
]

DEFAULT_MAX_ENTRIES = 10**7

_AXES = (-2, -1)


def fft2c(x: np.ndarray) -> np.ndarray:
    """Centered, unitary 2-D FFT over the last two axes."""
    x = np.fft.ifftshift(x, axes=_AXES)
    x = np.fft.fft2(x, axes=_AXES, norm="ortho")
    return np.fft.fftshift(x, axes=_AXES)


def ifft2c(k: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fft2c` (and its adjoint)."""
    k = np.fft.ifftshift(k, axes=_AXES)
    k = np.fft.ifft2(k, axes=_AXES, norm="ortho")
    return np.fft.fftshift(k, axes=_AXES)


@dataclass(frozen=True, eq=False)
class SamplingMask:
    """Phase-encode line selection.

    Parameters
    ----------
    kept : ndarray of bool, shape (W,)
        ``True`` for every acquired column of k-space.
    center_fraction : float
        Fraction of central lines that are always acquired.
    """

    kept: np.ndarray
    center_fraction: float = 0.0

    def __post_init__(self):
        kept = np.asarray(self.kept, dtype=bool)
        if kept.ndim != 1 or kept.size < 1:
            raise ValueError("mask must be a non-empty 1-D boolean vector")
        if not kept.any():
            raise ValueError("mask keeps no lines")
        n_center = center_line_count(kept.size, self.center_fraction)
        lo = center_start(kept.size, n_center)
        if not kept[lo : lo + n_center].all():
            raise ValueError("central lines must all be kept")
        kept.setflags(write=False)
        object.__setattr__(self, "kept", kept)

    @property
    def width(self) -> int:
        return self.kept.size

    @property
    def n_kept(self) -> int:
        return int(self.kept.sum())

    @property
    def acceleration(self) -> float:
        return self.width / self.n_kept


def center_line_count(width: int, center_fraction: float) -> int:
    # guard against 0.06 * 50 == 3.0000000000000004
    return int(np.ceil(round(center_fraction * width, 9)))


def center_start(width: int, n_center: int) -> int:
    return (width - n_center + 1) // 2


@dataclass(frozen=True, eq=False)
class ForwardOp:
    """``A = M o F o S``: coil expansion, centered FFT, line mask.

    Parameters
    ----------
    maps : ndarray, shape (C, H, W)
        Coil sensitivities, normalized so that ``sum_i |S_i|**2 == 1``.
    mask : SamplingMask
        Phase-encode selection along the last axis.
    """

    maps: np.ndarray
    mask: SamplingMask

    def __post_init__(self):
        maps = np.asarray(self.maps, dtype=np.complex128)
        if maps.ndim == 2:
            maps = maps[None]
        if maps.ndim != 3:
            raise ValueError(f"coil maps must be (C, H, W), got {maps.shape}")
        if maps.shape[-1] != self.mask.width:
            raise ValueError(
                f"mask width {self.mask.width} does not match image width {maps.shape[-1]}"
            )
        energy = np.sum(np.abs(maps) ** 2, axis=0)
        if not np.allclose(energy, 1.0, rtol=0, atol=1e-10):
            raise ValueError("coil maps must satisfy sum_i |S_i|^2 = 1 pixelwise")
        maps.setflags(write=False)
        object.__setattr__(self, "maps", maps)

    @classmethod
    def single_coil(cls, shape: tuple[int, int], mask: SamplingMask | None = None) -> ForwardOp:
        """Identity sensitivities; full sampling when ``mask`` is None."""
        if mask is None:
            mask = SamplingMask(np.ones(shape[1], dtype=bool))
        return cls(np.ones((1, *shape), dtype=np.complex128), mask)

    @property
    def n_coils(self) -> int:
        return self.maps.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.maps.shape[1:]

    @property
    def kspace_shape(self) -> tuple[int, int, int]:
        return self.maps.shape

    def forward(self, x: np.ndarray) -> np.ndarray:
        return forward(x, self)

    def adjoint(self, k: np.ndarray) -> np.ndarray:
        return adjoint(k, self)

    def gram(self, x: np.ndarray) -> np.ndarray:
        return gram(x, self)


def _check_image(x: np.ndarray, op: ForwardOp) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[-2:] != op.shape:
        raise ValueError(f"image shape {x.shape} does not match operator shape {op.shape}")
    return x


def forward(x: np.ndarray, op: ForwardOp) -> np.ndarray:
    """Noise-free multi-coil k-space ``M F (S_i x)`` of shape (C, H, W).

    A leading batch axis on ``x`` is supported: ``(B, H, W) -> (B, C, H, W)``.
    """
    x = _check_image(x, op)
    coil_images = op.maps * x[..., None, :, :]
    return fft2c(coil_images) * op.mask.kept


def adjoint(k: np.ndarray, op: ForwardOp) -> np.ndarray:
    """``sum_i conj(S_i) * ifft2c(M k_i)``."""
    k = np.asarray(k)
    if k.shape[-3:] != op.kspace_shape:
        raise ValueError(f"k-space shape {k.shape} does not match operator {op.kspace_shape}")
    coil_images = ifft2c(k * op.mask.kept)
    return np.sum(np.conj(op.maps) * coil_images, axis=-3)


def gram(x: np.ndarray, op: ForwardOp) -> np.ndarray:
    """``A^H A x``."""
    return adjoint(forward(x, op), op)


class MaterializeError(RuntimeError):
    """Raised when a dense operator would exceed the entry cap."""


def materialize(op: ForwardOp, max_entries: int = DEFAULT_MAX_ENTRIES) -> np.ndarray:
    """Dense matrix of ``A`` restricted to the kept k-space samples.

    Rows are ordered (coil, row, kept column); column ``j`` is the forward
    model applied to the ``j``-th standard basis image in row-major order.
    Dropping the always-zero rows leaves the right singular vectors intact.
    """
    h, w = op.shape
    n_cols = h * w
    n_rows = op.n_coils * h * op.mask.n_kept
    if n_rows * n_cols > max_entries:
        raise MaterializeError(
            f"dense operator would have {n_rows} x {n_cols} = {n_rows * n_cols} entries "
            f"(cap {max_entries}); operator is not materializable"
        )
    dense = np.empty((n_rows, n_cols), dtype=np.complex128)
    chunk = 256
    for start in range(0, n_cols, chunk):
        stop = min(start + chunk, n_cols)
        basis = np.zeros((stop - start, n_cols), dtype=np.complex128)
        basis[np.arange(stop - start), np.arange(start, stop)] = 1.0
        cols = forward(basis.reshape(-1, h, w), op)[..., op.mask.kept]
        dense[:, start:stop] = cols.reshape(stop - start, n_rows).T
    return dense
