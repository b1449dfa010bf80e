"""Synthetic acquisitions: phantoms, coil maps, masks, noise, misregistration, file I/O.

Every generator is a pure function of its parameters and an integer seed.
Randomness comes from ``numpy.random.default_rng(seed)``, i.e. the PCG64
bit generator, which is specified and portable across platforms.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .operators import SamplingMask, center_line_count, center_start

__all__ = [
    "PhantomPair",
    "make_phantom_pair",
    "make_coil_maps",
    "make_mask",
    "add_noise",
    "draw_misregistration",
    "apply_misregistration",
    "misregister",
    "covariance_matched_noise",
    "save_tensor",
    "load_tensor",
    "TensorFileError",
    "MAGIC",
    "save_png",
]

MAGIC = b"TGTENSR1"


@dataclass(frozen=True, eq=False)
class PhantomPair:
    """Two contrasts of one synthetic anatomy.

    ``labels`` is the region map both contrasts are painted from; ``target``
    carries a smooth phase, ``side`` is real and nonnegative.
    """

    target: np.ndarray
    side: np.ndarray
    labels: np.ndarray
    seed: int


def _ellipse(yy, xx, cy, cx, ry, rx, theta):
    c, s = np.cos(theta), np.sin(theta)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def _smooth_phase(rng, shape, max_order: int = 2, amplitude: float = np.pi / 2):
    h, w = shape
    yy, xx = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij")
    phase = np.zeros(shape)
    for p in range(max_order + 1):
        for q in range(max_order + 1 - p):
            phase += rng.uniform(-1, 1) * yy**p * xx**q
    return amplitude * phase / max(np.max(np.abs(phase)), 1e-12)


def make_phantom_pair(
    seed: int,
    shape: tuple[int, int] = (64, 64),
    n_ellipses: int = 8,
    intensity_range: tuple[float, float] = (0.2, 1.0),
    min_contrast: float = 0.05,
) -> PhantomPair:
    """Ellipse phantom with two independently drawn intensity assignments.

    A head-like outer ellipse holds ``n_ellipses`` random inner ellipses
    painted in order, so later ellipses occlude earlier ones. Each region
    gets one intensity per contrast, drawn so that any two regions differ by
    at least ``min_contrast`` in both contrasts; the region boundaries are
    therefore the intensity edges of both images.
    """
    h, w = shape
    if h < 16 or w < 16:
        raise ValueError("phantom dimensions must be at least 16x16")
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij")

    labels = np.zeros(shape, dtype=np.int32)
    outer = _ellipse(yy, xx, 0.0, 0.0, rng.uniform(0.75, 0.88), rng.uniform(0.6, 0.8), rng.uniform(-0.2, 0.2))
    labels[outer] = 1
    for i in range(n_ellipses):
        cy, cx = rng.uniform(-0.45, 0.45, size=2)
        ry, rx = rng.uniform(0.08, 0.35, size=2)
        region = _ellipse(yy, xx, cy, cx, ry, rx, rng.uniform(0, np.pi)) & outer
        labels[region] = i + 2

    n_regions = n_ellipses + 2
    lo, hi = intensity_range
    contrasts = []
    for _ in range(2):
        values = np.zeros(n_regions)
        for r in range(1, n_regions):
            while True:
                v = rng.uniform(lo, hi)
                if np.all(np.abs(values[1:r] - v) >= min_contrast):
                    break
            values[r] = v
        contrasts.append(values)

    phase = _smooth_phase(rng, shape)
    target = contrasts[0][labels] * np.exp(1j * phase)
    side = contrasts[1][labels].astype(np.complex128)
    return PhantomPair(target, side, labels, seed)


def make_coil_maps(n_coils: int, shape: tuple[int, int], seed: int = 0, width: float = 0.9) -> np.ndarray:
    """Smooth Gaussian-bump sensitivities normalized to ``sum_i |S_i|**2 == 1``.

    Coil centres sit on a ring around the field of view with seeded jitter,
    each with its own smooth linear phase.
    """
    if n_coils < 1:
        raise ValueError("n_coils must be >= 1")
    rng = np.random.default_rng(seed)
    h, w = shape
    yy, xx = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij")
    maps = np.empty((n_coils, h, w), dtype=np.complex128)
    for i in range(n_coils):
        angle = 2 * np.pi * i / n_coils + rng.uniform(-0.3, 0.3)
        radius = rng.uniform(1.0, 1.4)
        cy, cx = radius * np.sin(angle), radius * np.cos(angle)
        mag = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width**2))
        phase = rng.uniform(-np.pi, np.pi) + rng.uniform(-1, 1) * yy + rng.uniform(-1, 1) * xx
        maps[i] = mag * np.exp(1j * phase)
    maps /= np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    return maps


def make_mask(
    width: int,
    kind: str = "random",
    accel: float = 4.0,
    center_fraction: float = 0.08,
    seed: int = 0,
) -> SamplingMask:
    """Phase-encode mask with ``ceil(center_fraction * width)`` central lines.

    ``random`` draws outer lines without replacement so the total kept count
    is exactly ``floor(width / accel)``. ``equispaced`` keeps every
    ``accel``-th line counted from the centre line, plus the central block.
    """
    if accel < 1:
        raise ValueError("accel must be >= 1")
    if not 0 <= center_fraction < 1:
        raise ValueError("center_fraction must be in [0, 1)")
    n_center = center_line_count(width, center_fraction)
    start = center_start(width, n_center)
    kept = np.zeros(width, dtype=bool)
    kept[start : start + n_center] = True
    if kind == "random":
        n_total = int(np.floor(width / accel))
        if n_total < n_center + 1:
            raise ValueError(
                f"acceleration {accel} keeps {n_total} lines, fewer than the "
                f"{n_center} centre lines plus one"
            )
        rng = np.random.default_rng(seed)
        outer = np.flatnonzero(~kept)
        kept[rng.choice(outer, size=n_total - n_center, replace=False)] = True
    elif kind == "equispaced":
        stride = int(round(accel))
        if stride != accel:
            raise ValueError("equispaced masks need an integer acceleration")
        lines = np.arange(width)
        kept |= (lines - width // 2) % stride == 0
    else:
        raise ValueError(f"unknown mask kind {kind!r}")
    return SamplingMask(kept, center_fraction)


def add_noise(k: np.ndarray, mask: SamplingMask, sigma: float, seed: int = 0) -> np.ndarray:
    """Add circular complex Gaussian noise of total variance ``sigma**2`` on kept lines."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    k = np.asarray(k, dtype=np.complex128)
    if sigma == 0:
        return k.copy()
    rng = np.random.default_rng(seed)
    scale = sigma / np.sqrt(2.0)
    noise = rng.normal(scale=scale, size=k.shape) + 1j * rng.normal(scale=scale, size=k.shape)
    return k + noise * mask.kept


def covariance_matched_noise(reference: np.ndarray, seed: int = 0) -> np.ndarray:
    """Zero-mean complex Gaussian image whose real/imaginary 2x2 covariance
    matches that of ``reference``."""
    reference = np.asarray(reference)
    chans = np.stack([reference.real.ravel(), reference.imag.ravel()])
    cov = np.cov(chans, bias=True)
    rng = np.random.default_rng(seed)
    draws = rng.multivariate_normal(np.zeros(2), cov, size=reference.size, method="eigh")
    return (draws[:, 0] + 1j * draws[:, 1]).reshape(reference.shape)


def draw_misregistration(seed: int, max_shift: float = 4.0, max_rot: float = 4.0, integer: bool = False):
    """``(dx, dy, dtheta)``: shifts in pixels, rotation in degrees, each uniform on ``[-max, max]``."""
    if max_shift < 0 or max_rot < 0:
        raise ValueError("max_shift and max_rot must be >= 0")
    rng = np.random.default_rng(seed)
    dx, dy = rng.uniform(-max_shift, max_shift, size=2)
    dtheta = rng.uniform(-max_rot, max_rot)
    if integer:
        dx, dy = float(np.round(dx)), float(np.round(dy))
    return float(dx), float(dy), float(dtheta)


def apply_misregistration(s: np.ndarray, dx: float, dy: float, dtheta: float) -> np.ndarray:
    """Translate by ``(dx, dy)`` (x along columns) then rotate ``dtheta`` degrees
    about the image centre; bilinear interpolation with zero fill."""
    s = np.asarray(s)
    h, w = s.shape
    centre = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    th = np.deg2rad(dtheta)
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    inv = rot.T
    shift = np.array([dy, dx])
    # input = inv @ (output - centre) + centre - shift
    offset = centre - shift - inv @ centre

    def warp(channel):
        return ndimage.affine_transform(channel, inv, offset=offset, order=1, mode="constant", cval=0.0)

    if np.iscomplexobj(s):
        return warp(s.real) + 1j * warp(s.imag)
    return warp(s)


def misregister(
    s: np.ndarray, seed: int, max_shift: float = 4.0, max_rot: float = 4.0, integer: bool = False
) -> np.ndarray:
    """Apply a seeded random shift and rotation to side information."""
    return apply_misregistration(s, *draw_misregistration(seed, max_shift, max_rot, integer))


class TensorFileError(ValueError):
    pass


def save_tensor(path: str | Path, tensor: np.ndarray) -> None:
    """Write ``tensor`` as complex64: magic, one-line JSON header, raw payload.

    The header is compact UTF-8 JSON terminated by a single ``\\n``; the
    payload is little-endian float32 ``(re, im)`` pairs in row-major order.
    """
    tensor = np.asarray(tensor)
    if tensor.ndim not in (2, 3):
        raise ValueError("tensors are (height, width) or (coil, height, width)")
    header = {"dims": list(tensor.shape), "dtype": "c64"}
    payload = np.ascontiguousarray(tensor, dtype="<c8").tobytes()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(json.dumps(header, separators=(",", ":")).encode("utf-8") + b"\n")
        f.write(payload)


def load_tensor(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise TensorFileError("bad magic")
    end = raw.find(b"\n", len(MAGIC))
    if end < 0:
        raise TensorFileError("unterminated header")
    try:
        header = json.loads(raw[len(MAGIC) : end].decode("utf-8"))
        dims = [int(d) for d in header["dims"]]
        dtype = header["dtype"]
    except (ValueError, KeyError, TypeError) as err:
        raise TensorFileError(f"malformed header: {err}") from None
    if dtype != "c64":
        raise TensorFileError(f"unsupported dtype {dtype!r}")
    if len(dims) not in (2, 3) or any(d <= 0 for d in dims):
        raise TensorFileError(f"invalid dims {dims}")
    payload = raw[end + 1 :]
    expected = 8 * int(np.prod(dims))
    if len(payload) != expected:
        raise TensorFileError(f"payload is {len(payload)} bytes, header implies {expected}")
    tensor = np.frombuffer(payload, dtype="<c8").reshape(dims).astype(np.complex64)
    if not np.all(np.isfinite(tensor)):
        warnings.warn(f"{path}: payload contains non-finite values", RuntimeWarning, stacklevel=2)
    return tensor


def save_png(path: str | Path, image: np.ndarray) -> dict:
    """16-bit grayscale PNG of ``|image|``, min-max windowed.

    The window is written to a JSON sidecar next to the PNG and returned.
    """
    path = Path(path)
    mag = np.abs(np.asarray(image)).astype(float)
    lo, hi = float(mag.min()), float(mag.max())
    scaled = np.zeros_like(mag) if hi == lo else (mag - lo) / (hi - lo)
    pixels = np.round(scaled * 65535).astype(np.uint16)
    Image.fromarray(pixels).save(path)
    window = {"min": lo, "max": hi, "bit_depth": 16}
    path.with_suffix(".json").write_text(json.dumps(window, indent=2) + "\n")
    return window
