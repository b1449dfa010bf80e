"""Image-quality metrics and the paired one-sided Wilcoxon signed-rank test."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.stats import norm, rankdata

__all__ = [
    "MetricConfig",
    "WilcoxonResult",
    "rss",
    "ssim",
    "ssim_map",
    "psnr",
    "nrmse",
    "ms_ssim",
    "ms_ssim_l1",
    "wilcoxon_one_sided",
    "EXACT_MAX_N",
]

EXACT_MAX_N = 25


@dataclass(frozen=True)
class MetricConfig:
    """Windows and constants for SSIM and the MS-SSIM-L1 loss.

    ``msssim_uniform`` swaps the Gaussian windows for a uniform one of side
    ``msssim_window``; ``msssim_downsample`` evaluates the scales on a 2x
    average-pooled pyramid instead of widening the window.
    """

    ssim_window: int = 7
    ssim_k1: float = 0.01
    ssim_k2: float = 0.03
    data_range: float | None = None
    msssim_window: int = 33
    msssim_sigmas: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0, 8.0)
    msssim_alpha: float = 0.84
    msssim_uniform: bool = False
    msssim_downsample: bool = False

    def __post_init__(self):
        for name in ("ssim_window", "msssim_window"):
            w = getattr(self, name)
            if w < 1 or w % 2 == 0:
                raise ValueError(f"{name} must be odd and positive")
        if self.data_range is not None and not self.data_range > 0:
            raise ValueError("data_range must be > 0")


def rss(coil_images) -> np.ndarray:
    """Root-sum-of-squares over the leading (coil) axis."""
    if isinstance(coil_images, np.ndarray):
        stack = coil_images
        if stack.ndim == 2:
            stack = stack[None]
    else:
        images = [np.asarray(c) for c in coil_images]
        if not images:
            raise ValueError("rss needs at least one coil image")
        if any(c.shape != images[0].shape for c in images):
            raise ValueError("coil images must share dimensions")
        stack = np.stack(images)
    if stack.shape[0] == 0:
        raise ValueError("rss needs at least one coil image")
    return np.sqrt(np.sum(np.abs(stack) ** 2, axis=0))


def _range(b: np.ndarray, data_range: float | None, cfg: MetricConfig) -> float:
    if data_range is None:
        data_range = cfg.data_range
    if data_range is None:
        data_range = float(np.max(b))
    if not data_range > 0:
        raise ValueError("data_range must be > 0")
    return float(data_range)


def _window_moments(a, b, weights):
    """Weighted local means, variances and covariance over valid windows."""
    wa = sliding_window_view(a, weights.shape)
    wb = sliding_window_view(b, weights.shape)

    def avg(v):
        return np.einsum("ijkl,kl->ij", v, weights)

    mu_a, mu_b = avg(wa), avg(wb)
    var_a = avg(wa * wa) - mu_a**2
    var_b = avg(wb * wb) - mu_b**2
    cov = avg(wa * wb) - mu_a * mu_b
    return mu_a, mu_b, var_a, var_b, cov


def ssim_map(a, b, data_range: float | None = None, cfg: MetricConfig = MetricConfig()) -> np.ndarray:
    """Local SSIM over every fully contained ``ssim_window`` square (no padding).

    Uses a uniform window with the unbiased (``N - 1``) covariance estimate.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    w = cfg.ssim_window
    if min(a.shape) < w:
        raise ValueError(f"images {a.shape} are smaller than the {w}x{w} window")
    L = _range(b, data_range, cfg)
    n = w * w
    weights = np.full((w, w), 1.0 / n)
    mu_a, mu_b, var_a, var_b, cov = _window_moments(a, b, weights)
    unbias = n / (n - 1)
    var_a, var_b, cov = var_a * unbias, var_b * unbias, cov * unbias
    c1 = (cfg.ssim_k1 * L) ** 2
    c2 = (cfg.ssim_k2 * L) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, data_range: float | None = None, cfg: MetricConfig = MetricConfig()) -> float:
    """Mean structural similarity. ``data_range`` defaults to ``max(b)``."""
    return float(np.mean(ssim_map(a, b, data_range, cfg)))


def psnr(a, b, data_range: float) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical images."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(data_range**2 / mse))


def nrmse(estimate, target) -> float:
    """``||estimate - target|| / ||target||``."""
    estimate = np.asarray(estimate)
    target = np.asarray(target)
    if estimate.shape != target.shape:
        raise ValueError(f"shape mismatch: {estimate.shape} vs {target.shape}")
    denom = np.linalg.norm(target)
    if denom == 0:
        raise ValueError("target has zero norm")
    return float(np.linalg.norm(estimate - target) / denom)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - size // 2
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _msssim_maps(a, b, L: float, cfg: MetricConfig):
    """Per-scale contrast-structure maps and the last scale's luminance map."""
    c1 = (cfg.ssim_k1 * L) ** 2
    c2 = (cfg.ssim_k2 * L) ** 2
    size = cfg.msssim_window
    cs_maps = []
    lum = None
    for j, sigma in enumerate(cfg.msssim_sigmas):
        if cfg.msssim_uniform:
            weights = np.full((size, size), 1.0 / size**2)
        else:
            weights = _gaussian_window(size, sigma)
        if cfg.msssim_downsample and j > 0:
            a, b = _avg_pool2(a), _avg_pool2(b)
        if min(a.shape) < size:
            raise ValueError(
                f"image too small for {len(cfg.msssim_sigmas)} scales with a {size}x{size} window"
            )
        mu_a, mu_b, var_a, var_b, cov = _window_moments(a, b, weights)
        cs_maps.append((2 * cov + c2) / (var_a + var_b + c2))
        lum = (2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
    return cs_maps, lum, weights


def _avg_pool2(x):
    h, w = (x.shape[0] // 2) * 2, (x.shape[1] // 2) * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def ms_ssim(a, b, data_range: float | None = None, cfg: MetricConfig = MetricConfig()) -> float:
    """Multi-scale SSIM: luminance at the coarsest scale times all contrast terms.

    By default the scales are Gaussian windows of the configured widths on a
    common support, evaluated pixelwise over the valid region. The pyramid
    variant takes the product of per-scale means instead.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    L = _range(b, data_range, cfg)
    cs_maps, lum, _ = _msssim_maps(a, b, L, cfg)
    if cfg.msssim_downsample:
        return float(np.mean(lum) * np.prod([np.mean(cs) for cs in cs_maps]))
    return float(np.mean(lum * np.prod(cs_maps, axis=0)))


def ms_ssim_l1(
    a,
    b,
    data_range: float | None = None,
    cfg: MetricConfig = MetricConfig(),
    alpha: float | None = None,
) -> float:
    """``alpha * (1 - MS-SSIM) + (1 - alpha) * L1``.

    The L1 term is the absolute error divided by ``data_range``, averaged with
    the widest scale's window over the same valid region as MS-SSIM.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    alpha = cfg.msssim_alpha if alpha is None else alpha
    L = _range(b, data_range, cfg)
    msssim = ms_ssim(a, b, L, cfg)
    size = cfg.msssim_window
    if cfg.msssim_uniform:
        weights = np.full((size, size), 1.0 / size**2)
    else:
        weights = _gaussian_window(size, cfg.msssim_sigmas[-1])
    l1 = np.einsum("ijkl,kl->ij", sliding_window_view(np.abs(a - b) / L, weights.shape), weights)
    return float(alpha * (1.0 - msssim) + (1.0 - alpha) * np.mean(l1))


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_value: float
    n_effective: int
    method: str


def _exact_upper_tail(ranks2: np.ndarray, w2: int) -> tuple[float, float]:
    """``P(W+ >= w)`` and ``P(W+ <= w)`` over all ``2**n`` sign patterns.

    Ranks are passed doubled so that averaged ties stay integral.
    """
    total = int(ranks2.sum())
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in ranks2:
        r = int(r)
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    n_patterns = 2 ** len(ranks2)
    upper = sum(counts[w2:])
    lower = sum(counts[: w2 + 1])
    return upper / n_patterns, lower / n_patterns


def wilcoxon_one_sided(diffs: Sequence[float], direction: str = "greater") -> WilcoxonResult:
    """One-sided Wilcoxon signed-rank test on paired differences.

    ``direction="greater"`` tests whether the differences are stochastically
    greater than a distribution symmetric about zero; ``"less"`` the reverse.
    Zero differences are dropped and tied magnitudes share their average rank.
    For up to 25 nonzero differences the null distribution of the positive
    rank sum is exact over all sign patterns; beyond that a tie-corrected
    normal approximation (no continuity correction) is used.
    """
    if direction not in ("greater", "less"):
        raise ValueError("direction must be 'greater' or 'less'")
    d = np.asarray(diffs, dtype=float)
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise ValueError("degenerate: no nonzero differences")
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if n <= EXACT_MAX_N:
        ranks2 = np.rint(2 * ranks).astype(int)
        upper, lower = _exact_upper_tail(ranks2, int(round(2 * w_plus)))
        p = upper if direction == "greater" else lower
        return WilcoxonResult(w_plus, float(min(max(p, 0.0), 1.0)), n, "exact")
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts**3 - tie_counts) / 48.0
    z = (w_plus - mean) / math.sqrt(var)
    p = norm.sf(z) if direction == "greater" else norm.cdf(z)
    return WilcoxonResult(w_plus, float(p), n, "normal")
