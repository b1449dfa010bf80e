import itertools
import math

import numpy as np
import pytest
from scipy.stats import rankdata, wilcoxon
from skimage.metrics import structural_similarity

from tgvn.metrics import (
    MetricConfig,
    ms_ssim,
    ms_ssim_l1,
    nrmse,
    psnr,
    rss,
    ssim,
    wilcoxon_one_sided,
)


def direct_ssim(a, b, L, w=7, k1=0.01, k2=0.03):
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    vals = []
    for i in range(a.shape[0] - w + 1):
        for j in range(a.shape[1] - w + 1):
            pa, pb = a[i : i + w, j : j + w].ravel(), b[i : i + w, j : j + w].ravel()
            ma, mb = pa.mean(), pb.mean()
            va, vb = pa.var(ddof=1), pb.var(ddof=1)
            cov = np.sum((pa - ma) * (pb - mb)) / (pa.size - 1)
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def direct_ms_ssim(a, b, L, size, sigmas, k1=0.01, k2=0.03):
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    r = np.arange(size) - size // 2
    windows = []
    for s in sigmas:
        g = np.exp(-(r**2) / (2 * s**2))
        w = np.outer(g, g)
        windows.append(w / w.sum())
    vals = []
    for i in range(a.shape[0] - size + 1):
        for j in range(a.shape[1] - size + 1):
            pa, pb = a[i : i + size, j : j + size], b[i : i + size, j : j + size]
            prod = 1.0
            for w in windows:
                ma, mb = np.sum(w * pa), np.sum(w * pb)
                va = np.sum(w * (pa - ma) ** 2)
                vb = np.sum(w * (pb - mb) ** 2)
                cov = np.sum(w * (pa - ma) * (pb - mb))
                prod *= (2 * cov + c2) / (va + vb + c2)
            lum = (2 * ma * mb + c1) / (ma**2 + mb**2 + c1)
            vals.append(lum * prod)
    return float(np.mean(vals))


@pytest.mark.parametrize("seed", range(5))
def test_ssim_matches_direct_formula(seed):
    rng = np.random.default_rng(seed)
    b = rng.uniform(0, 1, (20, 17))
    a = np.clip(b + 0.2 * rng.standard_normal(b.shape), 0, None)
    L = float(b.max())
    assert abs(ssim(a, b) - direct_ssim(a, b, L)) <= 1e-9


@pytest.mark.parametrize("seed", range(3))
def test_ssim_matches_skimage(seed):
    rng = np.random.default_rng(seed)
    b = rng.uniform(0, 1, (32, 32))
    a = b + 0.1 * rng.standard_normal(b.shape)
    ref = structural_similarity(a, b, win_size=7, data_range=1.0, use_sample_covariance=True)
    assert abs(ssim(a, b, data_range=1.0) - ref) <= 1e-9


def test_ms_ssim_matches_direct_formula():
    rng = np.random.default_rng(0)
    b = rng.uniform(0, 1, (20, 19))
    a = b + 0.1 * rng.standard_normal(b.shape)
    cfg = MetricConfig(msssim_window=15, msssim_sigmas=(0.5, 1.0, 2.0, 3.0))
    assert abs(ms_ssim(a, b, 1.0, cfg) - direct_ms_ssim(a, b, 1.0, 15, cfg.msssim_sigmas)) <= 1e-9


def test_self_consistency():
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 1, (48, 48))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)
    assert nrmse(x, x) == 0.0
    assert ms_ssim(x, x) == pytest.approx(1.0, abs=1e-12)
    assert ms_ssim_l1(x, x) == pytest.approx(0.0, abs=1e-12)
    assert math.isinf(psnr(x, x, 1.0))


def test_symmetry_with_fixed_range():
    # the default data range is taken from the second argument, so fix it to compare
    rng = np.random.default_rng(4)
    a, b = rng.uniform(0, 1, (40, 40)), rng.uniform(0, 1, (40, 40))
    assert abs(ssim(a, b, 1.0) - ssim(b, a, 1.0)) <= 1e-12
    assert abs(ms_ssim_l1(a, b, 1.0) - ms_ssim_l1(b, a, 1.0)) <= 1e-10


def test_ms_ssim_l1_matches_declared_formula():
    rng = np.random.default_rng(7)
    b = rng.uniform(0, 1, (20, 19))
    a = b + 0.1 * rng.standard_normal(b.shape)
    cfg = MetricConfig(msssim_window=15, msssim_sigmas=(0.5, 1.0, 2.0, 3.0))
    r = np.arange(15) - 7
    g = np.exp(-(r**2) / (2 * 3.0**2))
    w = np.outer(g, g) / np.outer(g, g).sum()
    l1 = np.mean([np.sum(w * np.abs(a - b)[i : i + 15, j : j + 15]) for i in range(6) for j in range(5)])
    expected = 0.84 * (1 - direct_ms_ssim(a, b, 1.0, 15, cfg.msssim_sigmas)) + 0.16 * l1
    assert abs(ms_ssim_l1(a, b, 1.0, cfg) - expected) <= 1e-8


def test_psnr_matches_formula():
    rng = np.random.default_rng(8)
    a, b = rng.uniform(0, 1, (16, 16)), rng.uniform(0, 1, (16, 16))
    assert abs(psnr(a, b, 1.0) - 10 * np.log10(1.0 / np.mean((a - b) ** 2))) <= 1e-10


def test_psnr_and_nrmse_examples():
    b = np.ones((4, 4))
    assert psnr(b + 0.1, b, 1.0) == pytest.approx(20.0)
    assert nrmse(2 * b, b) == pytest.approx(1.0)
    assert nrmse(np.zeros((4, 4)), b) == 1.0
    with pytest.raises(ValueError):
        nrmse(b, np.zeros((4, 4)))
    with pytest.raises(ValueError):
        psnr(b, np.ones((3, 3)), 1.0)


def test_metric_errors():
    with pytest.raises(ValueError):
        ssim(np.ones((5, 5)), np.ones((5, 5)))
    with pytest.raises(ValueError):
        ms_ssim(np.ones((20, 20)), np.ones((20, 20)))
    with pytest.raises(ValueError):
        MetricConfig(ssim_window=6)
    with pytest.raises(ValueError):
        MetricConfig(data_range=0.0)


def test_downsampled_and_uniform_variants():
    rng = np.random.default_rng(2)
    b = rng.uniform(0, 1, (96, 96))
    a = b + 0.05 * rng.standard_normal(b.shape)
    pyr = MetricConfig(msssim_window=7, msssim_downsample=True, msssim_sigmas=(1.5,) * 4)
    uni = MetricConfig(msssim_window=11, msssim_uniform=True)
    for cfg in (pyr, uni):
        assert 0 < ms_ssim(a, b, 1.0, cfg) < 1
        assert ms_ssim(b, b, 1.0, cfg) == pytest.approx(1.0)


def test_ms_ssim_l1_alpha_endpoints():
    rng = np.random.default_rng(3)
    b = rng.uniform(0, 1, (40, 40))
    a = b + 0.1
    assert ms_ssim_l1(a, b, 1.0, alpha=1.0) == pytest.approx(1 - ms_ssim(a, b, 1.0))
    assert ms_ssim_l1(a, b, 1.0, alpha=0.0) == pytest.approx(0.1)


def test_rss():
    coils = np.stack([np.full((2, 2), 3.0), np.full((2, 2), 4j)])
    np.testing.assert_allclose(rss(coils), 5.0)
    np.testing.assert_allclose(rss(np.full((2, 2), -2 + 0j)), 2.0)


def brute_p(d, direction):
    d = np.asarray(d, float)
    d = d[d != 0]
    ranks = rankdata(np.abs(d))
    w = ranks[d > 0].sum()
    signs = np.array(list(itertools.product([0, 1], repeat=d.size)), bool)
    null = signs @ ranks
    if direction == "greater":
        return np.mean(null >= w - 1e-9)
    return np.mean(null <= w + 1e-9)


@pytest.mark.parametrize("n", range(1, 11))
def test_wilcoxon_exact_every_sign_pattern(n):
    mags = np.arange(1, n + 1, dtype=float)
    ranks = rankdata(mags)
    signs = np.array(list(itertools.product([0, 1], repeat=n)), bool)
    null = np.sort(signs @ ranks)
    for pattern in signs:
        d = np.where(pattern, mags, -mags)
        w = ranks[pattern].sum()
        upper = (null.size - np.searchsorted(null, w, "left")) / null.size
        lower = np.searchsorted(null, w, "right") / null.size
        assert abs(wilcoxon_one_sided(d, "greater").p_value - upper) <= 1e-12
        assert abs(wilcoxon_one_sided(d, "less").p_value - lower) <= 1e-12


def test_wilcoxon_ties_and_zeros_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(30):
        d = rng.integers(-3, 4, size=8).astype(float)
        if not np.any(d):
            continue
        for direction in ("greater", "less"):
            assert abs(wilcoxon_one_sided(d, direction).p_value - brute_p(d, direction)) <= 1e-12


def test_wilcoxon_examples():
    r = wilcoxon_one_sided([1, 2, 3, 4, 5], "greater")
    assert r.p_value == 0.03125 and r.method == "exact" and r.statistic == 15
    assert wilcoxon_one_sided([-1, -2, -3, -4, -5], "less").p_value == 0.03125
    # tied magnitudes: both sign patterns of rank 1.5 twice; W+ = 1.5 is reached by 3 of 4
    assert wilcoxon_one_sided([1, -1], "greater").p_value == 0.75
    r = wilcoxon_one_sided([0, 0, 1, 2], "greater")
    assert r.n_effective == 2
    with pytest.raises(ValueError, match="degenerate"):
        wilcoxon_one_sided([0, 0, 0])
    with pytest.raises(ValueError):
        wilcoxon_one_sided([1, 2], "two-sided")


def test_wilcoxon_normal_matches_scipy():
    rng = np.random.default_rng(5)
    for n in (30, 60):
        d = rng.normal(0.2, 1.0, n)
        for direction in ("greater", "less"):
            ours = wilcoxon_one_sided(d, direction)
            ref = wilcoxon(d, alternative=direction, method="approx", correction=False)
            assert ours.method == "normal"
            assert abs(ours.p_value - ref.pvalue) <= 1e-12


def test_wilcoxon_exact_matches_scipy_without_ties():
    rng = np.random.default_rng(6)
    d = rng.normal(0.3, 1.0, 15)
    ref = wilcoxon(d, alternative="greater", method="exact")
    assert abs(wilcoxon_one_sided(d).p_value - ref.pvalue) <= 1e-12
