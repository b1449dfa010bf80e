import json

import numpy as np
import pytest
from PIL import Image

from tgvn.data import (
    MAGIC,
    TensorFileError,
    add_noise,
    apply_misregistration,
    covariance_matched_noise,
    draw_misregistration,
    load_tensor,
    make_coil_maps,
    make_mask,
    make_phantom_pair,
    misregister,
    save_png,
    save_tensor,
)
from tgvn.operators import SamplingMask


def test_k1_style_mask():
    mask = make_mask(368, "random", 20, 0.03, seed=0)
    centre = np.arange(179, 190)
    assert mask.kept[centre].all()
    assert 17 <= mask.n_kept <= 19
    assert mask.n_kept == 368 // 20


@pytest.mark.parametrize("seed", range(5))
def test_random_mask_counts(seed):
    mask = make_mask(64, "random", 8, 0.06, seed)
    assert mask.n_kept == 8
    assert mask.kept[30:34].all()


def test_equispaced_mask():
    mask = make_mask(16, "equispaced", 2, 0.0)
    assert np.array_equal(np.flatnonzero(mask.kept), np.arange(0, 16, 2))
    mask = make_mask(16, "equispaced", 4, 0.25)
    assert mask.kept[6:10].all() and mask.kept[0] and mask.kept[12] and not mask.kept[1]


def test_mask_errors():
    with pytest.raises(ValueError):
        make_mask(16, "random", 16, 0.25)
    with pytest.raises(ValueError):
        make_mask(16, "equispaced", 2.5, 0.1)
    with pytest.raises(ValueError):
        make_mask(16, "poisson", 2, 0.1)
    with pytest.raises(ValueError):
        make_mask(16, "random", 0.5, 0.1)


def test_mask_is_seeded():
    assert np.array_equal(make_mask(64, "random", 4, 0.08, 3).kept, make_mask(64, "random", 4, 0.08, 3).kept)
    assert not np.array_equal(make_mask(64, "random", 4, 0.08, 3).kept, make_mask(64, "random", 4, 0.08, 4).kept)


def test_coil_maps_normalized():
    maps = make_coil_maps(4, (32, 24), seed=1)
    assert maps.shape == (4, 32, 24)
    np.testing.assert_allclose(np.sum(np.abs(maps) ** 2, axis=0), 1.0, atol=1e-12)
    with pytest.raises(ValueError):
        make_coil_maps(0, (8, 8))


def test_phantom_pair_properties():
    pair = make_phantom_pair(0)
    assert pair.target.shape == pair.side.shape == (64, 64)
    assert np.all(pair.side.imag == 0) and pair.side.real.min() >= 0
    # both contrasts have an edge exactly where the region labels change
    labels = pair.labels
    edge = labels[:, 1:] != labels[:, :-1]
    for img in (np.abs(pair.target), pair.side.real):
        jumps = np.abs(np.diff(img, axis=1))
        assert np.all(jumps[edge] >= 0.05 - 1e-12) and np.all(jumps[~edge] < 1e-12)
    a, b = np.abs(pair.target).ravel(), pair.side.real.ravel()
    assert np.corrcoef(a, b)[0, 1] > 0
    with pytest.raises(ValueError):
        make_phantom_pair(0, (8, 8))


def test_phantom_is_deterministic():
    a, b = make_phantom_pair(11), make_phantom_pair(11)
    assert np.array_equal(a.target, b.target) and np.array_equal(a.side, b.side)


def test_add_noise_statistics():
    mask = SamplingMask(np.arange(64) % 2 == 0)
    k = np.zeros((4, 64, 64), complex)
    noisy = add_noise(k, mask, 0.5, seed=0)
    assert np.all(noisy[..., ~mask.kept] == 0)
    kept = noisy[..., mask.kept]
    assert np.std(kept.real) == pytest.approx(0.5 / np.sqrt(2), rel=0.03)
    assert np.mean(np.abs(kept) ** 2) == pytest.approx(0.25, rel=0.03)
    assert np.array_equal(add_noise(k, mask, 0.0), k)


def test_covariance_matched_noise():
    rng = np.random.default_rng(0)
    ref = rng.normal(1, 2, (64, 64)) + 1j * (0.5 * rng.normal(0, 1, (64, 64)))
    noise = covariance_matched_noise(ref, seed=1)
    cov = lambda z: np.cov(np.stack([z.real.ravel(), z.imag.ravel()]), bias=True)
    np.testing.assert_allclose(cov(noise), cov(ref), rtol=0.1, atol=0.05)


def test_misregistration():
    img = np.zeros((32, 32))
    img[10:14, 10:14] = 1.0
    moved = apply_misregistration(img, 3.0, -2.0, 0.0)
    np.testing.assert_allclose(moved[8:12, 13:17], 1.0, atol=1e-12)
    np.testing.assert_allclose(apply_misregistration(img, 0, 0, 0), img, atol=1e-12)
    dx, dy, dt = draw_misregistration(0, 4, 4, integer=True)
    assert dx == round(dx) and abs(dx) <= 4 and abs(dt) <= 4
    c = misregister(img + 1j * img, seed=0)
    assert np.iscomplexobj(c) and c.shape == img.shape


def test_tensor_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    x = (rng.standard_normal((3, 5, 4)) + 1j * rng.standard_normal((3, 5, 4))).astype(np.complex64)
    save_tensor(tmp_path / "x.tgt", x)
    y = load_tensor(tmp_path / "x.tgt")
    assert y.dtype == np.complex64 and np.array_equal(x, y)


def test_tensor_byte_example(tmp_path):
    save_tensor(tmp_path / "one.tgt", np.array([[1 + 0j]]))
    raw = (tmp_path / "one.tgt").read_bytes()
    assert raw.startswith(MAGIC)
    header_end = raw.index(b"\n")
    assert json.loads(raw[len(MAGIC) : header_end]) == {"dims": [1, 1], "dtype": "c64"}
    assert raw[header_end + 1 :] == bytes.fromhex("0000803F00000000")


def test_tensor_errors(tmp_path):
    p = tmp_path / "bad.tgt"
    save_tensor(p, np.ones((2, 2)))
    raw = p.read_bytes()
    p.write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(TensorFileError, match="bad magic"):
        load_tensor(p)
    p.write_bytes(raw[:-1])
    with pytest.raises(TensorFileError):
        load_tensor(p)
    save_tensor(p, np.array([[np.nan, 1.0]]))
    with pytest.warns(RuntimeWarning):
        load_tensor(p)
    with pytest.raises(ValueError):
        save_tensor(p, np.ones(4))


def test_png_export(tmp_path):
    img = np.linspace(0, 2, 16).reshape(4, 4)
    window = save_png(tmp_path / "a.png", img)
    assert window == {"min": 0.0, "max": 2.0, "bit_depth": 16}
    pixels = np.asarray(Image.open(tmp_path / "a.png"))
    assert pixels.dtype == np.uint16 and pixels.max() == 65535 and pixels.min() == 0
    assert json.loads((tmp_path / "a.json").read_text()) == window
