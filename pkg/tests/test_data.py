import numpy as np
import pytest

from lir.data import (NoiseSpec, PairedDataset, add_gaussian_noise, augment, crop_window, hflip,
                      load_dirs, sample_photos, tile_images)
from lir.io import write_png
from lir.metrics import psnr


def test_sigma_zero_is_identity(rng):
    x = rng.random((3, 8, 8))
    np.testing.assert_array_equal(add_gaussian_noise(x, NoiseSpec("fixed", 0), rng), x)


def test_sigma25_mid_gray_statistics():
    x = np.full((3, 600, 600), 0.5)  # 1.08e6 pixels
    y = add_gaussian_noise(x, NoiseSpec("fixed", 25), np.random.default_rng(0))
    target = (25 / 255) ** 2
    mse = np.mean((y - x) ** 2)
    assert abs(mse / target - 1) < 0.05
    assert psnr(x, y) == pytest.approx(20.17, abs=0.1)


def test_sigma50_is_twice_sigma25():
    x = np.full((1, 1000, 1000), 0.5)
    rng = np.random.default_rng(1)
    s25 = np.std(add_gaussian_noise(x, NoiseSpec("fixed", 25), rng) - x)
    s50 = np.std(add_gaussian_noise(x, NoiseSpec("fixed", 50), rng) - x)
    # clipping at 0/1 trims a little from sigma=50 (0.5 / (50/255) = 2.55 sd)
    assert abs(s50 / s25 / 2 - 1) < 0.03


def test_blind_sigma_range():
    spec = NoiseSpec("blind")
    rng = np.random.default_rng(0)
    draws = [spec.draw_sigma(rng) for _ in range(2000)]
    assert 0 <= min(draws) and max(draws) <= 50
    assert np.mean(draws) == pytest.approx(25, abs=1.0)


def test_noise_errors(rng):
    with pytest.raises(ValueError):
        NoiseSpec("fixed", 60)
    with pytest.raises(ValueError):
        NoiseSpec("pink")
    with pytest.raises(ValueError):
        add_gaussian_noise(np.full((1, 2, 2), 1.5), NoiseSpec("fixed", 5), rng)
    with pytest.raises(ValueError):
        add_gaussian_noise(np.zeros((1, 2, 2)), NoiseSpec("fixed", 5), rng, sigma=-1)


def test_noise_spec_parse():
    assert NoiseSpec.parse("blind").mode == "blind"
    assert NoiseSpec.parse("sigma=15") == NoiseSpec("fixed", 15.0)
    with pytest.raises(ValueError):
        NoiseSpec.parse("gauss")


def test_flip_involution(rng):
    x = rng.random((3, 5, 7))
    np.testing.assert_array_equal(hflip(hflip(x)), x)
    np.testing.assert_array_equal(hflip(x)[..., 0], x[..., -1])


def test_crop_window_in_bounds():
    rng = np.random.default_rng(0)
    h, w, p = 37, 50, 16
    seen = set()
    for _ in range(10_000):
        top, left = crop_window(h, w, p, rng)
        assert 0 <= top <= h - p and 0 <= left <= w - p
        seen.add((top, left))
    assert len(seen) > 400  # covers the space rather than sticking to one corner
    with pytest.raises(ValueError):
        crop_window(8, 40, 16, rng)


def test_augment_keeps_pairs_aligned(rng):
    x = rng.random((3, 40, 40))
    for _ in range(50):
        a, b = augment(x, x, 16, rng)
        np.testing.assert_array_equal(a, b)
    y = x + 1.0
    for _ in range(50):
        a, b = augment(x, y, 16, rng)
        np.testing.assert_array_equal(b, a + 1.0)
    with pytest.raises(ValueError):
        augment(x, x[:, :30], 16, rng)


def test_sample_batch_shapes_and_determinism():
    clean = [np.full((3, 40, 48), v, np.float32) for v in (0.2, 0.5, 0.8)]
    ds = PairedDataset(clean, noise=NoiseSpec("fixed", 10))
    d1, c1 = ds.sample_batch(4, 32, np.random.default_rng(7))
    d2, c2 = ds.sample_batch(4, 32, np.random.default_rng(7))
    assert d1.shape == c1.shape == (4, 3, 32, 32)
    np.testing.assert_array_equal(d1, d2)
    assert d1.dtype == np.float32


def test_dataset_errors():
    with pytest.raises(ValueError):
        PairedDataset([])
    with pytest.raises(ValueError):
        PairedDataset([np.zeros((3, 4, 4))])
    with pytest.raises(ValueError):
        PairedDataset([np.zeros((3, 4, 4))], [np.zeros((3, 4, 5))])


def test_load_dirs(tmp_path, rng):
    (tmp_path / "c").mkdir()
    (tmp_path / "d").mkdir()
    for n in ("a", "b"):
        write_png(rng.random((3, 8, 8)), str(tmp_path / "c" / f"{n}.png"))
        write_png(rng.random((3, 8, 8)), str(tmp_path / "d" / f"{n}.png"))
    ds = load_dirs(str(tmp_path / "c"), str(tmp_path / "d"))
    assert len(ds) == 2 and ds.names == ["a.png", "b.png"]
    (tmp_path / "d" / "b.png").unlink()
    with pytest.raises(ValueError, match="partner"):
        load_dirs(str(tmp_path / "c"), str(tmp_path / "d"))


def test_tiles_and_photos():
    tiles = tile_images([np.zeros((3, 70, 100))], 32)
    assert len(tiles) == 2 * 3 and tiles[0].shape == (3, 32, 32)
    photos = sample_photos()
    assert len(photos) >= 5
    for _, img in photos:
        assert img.shape[0] == 3 and 0 <= img.min() and img.max() <= 1
