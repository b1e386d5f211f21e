import math

import numpy as np
import pytest

from bpdip.metrics import evaluate, psnr, ssim
from oracles import mse_loops, ssim_windows


def test_psnr_identical_is_inf(rng):
    a = rng.random((16, 16, 3))
    assert psnr(a, a) == math.inf


def test_psnr_constant_offset():
    a = np.full((16, 16, 3), 0.2)
    assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)


def test_psnr_matches_loops(rng):
    a, b = rng.random((12, 13, 3)), rng.random((12, 13, 3))
    assert psnr(a, b) == pytest.approx(10 * math.log10(1 / mse_loops(a, b)), rel=1e-12)
    assert psnr(a, b, peak=255.0) == pytest.approx(10 * math.log10(255**2 / mse_loops(a, b)), rel=1e-12)


def test_psnr_decreases_with_noise(rng):
    a = rng.random((32, 32, 3))
    n = rng.standard_normal(a.shape)
    values = [psnr(a, a + s * n) for s in (0.01, 0.05, 0.2)]
    assert values[0] > values[1] > values[2]


def test_metrics_symmetric(rng):
    a, b = rng.random((24, 24, 3)), rng.random((24, 24, 3))
    assert psnr(a, b) == psnr(b, a)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)


def test_ssim_identical(rng):
    a = rng.random((20, 20, 3))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-9)


def test_ssim_inverted_binary_is_negative(rng):
    a = (rng.random((32, 32, 1)) > 0.5).astype(float)
    assert ssim(a, 1 - a) < 0


def test_ssim_matches_window_oracle(rng):
    a = rng.random((32, 32))
    b = np.clip(a + 0.1 * rng.standard_normal((32, 32)), 0, 1)
    assert ssim(a, b) == pytest.approx(ssim_windows(a, b), abs=1e-10)


def test_ssim_color_is_channel_mean(rng):
    a, b = rng.random((16, 16, 3)), rng.random((16, 16, 3))
    assert ssim(a, b) == pytest.approx(np.mean([ssim_windows(a[:, :, c], b[:, :, c]) for c in range(3)]), abs=1e-10)


def test_ssim_range(rng):
    for _ in range(5):
        a, b = rng.random((16, 16, 1)), rng.random((16, 16, 1))
        assert -1 <= ssim(a, b) <= 1


def test_ssim_too_small(rng):
    with pytest.raises(ValueError):
        ssim(rng.random((10, 12)), rng.random((10, 12)))


def test_shape_mismatch(rng):
    with pytest.raises(ValueError):
        psnr(rng.random((16, 16, 3)), rng.random((16, 16, 1)))


def test_evaluate(rng):
    a = rng.random((16, 16, 3))
    r = evaluate(a, a)
    assert r.psnr_db == math.inf and r.ssim == pytest.approx(1.0)
