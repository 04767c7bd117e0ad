import numpy as np
import pytest
import torch
from skimage.metrics import structural_similarity

from tryon.metrics import estimate_period, ssim

C1 = 0.01 ** 2


def rand_img(seed, shape=(3, 32, 24)):
    return torch.from_numpy(np.random.default_rng(seed).uniform(-1, 1, shape))


def reference(a, b):
    return structural_similarity(
        ((a + 1) / 2).numpy(), ((b + 1) / 2).numpy(), channel_axis=0, data_range=1.0,
        gaussian_weights=True, sigma=1.5, use_sample_covariance=False)


@pytest.mark.parametrize("seed", range(5))
def test_matches_scikit_image(seed):
    a = rand_img(seed)
    b = (a + 0.3 * rand_img(seed + 100)).clamp(-1, 1)
    assert abs(float(ssim(a, b)) - reference(a, b)) < 1e-6


def test_identity_and_symmetry():
    a, b = rand_img(1), rand_img(2)
    assert float(ssim(a, a)) == pytest.approx(1.0, abs=1e-12)
    assert float(ssim(a, b)) == pytest.approx(float(ssim(b, a)), abs=1e-12)


def test_constant_black_vs_white():
    # luminance term C1 / (1 + C1); contrast-structure term C2 / C2
    a = torch.full((3, 16, 16), -1.0)
    b = torch.full((3, 16, 16), 1.0)
    expected = C1 / (1 + C1)
    assert float(ssim(a, b)) == pytest.approx(expected, rel=1e-9)
    assert reference(a, b) == pytest.approx(expected, rel=1e-6)


def test_batched_returns_per_sample():
    a = torch.stack([rand_img(3), rand_img(4)])
    b = torch.stack([rand_img(3), rand_img(5)])
    out = ssim(a, b)
    assert out.shape == (2,) and out[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        ssim(a, b[:1])


@pytest.mark.parametrize("period", [6.0, 9.5, 13.0])
def test_estimate_period_recovers_sinusoid(period):
    rows = [np.cos(2 * np.pi * (np.arange(30) + ph) / period) for ph in (0.0, 1.7, 3.1)]
    est = estimate_period(rows, period * np.linspace(0.5, 1.6, 221))
    assert abs(est - period) / period < 0.01
