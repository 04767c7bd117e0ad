"""Image-quality metrics: windowed SSIM and a stripe-period statistic for
detecting texture squeezing next to occluders."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

K1, K2 = 0.01, 0.03


def gaussian_window(size: int = 11, sigma: float = 1.5, dtype=torch.float64) -> torch.Tensor:
    x = torch.arange(size, dtype=dtype) - (size - 1) / 2
    g = torch.exp(-(x ** 2) / (2 * sigma ** 2))
    g = g / g.sum()
    return g[:, None] * g[None, :]


def ssim(a: torch.Tensor, b: torch.Tensor, window: int = 11, sigma: float = 1.5) -> torch.Tensor:
    """Gaussian-windowed SSIM of images in [-1, 1] (rescaled to [0, 1] internally).

    Only fully-contained windows are used. Returns a scalar for ``[C, H, W]``
    inputs and one value per sample for ``[B, C, H, W]``.
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    squeeze = a.dim() == 3
    if squeeze:
        a, b = a.unsqueeze(0), b.unsqueeze(0)
    a = (a.double() + 1) / 2
    b = (b.double() + 1) / 2
    c = a.shape[1]
    g = gaussian_window(window, sigma).expand(c, 1, window, window)

    def filt(x):
        return F.conv2d(x, g, groups=c)

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    c1, c2 = K1 ** 2, K2 ** 2
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    s = s.flatten(1).mean(1)
    return s[0] if squeeze else s


def estimate_period(rows: list[np.ndarray], candidates: np.ndarray) -> float:
    """Common period of sinusoids fitted independently (amplitude, phase, offset)
    to each 1-D profile; picks the candidate with the least total residual."""
    best, best_err = float("nan"), np.inf
    for p in candidates:
        err = 0.0
        for y in rows:
            t = np.arange(len(y))
            A = np.stack([np.cos(2 * np.pi * t / p), np.sin(2 * np.pi * t / p), np.ones_like(t,
                         dtype=np.float64)], 1)
            coef, *_ = np.linalg.lstsq(A, y, rcond=None)
            err += float(((A @ coef - y) ** 2).sum())
        if err < best_err:
            best, best_err = float(p), err
    return best


def stripe_period_near_occluder(
    warped_clothes: torch.Tensor,
    parse: torch.Tensor,
    occluded_side: str,
    true_period: float,
    clothing_channel: int,
    arm_channel: int,
    window_periods: float = 2.5,
    min_periods: float = 1.5,
) -> float | None:
    """Stripe period of ``warped_clothes`` just inside the occluding arm.

    For every row crossed by the arm, takes the garment pixels on the torso-center
    side of the arm (up to ``window_periods`` true periods wide) and fits a
    common-period sinusoid to the luminance profiles. Returns ``None`` when no
    row has at least ``min_periods`` periods of visible garment.
    """
    lum = warped_clothes.double().mean(0).numpy()
    labels = parse.argmax(0).numpy()
    garment = labels == clothing_channel
    arm = labels == arm_channel
    visible = np.abs(warped_clothes.double()).sum(0).numpy() > 1e-6
    win = int(round(window_periods * true_period))
    rows = []
    for i in range(lum.shape[0]):
        cols = np.flatnonzero(arm[i])
        if not len(cols):
            continue
        if occluded_side == "left":
            start, step = cols.max() + 1, 1
        else:
            start, step = cols.min() - 1, -1
        seg = []
        j = start
        while 0 <= j < lum.shape[1] and len(seg) < win and garment[i, j] and visible[i, j]:
            seg.append(lum[i, j])
            j += step
        if len(seg) >= min_periods * true_period:
            rows.append(np.asarray(seg) - np.mean(seg))
    if not rows:
        return None
    candidates = true_period * np.linspace(0.5, 1.6, 221)
    return estimate_period(rows, candidates)
