"""Appearance-flow warping and flow utilities.

Flows are ``[..., 2, h, w]`` tensors in pixel units at their own scale:
channel 0 is the horizontal displacement, channel 1 the vertical one.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F


def _batched(x: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if x.dim() == 3:
        return x.unsqueeze(0), True
    if x.dim() == 4:
        return x, False
    raise ValueError(f"expected a [C, H, W] or [B, C, H, W] tensor, got shape {tuple(x.shape)}")


def flow_to_grid(flow: torch.Tensor) -> torch.Tensor:
    """Pixel-unit flow ``[B, 2, h, w]`` -> ``grid_sample`` grid ``[B, h, w, 2]``
    (``align_corners=True`` convention), for callers that want ``grid_sample``."""
    b, _, h, w = flow.shape
    ys = torch.arange(h, dtype=flow.dtype, device=flow.device)
    xs = torch.arange(w, dtype=flow.dtype, device=flow.device)
    px = xs.view(1, 1, w) + flow[:, 0]
    py = ys.view(1, h, 1) + flow[:, 1]
    gx = 2 * px / max(w - 1, 1) - 1
    gy = 2 * py / max(h - 1, 1) - 1
    return torch.stack([gx, gy], dim=-1)


def warp(x: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
    """Bilinearly sample ``x`` at ``(j + flow[0], i + flow[1])`` with zero padding.

    Works on images, masks and feature maps alike, batched or not. ``flow``
    must share ``x``'s spatial size; upsample it first otherwise. Sample
    points are kept in pixel units so integer displacements are exact.
    """
    xb, squeeze = _batched(x)
    fb, _ = _batched(flow)
    if fb.shape[1] != 2:
        raise ValueError(f"flow must have 2 channels, got {fb.shape[1]}")
    if xb.shape[-2:] != fb.shape[-2:] or xb.shape[0] != fb.shape[0]:
        raise ValueError(
            f"flow {tuple(flow.shape)} does not match input {tuple(x.shape)}"
        )
    fb = fb.to(xb.dtype)
    b, c, h, w = xb.shape
    sx = torch.arange(w, dtype=xb.dtype, device=xb.device).view(1, 1, w) + fb[:, 0]
    sy = torch.arange(h, dtype=xb.dtype, device=xb.device).view(1, h, 1) + fb[:, 1]
    x0, y0 = sx.detach().floor(), sy.detach().floor()
    ax, ay = sx - x0, sy - y0
    flat = xb.reshape(b, c, h * w)
    out = None
    for dy, dx, wt in ((0, 0, (1 - ax) * (1 - ay)), (0, 1, ax * (1 - ay)),
                       (1, 0, (1 - ax) * ay), (1, 1, ax * ay)):
        xi, yi = x0 + dx, y0 + dy
        inside = (xi >= 0) & (xi <= w - 1) & (yi >= 0) & (yi <= h - 1)
        idx = (yi.clamp(0, h - 1) * w + xi.clamp(0, w - 1)).long().view(b, 1, h * w)
        v = flat.gather(2, idx.expand(b, c, h * w)).view(b, c, h, w)
        term = v * (wt * inside).unsqueeze(1)
        out = term if out is None else out + term
    return out.squeeze(0) if squeeze else out


def upsample_flow(flow: torch.Tensor, factor: int) -> torch.Tensor:
    """Bilinear ×``factor`` upsampling with displacements rescaled to the new grid."""
    if factor < 1 or int(factor) != factor:
        raise ValueError(f"factor must be an integer >= 1, got {factor}")
    if factor == 1:
        return flow
    fb, squeeze = _batched(flow)
    up = F.interpolate(fb, scale_factor=factor, mode="bilinear", align_corners=False) * factor
    return up.squeeze(0) if squeeze else up


def resize_flow(flow: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    """Resize to an arbitrary grid, scaling each component by its own axis ratio."""
    fb, squeeze = _batched(flow)
    h, w = fb.shape[-2:]
    if (h, w) == tuple(size):
        return flow
    up = F.interpolate(fb, size=size, mode="bilinear", align_corners=False)
    scale = torch.tensor([size[1] / w, size[0] / h], dtype=up.dtype).view(1, 2, 1, 1)
    up = up * scale
    return up.squeeze(0) if squeeze else up


def loss_tv(flow: torch.Tensor) -> torch.Tensor:
    """Total variation: summed absolute forward differences along both axes.

    Sums over channels, pixels and (if present) the batch; no wraparound.
    """
    dx = (flow[..., :, 1:] - flow[..., :, :-1]).abs().sum()
    dy = (flow[..., 1:, :] - flow[..., :-1, :]).abs().sum()
    return dx + dy
