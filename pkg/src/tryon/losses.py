"""Training objectives for both generators."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Callable, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from tryon.warp import warp

Extractor = Callable[[torch.Tensor], Sequence[torch.Tensor]]


@dataclass
class LossWeights:
    lambda_ce: float = 10.0
    lambda_l1: float = 10.0
    lambda_vgg: float = 1.0
    lambda_tv: float = 2.0
    w: tuple[float, ...] = (0.25, 0.25, 0.25, 0.25)
    lambda_vgg_toig: float = 10.0
    lambda_fm_toig: float = 10.0

    def __post_init__(self):
        self.w = tuple(float(x) for x in self.w)
        for f in fields(self):
            v = getattr(self, f.name)
            vals = v if isinstance(v, tuple) else (v,)
            if any(x < 0 for x in vals):
                raise ValueError(f"loss weight {f.name} must be >= 0, got {v}")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# perceptual features


class RandomFeatureExtractor(nn.Module):
    """Frozen three-layer strided conv stack with seed-deterministic weights.

    Stands in for pretrained VGG features; any callable returning a list of
    feature maps can replace it.
    """

    def __init__(self, in_channels: int = 3, widths=(16, 32, 64), seed: int = 1234):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.convs = nn.ModuleList()
        cin = in_channels
        for cout in widths:
            conv = nn.Conv2d(cin, cout, 3, stride=2, padding=1)
            bound = (6.0 / (cin * 9)) ** 0.5
            with torch.no_grad():
                conv.weight.copy_(torch.rand(conv.weight.shape, generator=gen) * 2 * bound - bound)
                conv.bias.zero_()
            self.convs.append(conv)
            cin = cout
        self.requires_grad_(False)

    def forward(self, x) -> list[torch.Tensor]:
        feats = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x.to(conv.weight.dtype)), 0.2)
            feats.append(x)
        return feats


def identity_extractor(x: torch.Tensor) -> list[torch.Tensor]:
    return [x]


def feature_distance(extractor: Extractor, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return sum((fa - fb).abs().mean() for fa, fb in zip(extractor(a), extractor(b)))


# ---------------------------------------------------------------------------
# condition generator


def loss_ce(seg_pred: torch.Tensor, seg_true: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
    """Pixel-mean cross-entropy between a soft prediction and a one-hot target."""
    return -(seg_true * torch.log(seg_pred + eps)).sum(dim=-3).mean()


def _downsample(x: torch.Tensor, size, lo: float, hi: float) -> torch.Tensor:
    if tuple(x.shape[-2:]) == tuple(size):
        return x
    y = F.interpolate(x, size=size, mode="bicubic", align_corners=False, antialias=True)
    return y.clamp(lo, hi)


def multiscale_terms(flows: Sequence[torch.Tensor], source: torch.Tensor, target: torch.Tensor,
                     distance: Callable[[torch.Tensor, torch.Tensor], torch.Tensor],
                     lo: float, hi: float) -> list[torch.Tensor]:
    """Per-flow distances between ``target`` and ``source`` warped at each flow's scale."""
    terms = []
    for flow in flows:
        size = tuple(flow.shape[-2:])
        src = _downsample(source, size, lo, hi)
        tgt = _downsample(target, size, lo, hi)
        terms.append(distance(warp(src, flow), tgt))
    return terms


def _mae(a, b):
    return (a - b).abs().mean()


def loss_l1_multiscale(flows, warped_mask, clothes_mask, target_mask, w) -> torch.Tensor:
    """Weighted mask L1 over the intermediate flows plus the final warped-mask L1.

    ``flows`` are the intermediate flows (one per weight); masks are compared at
    each flow's native scale.
    """
    if len(flows) != len(w):
        raise ValueError(f"{len(flows)} flows but {len(w)} weights")
    terms = multiscale_terms(flows, clothes_mask, target_mask, _mae, 0.0, 1.0)
    total = sum((wi * t for wi, t in zip(w, terms)), torch.zeros((), dtype=warped_mask.dtype))
    return total + _mae(warped_mask, target_mask)


def loss_perceptual_multiscale(flows, warped_clothes, clothes, target_clothes, w,
                               extractor: Extractor) -> torch.Tensor:
    if len(flows) != len(w):
        raise ValueError(f"{len(flows)} flows but {len(w)} weights")

    def dist(a, b):
        return feature_distance(extractor, a, b)

    terms = multiscale_terms(flows, clothes, target_clothes, dist, -1.0, 1.0)
    total = sum((wi * t for wi, t in zip(w, terms)), torch.zeros((), dtype=warped_clothes.dtype))
    return total + dist(warped_clothes, target_clothes)


def _scales(d):
    if d is None:
        return None
    return list(d) if isinstance(d, (list, tuple)) else [d]


def loss_lsgan(d_real, d_fake, role: str) -> torch.Tensor:
    """Least-squares GAN loss; score lists (one per scale) are averaged."""
    fakes = _scales(d_fake)
    if role == "discriminator":
        reals = _scales(d_real)
        losses = [((r - 1) ** 2).mean() + (f ** 2).mean() for r, f in zip(reals, fakes)]
    elif role == "generator":
        losses = [((f - 1) ** 2).mean() for f in fakes]
    else:
        raise ValueError(f"role must be 'discriminator' or 'generator', got {role!r}")
    return sum(losses) / len(losses)


def loss_hinge(d_real, d_fake, role: str) -> torch.Tensor:
    fakes = _scales(d_fake)
    if role == "discriminator":
        reals = _scales(d_real)
        losses = [F.relu(1 - r).mean() + F.relu(1 + f).mean() for r, f in zip(reals, fakes)]
    elif role == "generator":
        losses = [-f.mean() for f in fakes]
    else:
        raise ValueError(f"role must be 'discriminator' or 'generator', got {role!r}")
    return sum(losses) / len(losses)


def _flatten(feats):
    for f in feats:
        if isinstance(f, (list, tuple)):
            yield from _flatten(f)
        else:
            yield f


def loss_feature_matching(real_feats, fake_feats) -> torch.Tensor:
    """Sum over scales and layers of the mean absolute feature difference.

    Accepts flat per-layer lists or per-scale lists of per-layer lists. Real
    features are treated as constants.
    """
    reals = list(_flatten(real_feats))
    fakes = list(_flatten(fake_feats))
    if len(reals) != len(fakes):
        raise ValueError("real and fake feature lists do not align")
    total = torch.zeros(())
    for r, f in zip(reals, fakes):
        r = torch.as_tensor(r)
        f = torch.as_tensor(f)
        total = total + (r.detach() - f).abs().mean()
    return total


TOCG_COMPONENTS = ("ce", "gan", "l1", "vgg", "tv")


def loss_tocg_total(components: dict, weights: LossWeights | None = None) -> torch.Tensor:
    """``λ_CE·ce + gan + λ_L1·l1 + λ_VGG·vgg + λ_TV·tv``."""
    weights = weights or LossWeights()
    return (weights.lambda_ce * components["ce"] + components["gan"]
            + weights.lambda_l1 * components["l1"] + weights.lambda_vgg * components["vgg"]
            + weights.lambda_tv * components["tv"])


def loss_toig_total(components: dict, weights: LossWeights) -> torch.Tensor:
    return (components["gan"] + weights.lambda_vgg_toig * components["vgg"]
            + weights.lambda_fm_toig * components["fm"])
