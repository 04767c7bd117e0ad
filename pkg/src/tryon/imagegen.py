"""Segmentation-conditioned image generator (SPADE residual blocks) and the
multi-scale patch discriminators used by both stages."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils.parametrizations import spectral_norm

from tryon.condgen import ConfigError
from tryon.data import DEFAULT_PALETTE, LabelPalette

DEFAULT_GEN_WIDTHS = (128, 64, 32, 16)
COND_CHANNELS = 9  # agnostic image, warped clothes, pose


def _sn(module: nn.Module, enabled: bool) -> nn.Module:
    return spectral_norm(module) if enabled else module


def instance_normalize(x: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """Per-sample, per-channel zero mean / unit variance over spatial dims."""
    mean = x.mean(dim=(-2, -1), keepdim=True)
    var = x.var(dim=(-2, -1), keepdim=True, unbiased=False)
    return (x - mean) / torch.sqrt(var + eps)


class SPADE(nn.Module):
    def __init__(self, norm_channels: int, label_channels: int, hidden: int = 32):
        super().__init__()
        self.shared = nn.Sequential(nn.Conv2d(label_channels, hidden, 3, padding=1), nn.ReLU())
        self.gamma = nn.Conv2d(hidden, norm_channels, 3, padding=1)
        self.beta = nn.Conv2d(hidden, norm_channels, 3, padding=1)

    def forward(self, x, seg):
        if seg.shape[-2:] != x.shape[-2:]:
            seg = F.interpolate(seg, size=x.shape[-2:], mode="bilinear", align_corners=False)
        h = self.shared(seg)
        return instance_normalize(x) * (1 + self.gamma(h)) + self.beta(h)


def spade_norm(x: torch.Tensor, seg: torch.Tensor, params: SPADE) -> torch.Tensor:
    return params(x, seg)


class SPADEResBlock(nn.Module):
    def __init__(self, fin: int, fout: int, label_channels: int, hidden: int = 32,
                 spectral: bool = True):
        super().__init__()
        fmid = min(fin, fout)
        self.conv_0 = _sn(nn.Conv2d(fin, fmid, 3, padding=1), spectral)
        self.conv_1 = _sn(nn.Conv2d(fmid, fout, 3, padding=1), spectral)
        self.norm_0 = SPADE(fin, label_channels, hidden)
        self.norm_1 = SPADE(fmid, label_channels, hidden)
        self.learned_skip = fin != fout
        if self.learned_skip:
            self.conv_s = _sn(nn.Conv2d(fin, fout, 1, bias=False), spectral)
            self.norm_s = SPADE(fin, label_channels, hidden)

    def forward(self, x, seg):
        s = self.conv_s(self.norm_s(x, seg)) if self.learned_skip else x
        dx = self.conv_0(F.leaky_relu(self.norm_0(x, seg), 0.2))
        dx = self.conv_1(F.leaky_relu(self.norm_1(dx, seg), 0.2))
        return s + dx


class ImageGenerator(nn.Module):
    """Coarse-to-fine SPADE residual stack with ×2 upsampling between blocks.

    The conditioning images are resized and concatenated to the activation
    before every block.
    """

    def __init__(self, palette: LabelPalette = DEFAULT_PALETTE, widths=DEFAULT_GEN_WIDTHS,
                 hidden: int = 32, spectral: bool = True):
        super().__init__()
        self.widths = tuple(widths)
        nseg = palette.num_channels
        self.head = _sn(nn.Conv2d(nseg + COND_CHANNELS, widths[0], 3, padding=1), spectral)
        self.blocks = nn.ModuleList()
        cin = widths[0]
        for cout in widths:
            self.blocks.append(SPADEResBlock(cin + COND_CHANNELS, cout, nseg,
                                             min(hidden, cout), spectral))
            cin = cout
        self.tail = _sn(nn.Conv2d(widths[-1], 3, 3, padding=1), spectral)

    def check_size(self, size) -> tuple[int, int]:
        f = 2 ** (len(self.blocks) - 1)
        if size[0] % f or size[1] % f:
            raise ConfigError(f"output size {tuple(size)} not divisible by {f}")
        return size[0] // f, size[1] // f

    def forward(self, agnostic_image, warped_clothes, pose, seg):
        size = tuple(agnostic_image.shape[-2:])
        h0, w0 = self.check_size(size)
        cond = torch.cat([agnostic_image, warped_clothes, pose], 1)
        if seg.shape[-2:] != size:
            seg = F.interpolate(seg, size=size, mode="bilinear", align_corners=False)

        def at(t, s):
            return t if tuple(t.shape[-2:]) == s else F.interpolate(
                t, size=s, mode="bilinear", align_corners=False)

        x = self.head(torch.cat([at(seg, (h0, w0)), at(cond, (h0, w0))], 1))
        for k, block in enumerate(self.blocks):
            s = (h0 * 2 ** k, w0 * 2 ** k)
            if k:
                x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = block(torch.cat([x, at(cond, s)], 1), seg)
        return torch.tanh(self.tail(F.leaky_relu(x, 0.2)))


class PatchDiscriminator(nn.Module):
    """Strided conv stack emitting a patch score map; keeps intermediate features."""

    def __init__(self, in_channels: int, ndf: int = 32, n_layers: int = 3,
                 spectral: bool = True, dropout: float = 0.0):
        super().__init__()
        layers = []
        cin, cout = in_channels, ndf
        for k in range(n_layers):
            stride = 2 if k < 2 else 1
            kernel, pad = (4, 1) if stride == 2 else (3, 1)
            seq = [_sn(nn.Conv2d(cin, cout, kernel, stride, pad), spectral), nn.LeakyReLU(0.2)]
            if dropout > 0:
                seq.append(nn.Dropout(dropout))
            layers.append(nn.Sequential(*seq))
            cin, cout = cout, min(cout * 2, ndf * 8)
        self.layers = nn.ModuleList(layers)
        self.score = _sn(nn.Conv2d(cin, 1, 3, 1, 1), spectral)

    def forward(self, x) -> tuple[torch.Tensor, list[torch.Tensor]]:
        feats = []
        for layer in self.layers:
            x = layer(x)
            feats.append(x)
        return self.score(x), feats


class MultiscaleDiscriminator(nn.Module):
    """Patch discriminators at full and progressively halved input scale.

    ``input_downsample`` halves the input before the first discriminator (used by
    the condition generator to widen the receptive field).
    """

    def __init__(self, in_channels: int, num_scales: int = 2, ndf: int = 32,
                 n_layers: int = 3, spectral: bool = True, dropout: float = 0.0,
                 input_downsample: bool = False):
        super().__init__()
        self.input_downsample = input_downsample
        self.discs = nn.ModuleList(
            PatchDiscriminator(in_channels, ndf, n_layers, spectral, dropout)
            for _ in range(num_scales)
        )

    @staticmethod
    def _half(x):
        return F.avg_pool2d(x, 3, stride=2, padding=1, count_include_pad=False)

    def forward(self, x) -> tuple[list[torch.Tensor], list[list[torch.Tensor]]]:
        if self.input_downsample:
            x = self._half(x)
        scores, feats = [], []
        for k, d in enumerate(self.discs):
            if k:
                x = self._half(x)
            s, f = d(x)
            scores.append(s)
            feats.append(f)
        return scores, feats


def discriminate(x: torch.Tensor, bank: MultiscaleDiscriminator):
    return bank(x)


def toig_disc_input(seg, agnostic_image, warped_clothes, pose, image) -> torch.Tensor:
    return torch.cat([seg, agnostic_image, warped_clothes, pose, image], 1)


def make_tocg_discriminator(palette: LabelPalette = DEFAULT_PALETTE, ndf: int = 32,
                            dropout: float = 0.5) -> MultiscaleDiscriminator:
    nseg = palette.num_channels
    return MultiscaleDiscriminator(2 * nseg + 7, ndf=ndf, dropout=dropout,
                                   input_downsample=True)


def make_toig_discriminator(palette: LabelPalette = DEFAULT_PALETTE, ndf: int = 32
                            ) -> MultiscaleDiscriminator:
    return MultiscaleDiscriminator(palette.num_channels + COND_CHANNELS + 3, ndf=ndf)
