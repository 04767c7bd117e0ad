"""Try-on condition generator: joint appearance-flow and segmentation decoder."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from tryon.data import DEFAULT_PALETTE, LabelPalette
from tryon.warp import upsample_flow, warp

DEFAULT_WIDTHS = (16, 32, 64, 128, 128)
NUM_LEVELS = 5


class ConfigError(ValueError):
    pass


def check_resolution(size: tuple[int, int], levels: int = NUM_LEVELS) -> None:
    f = 2 ** (levels - 1)
    if size[0] % f or size[1] % f:
        raise ConfigError(f"resolution {size} must be divisible by {f}")


def conv3x3(cin: int, cout: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, 3, stride=stride, padding=1)


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.conv1 = conv3x3(cin, cout, stride)
        self.conv2 = conv3x3(cout, cout)
        self.skip = None
        if cin != cout or stride != 1:
            self.skip = nn.Conv2d(cin, cout, 1, stride=stride)

    def forward(self, x):
        h = F.leaky_relu(self.conv1(x), 0.2)
        h = self.conv2(h)
        s = x if self.skip is None else self.skip(x)
        return F.leaky_relu(h + s, 0.2)


class PyramidEncoder(nn.Module):
    """Five residual blocks; level 0 keeps the input size, each later one halves it."""

    def __init__(self, in_channels: int, widths=DEFAULT_WIDTHS):
        super().__init__()
        if len(widths) != NUM_LEVELS:
            raise ConfigError(f"need {NUM_LEVELS} widths, got {len(widths)}")
        chans = (in_channels,) + tuple(widths)
        self.blocks = nn.ModuleList(
            ResBlock(chans[k], chans[k + 1], stride=1 if k == 0 else 2) for k in range(NUM_LEVELS)
        )

    def forward(self, x) -> list[torch.Tensor]:
        check_resolution(tuple(x.shape[-2:]))
        feats = []
        for block in self.blocks:
            x = block(x)
            feats.append(x)
        return feats


@dataclass
class FusionState:
    flow: torch.Tensor
    seg_feature: torch.Tensor


@dataclass
class CondGenOutput:
    warped_clothes: torch.Tensor
    warped_mask: torch.Tensor
    seg: torch.Tensor
    seg_logits: torch.Tensor
    seg_raw: torch.Tensor
    flow_pyramid: list[torch.Tensor]
    raw_warped_clothes: torch.Tensor
    raw_warped_mask: torch.Tensor
    body_mask: torch.Tensor

    @property
    def flow(self) -> torch.Tensor:
        return self.flow_pyramid[-1]


class FusionBlock(nn.Module):
    """One coarse-to-fine step refining the flow and the segmentation feature.

    Flow pathway: residual flow update predicted from the clothing features
    warped by the incoming flow plus the incoming segmentation feature.
    Seg pathway: clothing features warped by the refined flow, concatenated with
    the incoming segmentation feature and the person features of this level.
    With ``exchange=False`` neither pathway sees the other: the flow predictor
    takes person features instead, and the seg pathway gets no clothing features.
    """

    def __init__(self, clothes_ch: int, person_ch: int, seg_in_ch: int, seg_out_ch: int,
                 exchange: bool = True):
        super().__init__()
        self.exchange = exchange
        guide_ch = seg_in_ch if exchange else person_ch
        self.flow_path = nn.Sequential(
            conv3x3(clothes_ch + guide_ch, seg_out_ch), nn.LeakyReLU(0.2),
            conv3x3(seg_out_ch, seg_out_ch), nn.LeakyReLU(0.2),
        )
        self.flow_delta = conv3x3(seg_out_ch, 2)
        nn.init.zeros_(self.flow_delta.weight)
        nn.init.zeros_(self.flow_delta.bias)
        seg_in = seg_in_ch + person_ch + (clothes_ch if exchange else 0)
        self.seg_path = nn.Sequential(
            conv3x3(seg_in, seg_out_ch), nn.LeakyReLU(0.2),
            conv3x3(seg_out_ch, seg_out_ch), nn.LeakyReLU(0.2),
        )

    def forward(self, state: FusionState, e_c: torch.Tensor, e_s: torch.Tensor) -> FusionState:
        if e_c.shape[-2:] != e_s.shape[-2:]:
            raise ValueError("clothing and person features differ in size")
        size = e_c.shape[-2:]
        if tuple(s * 2 for s in state.flow.shape[-2:]) != tuple(size):
            raise ValueError(
                f"state at {tuple(state.flow.shape[-2:])} is not one level coarser than {tuple(size)}"
            )
        flow_up = upsample_flow(state.flow, 2)
        seg_up = F.interpolate(state.seg_feature, scale_factor=2, mode="bilinear",
                               align_corners=False)
        guide = seg_up if self.exchange else e_s
        h = self.flow_path(torch.cat([warp(e_c, flow_up), guide], 1))
        flow = flow_up + self.flow_delta(h)
        if self.exchange:
            seg_in = torch.cat([warp(e_c, flow), seg_up, e_s], 1)
        else:
            seg_in = torch.cat([seg_up, e_s], 1)
        return FusionState(flow, self.seg_path(seg_in))


def condition_align(seg_raw: torch.Tensor, warped_mask: torch.Tensor, clothing_channel: int,
                    enabled: bool = True) -> tuple[torch.Tensor, torch.Tensor]:
    """ReLU the raw logits, mask the clothing channel by the warped clothing mask,
    then softmax over channels. Returns ``(seg, seg_logits)``."""
    r = F.relu(seg_raw)
    if enabled:
        ch = torch.arange(r.shape[-3], device=r.device).view(-1, 1, 1)
        logits = torch.where(ch == clothing_channel, r * warped_mask, r)
    else:
        logits = r
    return torch.softmax(logits, dim=-3), logits


def body_part_mask(seg: torch.Tensor, palette: LabelPalette) -> torch.Tensor:
    """1 where the channel argmax is a body part (ties -> lowest channel), else 0."""
    labels = seg.argmax(dim=-3, keepdim=True)
    parts = torch.tensor(sorted(palette.body_part_channels), device=seg.device)
    return torch.isin(labels, parts).to(seg.dtype)


def occlusion_handle(raw_warped_clothes: torch.Tensor, raw_warped_mask: torch.Tensor,
                     seg: torch.Tensor, palette: LabelPalette = DEFAULT_PALETTE
                     ) -> tuple[torch.Tensor, torch.Tensor]:
    """Remove body-part-occluded pixels from the warped clothes and mask."""
    keep = 1 - body_part_mask(seg.detach(), palette)
    return raw_warped_clothes * keep, raw_warped_mask * keep


class CondGenerator(nn.Module):
    def __init__(
        self,
        palette: LabelPalette = DEFAULT_PALETTE,
        widths=DEFAULT_WIDTHS,
        fusion_exchange: bool = True,
        condition_align: bool = True,
        occlusion_handling: bool = True,
    ):
        super().__init__()
        self.palette = palette
        self.widths = tuple(widths)
        self.fusion_exchange = fusion_exchange
        self.condition_align = condition_align
        self.occlusion_handling = occlusion_handling
        nseg = palette.num_channels
        self.clothes_encoder = PyramidEncoder(4, widths)
        self.seg_encoder = PyramidEncoder(nseg + 3, widths)
        self.init_flow = conv3x3(widths[-1] * 2, 2)
        self.init_seg = nn.Sequential(ResBlock(widths[-1], widths[-1]),
                                      ResBlock(widths[-1], widths[-1]))
        self.blocks = nn.ModuleList()
        for i in range(1, NUM_LEVELS):
            level = NUM_LEVELS - 1 - i
            self.blocks.append(FusionBlock(widths[level], widths[level], widths[level + 1],
                                           widths[level], exchange=fusion_exchange))
        self.seg_head = conv3x3(widths[0], nseg)

    def encode_clothing(self, clothes, clothes_mask) -> list[torch.Tensor]:
        return self.clothes_encoder(torch.cat([clothes, clothes_mask], 1))

    def encode_segmentation(self, agnostic_parse, pose) -> list[torch.Tensor]:
        return self.seg_encoder(torch.cat([agnostic_parse, pose], 1))

    def init_fusion(self, e_c: list[torch.Tensor], e_s: list[torch.Tensor]) -> FusionState:
        if e_c[-1].shape[-2:] != e_s[-1].shape[-2:]:
            raise ValueError("pyramids come from different resolutions")
        flow = self.init_flow(torch.cat([e_c[-1], e_s[-1]], 1))
        return FusionState(flow, self.init_seg(e_s[-1]))

    def fusion_block(self, state: FusionState, e_c_level, e_s_level, block_index: int
                     ) -> FusionState:
        if not 1 <= block_index <= NUM_LEVELS - 1:
            raise ValueError(f"block_index must be in 1..{NUM_LEVELS - 1}")
        return self.blocks[block_index - 1](state, e_c_level, e_s_level)

    def forward(self, clothes, clothes_mask, agnostic_parse, pose) -> CondGenOutput:
        clothes = clothes * clothes_mask
        e_c = self.encode_clothing(clothes, clothes_mask)
        e_s = self.encode_segmentation(agnostic_parse, pose)
        state = self.init_fusion(e_c, e_s)
        flows = [state.flow]
        for i in range(1, NUM_LEVELS):
            level = NUM_LEVELS - 1 - i
            state = self.fusion_block(state, e_c[level], e_s[level], i)
            flows.append(state.flow)
        seg_raw = F.relu(self.seg_head(state.seg_feature))
        raw_clothes = warp(clothes, state.flow)
        raw_mask = warp(clothes_mask, state.flow)
        seg, logits = condition_align(seg_raw, raw_mask, self.palette.clothing_channel,
                                      enabled=self.condition_align)
        if self.occlusion_handling:
            body = body_part_mask(seg.detach(), self.palette)
        else:
            body = torch.zeros_like(raw_mask)
        return CondGenOutput(
            warped_clothes=raw_clothes * (1 - body),
            warped_mask=raw_mask * (1 - body),
            seg=seg,
            seg_logits=logits,
            seg_raw=seg_raw,
            flow_pyramid=flows,
            raw_warped_clothes=raw_clothes,
            raw_warped_mask=raw_mask,
            body_mask=body,
        )

    def run(self, batch) -> CondGenOutput:
        """Forward on a :class:`tryon.data.Batch` at condition resolution."""
        return self(batch.clothes, batch.clothes_mask, batch.agnostic_parse, batch.pose)
