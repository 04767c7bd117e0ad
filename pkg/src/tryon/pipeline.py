"""Inference pipeline: condition generation, upscaling, gating, image synthesis,
evaluation and visual grids."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from tryon.condgen import CondGenerator, CondGenOutput, ConfigError, body_part_mask
from tryon.config import RunConfig
from tryon.data import Batch, LabelPalette, SampleRecord, colorize
from tryon.metrics import ssim
from tryon.rejection import (
    RejectionCalibration, build_rejection_input, discriminator_score, estimate_L, gate,
    threshold_sweep,
)
from tryon.warp import resize_flow, warp

log = logging.getLogger(__name__)


def upscale_seg(seg: torch.Tensor, size) -> torch.Tensor:
    """Bilinear upsampling followed by per-pixel renormalization."""
    if tuple(seg.shape[-2:]) == tuple(size):
        return seg
    up = F.interpolate(seg, size=size, mode="bilinear", align_corners=False).clamp_min(0)
    return up / up.sum(1, keepdim=True).clamp_min(1e-12)


def upscale_conditions(out: CondGenOutput, clothes, clothes_mask, palette: LabelPalette,
                       occlusion: bool = True):
    """Carry condition-resolution outputs to the resolution of ``clothes``.

    Returns ``(seg, warped_clothes, warped_mask)`` at full size: the segmentation
    is upsampled and renormalized, the full-resolution clothes are warped by the
    upsampled flow, and body-part occlusion is removed at full size.
    """
    size = tuple(clothes.shape[-2:])
    seg = upscale_seg(out.seg, size)
    flow = resize_flow(out.flow, size)
    raw_c = warp(clothes * clothes_mask, flow)
    raw_m = warp(clothes_mask, flow)
    if occlusion:
        keep = 1 - body_part_mask(seg, palette)
        return seg, raw_c * keep, raw_m * keep
    return seg, raw_c, raw_m


@dataclass
class InferResult:
    image: torch.Tensor | None
    accepted: bool
    p_accept: float | None
    seg: torch.Tensor
    warped_clothes: torch.Tensor
    d_score: float | None = None


class Pipeline:
    """Both generators plus the condition discriminator, loaded for inference."""

    def __init__(self, tocg: CondGenerator, tocg_disc, toig=None, cfg: RunConfig | None = None,
                 calibration: RejectionCalibration | None = None):
        self.tocg = tocg.eval()
        self.tocg_disc = tocg_disc.eval()
        self.toig = toig.eval() if toig is not None else None
        self.cfg = cfg or RunConfig()
        self.calibration = calibration

    @property
    def palette(self) -> LabelPalette:
        return self.tocg.palette

    @classmethod
    def from_checkpoints(cls, tocg_path, toig_path=None, calibration_path=None) -> "Pipeline":
        from tryon.train import load_tocg, load_toig

        tocg, disc, cfg, _ = load_tocg(tocg_path)
        toig = None
        if toig_path:
            toig, _, toig_cfg, _ = load_toig(toig_path)
            if tuple(toig_cfg.cond_size) != tuple(cfg.cond_size):
                raise ConfigError("condition and image generator checkpoints disagree on "
                                  f"resolution: {cfg.cond_size} vs {toig_cfg.cond_size}")
            cfg = toig_cfg
        cal = RejectionCalibration.load(calibration_path) if calibration_path else None
        return cls(tocg, disc, toig, cfg, cal)

    def _check(self, batch: Batch) -> None:
        size = tuple(batch.person.shape[-2:])
        if size != tuple(self.cfg.out_size):
            raise ConfigError(f"inputs are {size}, checkpoints expect {tuple(self.cfg.out_size)}")

    @torch.no_grad()
    def conditions(self, batch: Batch):
        """Condition-generator output at condition size and the upscaled conditions."""
        small = batch.resized(self.cfg.cond_size)
        out = self.tocg.run(small)
        up = upscale_conditions(out, batch.clothes, batch.clothes_mask, self.palette,
                                occlusion=self.tocg.occlusion_handling)
        return out, small, up

    @torch.no_grad()
    def d_scores(self, batch: Batch, out: CondGenOutput | None = None, small=None) -> torch.Tensor:
        if out is None:
            out, small, _ = self.conditions(batch)
        x = build_rejection_input(out.seg, small.pose, small.agnostic_parse, small.clothes,
                                  small.clothes_mask)
        eps = self.calibration.epsilon if self.calibration else 1e-6
        return discriminator_score(self.tocg_disc, x, eps)

    @torch.no_grad()
    def infer(self, batch: Batch, calibration: RejectionCalibration | None = None,
              threshold: float | None = None) -> list[InferResult]:
        self._check(batch)
        calibration = calibration or self.calibration
        out, small, (seg, wc, _) = self.conditions(batch)
        d = self.d_scores(batch, out, small) if calibration is not None else None
        results = []
        for k in range(len(batch)):
            accepted, p, dk = True, None, None
            if calibration is not None:
                dk = float(d[k])
                g = gate(dk, calibration, threshold)
                accepted, p = g.accepted, g.p
            results.append(InferResult(None, accepted, p, seg[k], wc[k], dk))
        todo = [k for k, r in enumerate(results) if r.accepted]
        if todo and self.toig is not None:
            b = batch[todo]
            images = self.toig(b.agnostic_image, wc[todo], b.pose, seg[todo])
            for k, img in zip(todo, images):
                results[k].image = img
        return results


def infer(person_record: SampleRecord, cloth_record: SampleRecord, pipeline: Pipeline,
          calibration: RejectionCalibration | None = None) -> InferResult:
    """Dress ``person_record`` in the garment of ``cloth_record``."""
    return pipeline.infer(Batch.stack([swap_cloth(person_record, cloth_record)]),
                          calibration)[0]


def swap_cloth(person: SampleRecord, cloth: SampleRecord) -> SampleRecord:
    return SampleRecord(
        person=person.person, clothes=cloth.clothes, clothes_mask=cloth.clothes_mask,
        pose=person.pose, parse=person.parse, agnostic_image=person.agnostic_image,
        agnostic_parse=person.agnostic_parse,
        pair_id=f"{person.pair_id}+{cloth.pair_id}", meta=dict(person.meta),
    )


def unpaired_permutation(n: int, seed: int) -> np.ndarray:
    """Seeded derangement-ish permutation assigning each person another garment."""
    if n < 2:
        return np.arange(n)
    perm = np.random.default_rng([seed, 7]).permutation(n)
    fixed = perm == np.arange(n)
    if fixed.any():
        perm = np.roll(perm, 1) if fixed.sum() == n else perm
        for i in np.flatnonzero(perm == np.arange(n)):
            j = (i + 1) % n
            perm[i], perm[j] = perm[j], perm[i]
    return perm


# ---------------------------------------------------------------------------
# evaluation and grids


def to_uint8(img: torch.Tensor) -> np.ndarray:
    return ((img.clamp(-1, 1) + 1) * 127.5).round().byte().permute(1, 2, 0).numpy()


def emit_grid(records: Sequence[SampleRecord], outputs: Sequence[InferResult], path
              ) -> np.ndarray:
    """One row per record: person, cloth, colorized segmentation, warped cloth, result."""
    if not records:
        raise ValueError("emit_grid needs at least one record")
    if len(records) != len(outputs):
        raise ValueError("records and outputs differ in length")
    rows = []
    for rec, res in zip(records, outputs):
        size = rec.person.shape[-2:]
        image = res.image if res.image is not None else torch.zeros(3, *size)
        tiles = [rec.person, rec.clothes, colorize(res.seg), res.warped_clothes, image]
        rows.append(torch.cat(tiles, dim=2))
    arr = to_uint8(torch.cat(rows, dim=1))
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(arr).save(path)
    return arr


def evaluate(pipeline: Pipeline, records: Sequence[SampleRecord], out_dir=None,
             seed: int = 0, chunk: int = 16) -> dict:
    """Paired-setting SSIM plus an unpaired result grid."""
    ssims = []
    for s in range(0, len(records), chunk):
        recs = list(records[s:s + chunk])
        batch = Batch.stack(recs)
        res = pipeline.infer(batch, calibration=None)
        imgs = torch.stack([r.image for r in res])
        ssims.extend(ssim(imgs, batch.person).tolist())
    report = {"paired_ssim": float(np.mean(ssims)), "n": len(records),
              "per_sample_ssim": ssims}
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        show = list(records[:4])
        res = pipeline.infer(Batch.stack(show), calibration=None)
        emit_grid(show, res, out_dir / "paired.png")
        perm = unpaired_permutation(len(show), seed)
        swapped = [swap_cloth(show[i], show[perm[i]]) for i in range(len(show))]
        res = pipeline.infer(Batch.stack(swapped), calibration=None)
        emit_grid(swapped, res, out_dir / "unpaired.png")
        (out_dir / "eval.json").write_text(json.dumps(report, indent=2))
    return report


def calibrate(pipeline: Pipeline, records: Sequence[SampleRecord], threshold: float = 0.3,
              chunk: int = 32) -> RejectionCalibration:
    """Estimate the rejection normalizer over ``records`` (normally the training set)."""
    scores = []
    for s in range(0, len(records), chunk):
        scores.extend(pipeline.d_scores(Batch.stack(list(records[s:s + chunk]))).tolist())
    cal = estimate_L(scores, threshold)
    log.info("calibrated L=%.4f over %d samples; sweep %s", cal.L, len(scores),
             threshold_sweep(cal))
    return cal
