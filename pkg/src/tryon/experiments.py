"""Runnable studies: ablation ordering, texture squeezing next to occluders, and
rejection of inputs with corrupted clothing masks."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from tryon.config import RunConfig
from tryon.data import Batch, SampleRecord, generate_synthetic_dataset
from tryon.metrics import stripe_period_near_occluder
from tryon.pipeline import Pipeline, calibrate, evaluate
from tryon.rejection import RejectionCalibration, p_accept
from tryon.train import load_records, load_tocg, train_tocg, train_toig

log = logging.getLogger(__name__)

ABLATION_VARIANTS = {
    "full": {},
    "no_fusion_exchange": {"no_fusion_exchange": True},
    "no_condition_align": {"no_condition_align": True},
    "no_fusion_exchange+no_condition_align": {"no_fusion_exchange": True,
                                              "no_condition_align": True},
}


def train_pair(cfg: RunConfig, out_dir, reuse: bool = True) -> tuple[Path, Path]:
    """Train both stages into ``out_dir`` (skipping stages whose checkpoint exists)."""
    out_dir = Path(out_dir)
    tocg = out_dir / "tocg.pt"
    toig = out_dir / "toig.pt"
    if not (reuse and tocg.exists()):
        train_tocg(cfg, out_dir)
    if not (reuse and toig.exists()):
        train_toig(cfg, tocg, out_dir)
    return tocg, toig


def ablation_study(base: RunConfig, seeds: Sequence[int], out_dir,
                   variants: dict | None = None, reuse: bool = True) -> dict:
    """Paired-setting SSIM on the test split for every variant and seed."""
    variants = variants or ABLATION_VARIANTS
    out_dir = Path(out_dir)
    per_seed: dict[str, list[float]] = {name: [] for name in variants}
    for seed in seeds:
        test = load_records(base.with_overrides(seed=seed), "test")
        for name, flags in variants.items():
            cfg = base.with_overrides(seed=seed, **flags)
            run = out_dir / f"{name}_seed{seed}"
            tocg, toig = train_pair(cfg, run, reuse)
            report = evaluate(Pipeline.from_checkpoints(tocg, toig), test)
            per_seed[name].append(report["paired_ssim"])
            log.info("ablation %s seed %d ssim %.4f", name, seed, report["paired_ssim"])
    means = {name: float(np.mean(v)) for name, v in per_seed.items()}
    result = {"seeds": list(seeds), "per_seed": per_seed, "mean_ssim": means}
    if set(ABLATION_VARIANTS) <= set(means):
        full = means["full"]
        double = means["no_fusion_exchange+no_condition_align"]
        singles = [means["no_fusion_exchange"], means["no_condition_align"]]
        result["ordering_holds"] = all(full >= s >= double for s in singles)
    (out_dir / "ablation.json").parent.mkdir(parents=True, exist_ok=True)
    (out_dir / "ablation.json").write_text(json.dumps(result, indent=2))
    return result


# ---------------------------------------------------------------------------
# texture squeezing


@dataclass
class SqueezeResult:
    mean_deviation: float
    deviations: list[float]
    skipped: int


def occluded_records(seed: int, n: int, size) -> list[SampleRecord]:
    return generate_synthetic_dataset(seed, n, size, occlusion_prob=1.0)


@torch.no_grad()
def stripe_deviation(pipeline: Pipeline, records: Sequence[SampleRecord]) -> SqueezeResult:
    """Relative error of the stripe period of the warped garment beside the arm."""
    palette = pipeline.palette
    arms = {"left": palette.index("left_arm"), "right": palette.index("right_arm")}
    _, _, (seg, warped, _) = pipeline.conditions(Batch.stack(list(records)))
    devs, skipped = [], 0
    for k, rec in enumerate(records):
        side = rec.meta["occluded_side"]
        true = rec.meta["stripe_period_frac"] * rec.size[1]
        est = stripe_period_near_occluder(warped[k], rec.parse, side, true,
                                          palette.clothing_channel, arms[side])
        if est is None:
            skipped += 1
            continue
        devs.append(abs(est - true) / true)
    return SqueezeResult(float(np.mean(devs)) if devs else float("nan"), devs, skipped)


def squeezing_study(with_occlusion: Pipeline, without_occlusion: Pipeline,
                    records: Sequence[SampleRecord]) -> dict:
    a = stripe_deviation(with_occlusion, records)
    b = stripe_deviation(without_occlusion, records)
    return {"with_occlusion_handling": a.mean_deviation,
            "without_occlusion_handling": b.mean_deviation,
            "skipped": [a.skipped, b.skipped],
            "per_sample": {"with": a.deviations, "without": b.deviations}}


# ---------------------------------------------------------------------------
# rejection of corrupted clothing masks


def corrupt_mask(mask: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    """Erode a ``[1, H, W]`` mask by a random radius and shift it by a random offset."""
    h, w = mask.shape[-2:]
    unit = max(1, round(w / 48))
    r = int(rng.integers(1, 4)) * unit
    eroded = 1 - F.max_pool2d((1 - mask).unsqueeze(0), 2 * r + 1, stride=1, padding=r)[0]
    dy, dx = (int(v) * unit * s for v, s in zip(rng.integers(2, 6, size=2),
                                                 rng.choice([-1, 1], size=2)))
    shifted = torch.roll(eroded, shifts=(dy, dx), dims=(-2, -1))
    if dy > 0:
        shifted[..., :dy, :] = 0
    elif dy < 0:
        shifted[..., dy:, :] = 0
    if dx > 0:
        shifted[..., :, :dx] = 0
    elif dx < 0:
        shifted[..., :, dx:] = 0
    return shifted


def rejection_separation(pipeline: Pipeline, calibration: RejectionCalibration,
                         records: Sequence[SampleRecord], seed: int = 0) -> dict:
    rng = np.random.default_rng([seed, 99])
    clean = Batch.stack(list(records))
    bad = Batch.stack(list(records))
    bad.clothes_mask = torch.stack([corrupt_mask(m, rng) for m in clean.clothes_mask])
    d_clean = pipeline.d_scores(clean).numpy()
    d_bad = pipeline.d_scores(bad).numpy()
    p_clean = p_accept(d_clean, calibration)
    p_bad = p_accept(d_bad, calibration)
    lower = p_bad < p_clean
    return {"fraction_lower": float(lower.mean()), "n": len(records),
            "p_clean": p_clean.tolist(), "p_corrupted": p_bad.tolist(),
            "d_clean": d_clean.tolist(), "d_corrupted": d_bad.tolist()}


def calibrated_pipeline(tocg_path, cfg: RunConfig | None = None, threshold: float = 0.3
                        ) -> tuple[Pipeline, RejectionCalibration]:
    """Condition-generator-only pipeline calibrated on its training split."""
    _, _, tcfg, _ = load_tocg(tocg_path)
    pipe = Pipeline.from_checkpoints(tocg_path)
    cfg = cfg or tcfg
    cal = calibrate(pipe, load_records(cfg, "train"), threshold)
    pipe.calibration = cal
    return pipe, cal

