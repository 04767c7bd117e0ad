"""Training loops, checkpoints and metrics logs for both stages."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from tryon.condgen import CondGenerator
from tryon.config import RunConfig
from tryon.data import (
    DEFAULT_PALETTE, Batch, LabelPalette, generate_synthetic_dataset, load_dataset,
)
from tryon.imagegen import (
    ImageGenerator, make_tocg_discriminator, make_toig_discriminator, toig_disc_input,
)
from tryon.losses import (
    RandomFeatureExtractor, feature_distance, loss_ce, loss_feature_matching, loss_hinge,
    loss_l1_multiscale, loss_lsgan, loss_perceptual_multiscale, loss_tocg_total,
    loss_toig_total,
)
from tryon.rejection import build_rejection_input
from tryon.warp import loss_tv

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "tryon-checkpoint"
CHECKPOINT_VERSION = 1
TOCG_LOG_COLUMNS = ("iteration", "ce", "gan", "l1", "vgg", "tv", "total", "d_loss")
TOIG_LOG_COLUMNS = ("iteration", "gan", "vgg", "fm", "total", "d_loss")


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, snapshot: str | None = None):
        super().__init__(message if snapshot is None else f"{message} (snapshot: {snapshot})")
        self.snapshot = snapshot


class CheckpointError(ValueError):
    pass


# ---------------------------------------------------------------------------
# setup helpers


def set_determinism(cfg: RunConfig) -> None:
    torch.set_num_threads(max(1, cfg.threads))
    torch.use_deterministic_algorithms(cfg.deterministic)


def iteration_seed(seed: int, it: int) -> int:
    return int(np.random.SeedSequence([seed, it]).generate_state(1)[0])


def palette_for(cfg: RunConfig) -> LabelPalette:
    return LabelPalette.load(cfg.palette_file) if cfg.palette_file else DEFAULT_PALETTE


def load_records(cfg: RunConfig, split: str = "train", size: tuple[int, int] | None = None):
    """Training or test records at ``size`` (default: the output resolution)."""
    size = tuple(size or cfg.out_size)
    palette = palette_for(cfg)
    if cfg.dataset == "synthetic":
        seed = cfg.seed if split == "train" else cfg.seed + 10_000
        n = cfg.synth_n if split == "train" else cfg.synth_test_n
        recs = generate_synthetic_dataset(seed, n, cfg.out_size, palette,
                                          cfg.synth_occlusion_prob)
        if size != tuple(cfg.out_size):
            from tryon.data import resize_record
            recs = [resize_record(r, size) for r in recs]
        return recs
    pairs = cfg.pairs_file or os.path.join(cfg.data_root, f"{split}_pairs.txt")
    loaded = load_dataset(cfg.data_root, pairs, palette, size)
    return loaded.records


def build_tocg(cfg: RunConfig, palette: LabelPalette) -> tuple[CondGenerator, nn.Module]:
    torch.manual_seed(cfg.seed)
    gen = CondGenerator(palette, cfg.tocg_widths,
                        fusion_exchange=not cfg.no_fusion_exchange,
                        condition_align=not cfg.no_condition_align,
                        occlusion_handling=not cfg.no_occlusion_handling)
    disc = make_tocg_discriminator(palette, cfg.disc_width, cfg.tocg_disc_dropout)
    return gen, disc


def build_toig(cfg: RunConfig, palette: LabelPalette) -> tuple[ImageGenerator, nn.Module]:
    torch.manual_seed(cfg.seed + 1)
    gen = ImageGenerator(palette, cfg.toig_widths, cfg.spade_hidden)
    disc = make_toig_discriminator(palette, cfg.disc_width)
    return gen, disc


def adam(params, lr: float, cfg: RunConfig) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=lr, betas=(cfg.beta1, cfg.beta2))


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, kind: str, cfg: RunConfig, palette: LabelPalette, iteration: int,
                    generator: nn.Module, discriminator: nn.Module,
                    opt_g=None, opt_d=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "iteration": iteration,
        "config": cfg.to_dict(),
        "palette": palette.to_dict(),
        "resolution": {"cond": list(cfg.cond_size), "out": list(cfg.out_size)},
        "params": {"generator": generator.state_dict(), "discriminator": discriminator.state_dict()},
        "optim": {
            "generator": opt_g.state_dict() if opt_g is not None else None,
            "discriminator": opt_d.state_dict() if opt_d is not None else None,
        },
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)
    return path


def read_checkpoint(path, kind: str | None = None) -> dict:
    ckpt = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(ckpt, dict) or ckpt.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a tryon checkpoint")
    if ckpt.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {ckpt.get('version')}")
    if kind is not None and ckpt["kind"] != kind:
        raise CheckpointError(f"{path} holds a {ckpt['kind']} checkpoint, expected {kind}")
    return ckpt


def load_tocg(path) -> tuple[CondGenerator, nn.Module, RunConfig, dict]:
    ckpt = read_checkpoint(path, "tocg")
    cfg = RunConfig.from_dict(ckpt["config"])
    palette = LabelPalette.from_dict(ckpt["palette"])
    gen, disc = build_tocg(cfg, palette)
    gen.load_state_dict(ckpt["params"]["generator"])
    disc.load_state_dict(ckpt["params"]["discriminator"])
    return gen, disc, cfg, ckpt


def load_toig(path) -> tuple[ImageGenerator, nn.Module, RunConfig, dict]:
    ckpt = read_checkpoint(path, "toig")
    cfg = RunConfig.from_dict(ckpt["config"])
    palette = LabelPalette.from_dict(ckpt["palette"])
    gen, disc = build_toig(cfg, palette)
    gen.load_state_dict(ckpt["params"]["generator"])
    disc.load_state_dict(ckpt["params"]["discriminator"])
    return gen, disc, cfg, ckpt


# ---------------------------------------------------------------------------
# metrics log


class MetricsLog:
    """Append-only CSV log; floats are written with ``repr`` so they round-trip."""

    def __init__(self, path, columns):
        self.path = Path(path)
        self.columns = tuple(columns)
        fresh = not self.path.exists() or self.path.stat().st_size == 0
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a", newline="")
        self._writer = csv.writer(self._fh)
        if fresh:
            self._writer.writerow(self.columns)
            self._fh.flush()

    def write(self, row: dict) -> None:
        self._writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c]
                               for c in self.columns])
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: int(v) if k == "iteration" else float(v) for k, v in r.items()} for r in rows]


def truncate_log(path, last_iteration: int) -> None:
    """Drop rows after ``last_iteration`` (used when resuming from an older checkpoint)."""
    path = Path(path)
    if not path.exists():
        return
    lines = path.read_text().splitlines(keepends=True)
    keep = lines[:1] + [ln for ln in lines[1:] if int(ln.split(",", 1)[0]) < last_iteration]
    path.write_text("".join(keep))


# ---------------------------------------------------------------------------
# condition generator


@dataclass
class TrainResult:
    checkpoint: Path
    log: Path
    generator: nn.Module
    discriminator: nn.Module
    iterations: int


def _check_finite(losses: dict, it: int, out_dir: Path, modules: dict) -> None:
    bad = [k for k, v in losses.items() if not math.isfinite(float(v))]
    if not bad:
        return
    snap = out_dir / f"diverged_{it:06d}.pt"
    torch.save({"iteration": it, "losses": {k: float(v) for k, v in losses.items()},
                "params": {k: m.state_dict() for k, m in modules.items()}}, snap)
    raise TrainingDiverged(f"non-finite loss {bad} at iteration {it}", str(snap))


def tocg_losses(gen_out, batch: Batch, scores_fake, cfg: RunConfig, extractor, palette
                ) -> dict:
    weights = cfg.loss_weights
    c = palette.clothing_channel
    target_mask = batch.parse[:, c:c + 1]
    target_clothes = batch.person * target_mask
    inter = gen_out.flow_pyramid[:-1]
    flow = gen_out.flow
    comps = {
        "ce": loss_ce(gen_out.seg, batch.parse),
        "gan": loss_lsgan(None, scores_fake, "generator"),
        "l1": loss_l1_multiscale(inter, gen_out.warped_mask, batch.clothes_mask, target_mask,
                                 weights.w),
        "vgg": loss_perceptual_multiscale(inter, gen_out.warped_clothes,
                                          batch.clothes * batch.clothes_mask, target_clothes,
                                          weights.w, extractor),
        # per-pixel mean keeps the regularizer independent of resolution
        "tv": loss_tv(flow) / (flow.shape[0] * flow.shape[-2] * flow.shape[-1]),
    }
    comps["total"] = loss_tocg_total(comps, weights)
    return comps


def tocg_disc_inputs(gen_out, batch: Batch) -> tuple[torch.Tensor, torch.Tensor]:
    real = build_rejection_input(batch.parse, batch.pose, batch.agnostic_parse, batch.clothes,
                                 batch.clothes_mask)
    fake = build_rejection_input(gen_out.seg, batch.pose, batch.agnostic_parse, batch.clothes,
                                 batch.clothes_mask)
    return real, fake


def train_tocg(cfg: RunConfig, out_dir, resume=None, data: Batch | None = None) -> TrainResult:
    """Train the condition generator with alternating LSGAN updates.

    One log row per iteration. Data order and dropout masks derive from
    ``(seed, iteration)``, so resuming from a checkpoint reproduces an
    uninterrupted run exactly.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    set_determinism(cfg)
    palette = palette_for(cfg)
    gen, disc = build_tocg(cfg, palette)
    opt_g = adam(gen.parameters(), cfg.lr_tocg_g, cfg)
    opt_d = adam(disc.parameters(), cfg.lr_tocg_d, cfg)
    start = 0
    log_path = out_dir / "tocg_metrics.csv"
    if resume is not None:
        ckpt = read_checkpoint(resume, "tocg")
        gen.load_state_dict(ckpt["params"]["generator"])
        disc.load_state_dict(ckpt["params"]["discriminator"])
        if ckpt["optim"]["generator"] is not None:
            opt_g.load_state_dict(ckpt["optim"]["generator"])
            opt_d.load_state_dict(ckpt["optim"]["discriminator"])
        start = ckpt["iteration"]
        truncate_log(log_path, start)
    elif log_path.exists():
        log_path.unlink()
    if data is None:
        data = Batch.stack(load_records(cfg, "train", cfg.cond_size))
    extractor = RandomFeatureExtractor()
    n = len(data)
    bs = min(cfg.batch_tocg, n)
    gen.train()
    disc.train()
    ckpt_path = out_dir / "tocg.pt"
    with MetricsLog(log_path, TOCG_LOG_COLUMNS) as mlog:
        for it in range(start, cfg.iters_tocg):
            rng = np.random.default_rng([cfg.seed, it])
            batch = data[rng.choice(n, size=bs, replace=False).tolist()]
            torch.manual_seed(iteration_seed(cfg.seed, it))

            out = gen.run(batch)
            x_real, x_fake = tocg_disc_inputs(out, batch)
            disc.requires_grad_(False)
            scores_fake, _ = disc(x_fake)
            comps = tocg_losses(out, batch, scores_fake, cfg, extractor, palette)
            opt_g.zero_grad(set_to_none=True)
            comps["total"].backward()
            opt_g.step()
            disc.requires_grad_(True)

            s_real, _ = disc(x_real)
            s_fake, _ = disc(x_fake.detach())
            d_loss = loss_lsgan(s_real, s_fake, "discriminator")
            opt_d.zero_grad(set_to_none=True)
            d_loss.backward()
            opt_d.step()

            row = {k: float(v.detach()) for k, v in comps.items()}
            row["d_loss"] = float(d_loss.detach())
            row["iteration"] = it
            _check_finite(row, it, out_dir, {"generator": gen, "discriminator": disc})
            mlog.write(row)
            if it % 100 == 0:
                log.info("tocg it %d ce %.4f l1 %.4f vgg %.4f tv %.4f d %.4f", it,
                         row["ce"], row["l1"], row["vgg"], row["tv"], row["d_loss"])
            if cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(out_dir / f"tocg_{it + 1:06d}.pt", "tocg", cfg, palette, it + 1,
                                gen, disc, opt_g, opt_d)
    save_checkpoint(ckpt_path, "tocg", cfg, palette, max(start, cfg.iters_tocg), gen, disc,
                    opt_g, opt_d)
    return TrainResult(ckpt_path, log_path, gen, disc, cfg.iters_tocg)


# ---------------------------------------------------------------------------
# image generator


@torch.no_grad()
def precompute_conditions(tocg: CondGenerator, cfg: RunConfig, data_out: Batch,
                          chunk: int = 32) -> dict:
    """Frozen condition-generator outputs, upscaled to the output resolution."""
    from tryon.pipeline import upscale_conditions

    tocg.eval()
    segs, clothes, masks = [], [], []
    small = data_out.resized(cfg.cond_size)
    for s in range(0, len(data_out), chunk):
        idx = list(range(s, min(s + chunk, len(data_out))))
        out = tocg.run(small[idx])
        full = data_out[idx]
        seg, wc, wm = upscale_conditions(out, full.clothes, full.clothes_mask, tocg.palette,
                                         occlusion=tocg.occlusion_handling)
        segs.append(seg)
        clothes.append(wc)
        masks.append(wm)
    return {"seg": torch.cat(segs), "warped_clothes": torch.cat(clothes),
            "warped_mask": torch.cat(masks)}


def train_toig(cfg: RunConfig, tocg_checkpoint, out_dir, resume=None,
               data: Batch | None = None) -> TrainResult:
    """Train the image generator on conditions from a frozen condition generator."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    set_determinism(cfg)
    tocg, _, tocg_cfg, _ = load_tocg(tocg_checkpoint)
    if tuple(tocg_cfg.cond_size) != tuple(cfg.cond_size):
        from tryon.condgen import ConfigError
        raise ConfigError(
            f"condition generator trained at {tocg_cfg.cond_size}, config wants {cfg.cond_size}")
    palette = tocg.palette
    gen, disc = build_toig(cfg, palette)
    opt_g = adam(gen.parameters(), cfg.lr_toig_g, cfg)
    opt_d = adam(disc.parameters(), cfg.lr_toig_d, cfg)
    start = 0
    log_path = out_dir / "toig_metrics.csv"
    if resume is not None:
        ckpt = read_checkpoint(resume, "toig")
        gen.load_state_dict(ckpt["params"]["generator"])
        disc.load_state_dict(ckpt["params"]["discriminator"])
        if ckpt["optim"]["generator"] is not None:
            opt_g.load_state_dict(ckpt["optim"]["generator"])
            opt_d.load_state_dict(ckpt["optim"]["discriminator"])
        start = ckpt["iteration"]
        truncate_log(log_path, start)
    elif log_path.exists():
        log_path.unlink()
    if data is None:
        data = Batch.stack(load_records(cfg, "train", cfg.out_size))
    conds = precompute_conditions(tocg, cfg, data)
    extractor = RandomFeatureExtractor()
    weights = cfg.loss_weights
    n = len(data)
    bs = min(cfg.batch_toig, n)
    gen.train()
    disc.train()
    ckpt_path = out_dir / "toig.pt"
    with MetricsLog(log_path, TOIG_LOG_COLUMNS) as mlog:
        for it in range(start, cfg.iters_toig):
            rng = np.random.default_rng([cfg.seed, it, 1])
            idx = rng.choice(n, size=bs, replace=False).tolist()
            torch.manual_seed(iteration_seed(cfg.seed + 1, it))
            b = data[idx]
            seg = conds["seg"][idx]
            wc = conds["warped_clothes"][idx]

            fake = gen(b.agnostic_image, wc, b.pose, seg)
            x_real = toig_disc_input(seg, b.agnostic_image, wc, b.pose, b.person)
            x_fake = toig_disc_input(seg, b.agnostic_image, wc, b.pose, fake)
            disc.requires_grad_(False)
            s_fake, f_fake = disc(x_fake)
            with torch.no_grad():
                _, f_real = disc(x_real)
            comps = {
                "gan": loss_hinge(None, s_fake, "generator"),
                "vgg": feature_distance(extractor, fake, b.person),
                "fm": loss_feature_matching(f_real, f_fake),
            }
            comps["total"] = loss_toig_total(comps, weights)
            opt_g.zero_grad(set_to_none=True)
            comps["total"].backward()
            opt_g.step()
            disc.requires_grad_(True)

            sr, _ = disc(x_real)
            sf, _ = disc(x_fake.detach())
            d_loss = loss_hinge(sr, sf, "discriminator")
            opt_d.zero_grad(set_to_none=True)
            d_loss.backward()
            opt_d.step()

            row = {k: float(v.detach()) for k, v in comps.items()}
            row["d_loss"] = float(d_loss.detach())
            row["iteration"] = it
            _check_finite(row, it, out_dir, {"generator": gen, "discriminator": disc})
            mlog.write(row)
            if it % 100 == 0:
                log.info("toig it %d vgg %.4f fm %.4f gan %.4f d %.4f", it, row["vgg"],
                         row["fm"], row["gan"], row["d_loss"])
            if cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(out_dir / f"toig_{it + 1:06d}.pt", "toig", cfg, palette, it + 1,
                                gen, disc, opt_g, opt_d)
    save_checkpoint(ckpt_path, "toig", cfg, palette, max(start, cfg.iters_toig), gen, disc,
                    opt_g, opt_d)
    return TrainResult(ckpt_path, log_path, gen, disc, cfg.iters_toig)
