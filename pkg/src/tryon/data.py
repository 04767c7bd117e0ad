"""Data model, dataset ingestion, clothing-agnostic construction and the
procedural synthetic person/garment generator.

All image-like fields are float32 torch tensors laid out ``[C, H, W]``.
Images live in ``[-1, 1]``, masks in ``[0, 1]``, segmentation maps are one-hot
channel stacks indexed by label id.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

log = logging.getLogger(__name__)

IMAGE_DIRS = ("person", "cloth", "cloth_mask", "parse", "pose")
IMAGE_EXTS = (".png", ".jpg", ".jpeg")


class PaletteError(ValueError):
    pass


class RecordLoadError(Exception):
    """A single pair that could not be loaded; ``path`` names the culprit."""

    def __init__(self, pair_id: str, path: str | os.PathLike, reason: str):
        super().__init__(f"{pair_id}: {reason}: {path}")
        self.pair_id = pair_id
        self.path = str(path)
        self.reason = reason


@dataclass(frozen=True)
class LabelPalette:
    labels: tuple[tuple[int, str], ...]
    clothing_channel: int
    body_part_channels: frozenset[int]
    agnostic_channel: int | None = None

    def __post_init__(self):
        ids = [i for i, _ in self.labels]
        if ids != list(range(len(ids))):
            raise PaletteError(f"label ids must be unique and contiguous from 0, got {ids}")
        n = len(ids)
        if not 0 <= self.clothing_channel < n:
            raise PaletteError(f"clothing_channel {self.clothing_channel} outside [0, {n})")
        bad = [b for b in self.body_part_channels if not 0 <= b < n]
        if bad:
            raise PaletteError(f"body part channels {bad} outside [0, {n})")
        if self.clothing_channel in self.body_part_channels:
            raise PaletteError("clothing channel cannot also be a body part channel")
        if self.agnostic_channel is not None:
            if not 0 <= self.agnostic_channel < n:
                raise PaletteError(f"agnostic_channel {self.agnostic_channel} outside [0, {n})")
            if self.agnostic_channel in self.removed_channels:
                raise PaletteError("agnostic channel cannot be a removed channel")

    @property
    def num_channels(self) -> int:
        return len(self.labels)

    @property
    def names(self) -> list[str]:
        return [name for _, name in self.labels]

    @property
    def removed_channels(self) -> frozenset[int]:
        return frozenset({self.clothing_channel}) | self.body_part_channels

    def index(self, name: str) -> int:
        for i, n in self.labels:
            if n == name:
                return i
        raise PaletteError(f"unknown label name {name!r}")

    def to_config(self) -> str:
        lines = [f"{name} = {i}" for i, name in self.labels]
        lines.append(f"clothing_channel = {self.labels[self.clothing_channel][1]}")
        body = ", ".join(self.labels[b][1] for b in sorted(self.body_part_channels))
        lines.append(f"body_part_channels = {body}")
        if self.agnostic_channel is not None:
            lines.append(f"agnostic_channel = {self.labels[self.agnostic_channel][1]}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_config(cls, text: str) -> "LabelPalette":
        """Parse the ``key = value`` palette format written by :meth:`to_config`.

        ``clothing_channel``, ``body_part_channels`` and ``agnostic_channel``
        accept either label names or integer ids.
        """
        entries: dict[str, str] = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise PaletteError(f"malformed palette line: {raw!r}")
            entries[key.strip()] = value.strip()
        special = {"clothing_channel", "body_part_channels", "agnostic_channel"}
        try:
            labels = sorted((int(v), k) for k, v in entries.items() if k not in special)
        except ValueError as e:
            raise PaletteError(f"label ids must be integers: {e}") from None
        if "clothing_channel" not in entries or "body_part_channels" not in entries:
            raise PaletteError("palette needs clothing_channel and body_part_channels keys")
        names = {name: i for i, name in labels}

        def resolve(token: str) -> int:
            token = token.strip()
            if token in names:
                return names[token]
            try:
                return int(token)
            except ValueError:
                raise PaletteError(f"unknown label {token!r}") from None

        body = [resolve(t) for t in entries["body_part_channels"].split(",") if t.strip()]
        agnostic = entries.get("agnostic_channel")
        return cls(
            labels=tuple(labels),
            clothing_channel=resolve(entries["clothing_channel"]),
            body_part_channels=frozenset(body),
            agnostic_channel=resolve(agnostic) if agnostic else None,
        )

    @classmethod
    def load(cls, path: str | os.PathLike) -> "LabelPalette":
        return cls.from_config(Path(path).read_text())

    def to_dict(self) -> dict:
        return {
            "labels": [list(x) for x in self.labels],
            "clothing_channel": self.clothing_channel,
            "body_part_channels": sorted(self.body_part_channels),
            "agnostic_channel": self.agnostic_channel,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LabelPalette":
        return cls(
            labels=tuple((int(i), str(n)) for i, n in d["labels"]),
            clothing_channel=int(d["clothing_channel"]),
            body_part_channels=frozenset(int(b) for b in d["body_part_channels"]),
            agnostic_channel=d.get("agnostic_channel"),
        )


DEFAULT_PALETTE = LabelPalette(
    labels=(
        (0, "background"),
        (1, "face_hair"),
        (2, "torso_clothes"),
        (3, "bottom"),
        (4, "left_arm"),
        (5, "right_arm"),
        (6, "agnostic"),
    ),
    clothing_channel=2,
    body_part_channels=frozenset({1, 4, 5}),
    agnostic_channel=6,
)


@dataclass(frozen=True, eq=False)
class SampleRecord:
    person: torch.Tensor
    clothes: torch.Tensor
    clothes_mask: torch.Tensor
    pose: torch.Tensor
    parse: torch.Tensor
    agnostic_image: torch.Tensor
    agnostic_parse: torch.Tensor
    pair_id: str
    meta: dict = field(default_factory=dict)

    @property
    def size(self) -> tuple[int, int]:
        return tuple(self.person.shape[-2:])

    def check(self, palette: LabelPalette = DEFAULT_PALETTE) -> None:
        """Raise ``ValueError`` if any type invariant is violated."""
        h, w = self.size
        shapes = {
            "person": (3, h, w),
            "clothes": (3, h, w),
            "clothes_mask": (1, h, w),
            "pose": (3, h, w),
            "parse": (palette.num_channels, h, w),
            "agnostic_image": (3, h, w),
            "agnostic_parse": (palette.num_channels, h, w),
        }
        for name, shape in shapes.items():
            t = getattr(self, name)
            if tuple(t.shape) != shape:
                raise ValueError(f"{name} has shape {tuple(t.shape)}, expected {shape}")
            if not torch.isfinite(t).all():
                raise ValueError(f"{name} has non-finite entries")
        for name in ("person", "clothes", "agnostic_image", "pose"):
            t = getattr(self, name)
            if t.min() < -1 or t.max() > 1:
                raise ValueError(f"{name} outside [-1, 1]")
        m = self.clothes_mask
        if m.min() < 0 or m.max() > 1:
            raise ValueError("clothes_mask outside [0, 1]")
        for name in ("parse", "agnostic_parse"):
            if not is_one_hot(getattr(self, name)):
                raise ValueError(f"{name} is not one-hot")
        removed = torch.isin(self.parse.argmax(0), torch.tensor(sorted(palette.removed_channels)))
        if not torch.equal(self.agnostic_image[:, ~removed], self.person[:, ~removed]):
            raise ValueError("agnostic image differs from person outside the agnostic region")


class DatasetLoad(NamedTuple):
    records: list[SampleRecord]
    errors: list[RecordLoadError]


# ---------------------------------------------------------------------------
# label maps


def is_one_hot(seg: torch.Tensor) -> bool:
    return bool(((seg == 0) | (seg == 1)).all() and (seg.sum(0) == 1).all())


def to_one_hot(labels: torch.Tensor | np.ndarray, palette: LabelPalette) -> torch.Tensor:
    """``[H, W]`` integer label ids -> ``[C_seg, H, W]`` float one-hot."""
    labels = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    if labels.numel():
        bad = labels[(labels < 0) | (labels >= palette.num_channels)].unique()
        if bad.numel():
            raise PaletteError(
                f"label id {int(bad[0])} not in palette of {palette.num_channels} labels"
            )
    return F.one_hot(labels, palette.num_channels).permute(2, 0, 1).float()


def to_label_map(seg: torch.Tensor) -> torch.Tensor:
    """Channel argmax; ties resolve to the lowest channel index."""
    return seg.argmax(dim=-3)


# ---------------------------------------------------------------------------
# agnostic representation


def make_agnostic(
    person: torch.Tensor, parse: torch.Tensor, palette: LabelPalette = DEFAULT_PALETTE
) -> tuple[torch.Tensor, torch.Tensor]:
    """Gray out clothing and body-part pixels and relabel them as agnostic.

    A simplified stand-in for the usual agnostic recipe: every pixel whose label
    is the clothing channel or a body part becomes neutral gray (0) in the image
    and the dedicated agnostic label in the segmentation.
    """
    if palette.agnostic_channel is None:
        raise PaletteError("palette has no agnostic channel")
    labels = to_label_map(parse)
    removed = torch.isin(labels, torch.tensor(sorted(palette.removed_channels)))
    agnostic_image = person.masked_fill(removed.unsqueeze(0), 0.0)
    agnostic_labels = labels.masked_fill(removed, palette.agnostic_channel)
    return agnostic_image, to_one_hot(agnostic_labels, palette)


# ---------------------------------------------------------------------------
# resizing


def resize_image(x: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    """Bicubic resize of ``[..., C, H, W]``, clamped back into [-1, 1]."""
    if tuple(x.shape[-2:]) == tuple(size):
        return x
    batched = x.dim() == 4
    y = F.interpolate(
        x if batched else x.unsqueeze(0), size=size, mode="bicubic", align_corners=False,
        antialias=True,
    ).clamp(-1, 1)
    return y if batched else y.squeeze(0)


def resize_mask(m: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    """Bicubic resize followed by a 0.5 threshold, so masks stay binary."""
    if tuple(m.shape[-2:]) == tuple(size):
        return m
    batched = m.dim() == 4
    y = F.interpolate(
        m if batched else m.unsqueeze(0), size=size, mode="bicubic", align_corners=False,
        antialias=True,
    )
    y = (y > 0.5).float()
    return y if batched else y.squeeze(0)


def resize_seg(seg: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    """Resize a one-hot map by area-weighted voting; output stays one-hot."""
    if tuple(seg.shape[-2:]) == tuple(size):
        return seg
    batched = seg.dim() == 4
    x = seg if batched else seg.unsqueeze(0)
    h, w = x.shape[-2:]
    if h % size[0] == 0 and w % size[1] == 0:
        votes = F.adaptive_avg_pool2d(x, size)
    else:
        votes = F.interpolate(x, size=size, mode="nearest")
    y = F.one_hot(votes.argmax(1), x.shape[1]).permute(0, 3, 1, 2).float()
    return y if batched else y.squeeze(0)


def resize_record(rec: SampleRecord, size: tuple[int, int]) -> SampleRecord:
    if rec.size == tuple(size):
        return rec
    return SampleRecord(
        person=resize_image(rec.person, size),
        clothes=resize_image(rec.clothes, size),
        clothes_mask=resize_mask(rec.clothes_mask, size),
        pose=resize_image(rec.pose, size),
        parse=resize_seg(rec.parse, size),
        agnostic_image=resize_image(rec.agnostic_image, size),
        agnostic_parse=resize_seg(rec.agnostic_parse, size),
        pair_id=rec.pair_id,
        meta=dict(rec.meta),
    )


# ---------------------------------------------------------------------------
# directory datasets


def read_pairs(pairs_file: str | os.PathLike) -> list[tuple[str, str]]:
    pairs = []
    for lineno, line in enumerate(Path(pairs_file).read_text().splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 2:
            raise ValueError(f"{pairs_file}:{lineno}: expected two columns, got {line!r}")
        pairs.append((parts[0], parts[1]))
    return pairs


def _find(root: Path, sub: str, name: str) -> Path:
    stem = Path(name).stem
    for ext in ("",) + IMAGE_EXTS:
        p = root / sub / (name if ext == "" else stem + ext)
        if p.is_file():
            return p
    return root / sub / name


def _read_rgb(path: Path) -> torch.Tensor:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32)
    return torch.from_numpy(arr).permute(2, 0, 1) / 127.5 - 1.0


def _read_gray(path: Path) -> torch.Tensor:
    arr = np.asarray(Image.open(path).convert("L"), dtype=np.float32)
    return torch.from_numpy(arr).unsqueeze(0) / 255.0


def _load_pair(
    root: Path, person_name: str, cloth_name: str, palette: LabelPalette,
    resolution: tuple[int, int],
) -> SampleRecord:
    pair_id = f"{Path(person_name).stem}__{Path(cloth_name).stem}"
    paths = {
        "person": _find(root, "person", person_name),
        "cloth": _find(root, "cloth", cloth_name),
        "cloth_mask": _find(root, "cloth_mask", cloth_name),
        "parse": _find(root, "parse", Path(person_name).stem + ".png"),
        "pose": _find(root, "pose", person_name),
    }
    for key, p in paths.items():
        if not p.is_file():
            raise RecordLoadError(pair_id, p, f"missing {key} file")
    h, w = resolution
    person = resize_image(_read_rgb(paths["person"]), (h, w))
    clothes = resize_image(_read_rgb(paths["cloth"]), (h, w))
    mask = resize_mask(_read_gray(paths["cloth_mask"]), (h, w))
    pose = resize_image(_read_rgb(paths["pose"]), (h, w))
    with Image.open(paths["parse"]) as im:
        if im.mode not in ("P", "L", "I"):
            raise RecordLoadError(pair_id, paths["parse"], f"parse map has mode {im.mode}")
        labels = im.resize((w, h), Image.NEAREST) if im.size != (w, h) else im.copy()
    labels = np.asarray(labels, dtype=np.int64)
    try:
        parse = to_one_hot(labels, palette)
    except PaletteError as e:
        raise PaletteError(f"{paths['parse']}: {e}") from None
    agn_img, agn_parse = make_agnostic(person, parse, palette)
    return SampleRecord(person, clothes, mask, pose, parse, agn_img, agn_parse, pair_id)


def load_dataset(
    root: str | os.PathLike,
    pairs_file: str | os.PathLike,
    palette: LabelPalette = DEFAULT_PALETTE,
    resolution: tuple[int, int] = (128, 96),
    workers: int = 1,
) -> DatasetLoad:
    """Load ``person cloth`` pairs from a VITON-style directory tree.

    Missing files produce a :class:`RecordLoadError` in ``errors`` instead of
    aborting the load. A parse map with a label id outside ``palette`` raises
    :class:`PaletteError`. Records come back in pairs-file order regardless of
    ``workers``.
    """
    root = Path(root)
    pairs = read_pairs(pairs_file)

    def job(pair):
        try:
            return _load_pair(root, pair[0], pair[1], palette, resolution)
        except RecordLoadError as e:
            return e

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(job, pairs))
    else:
        results = [job(p) for p in pairs]
    records = [r for r in results if isinstance(r, SampleRecord)]
    errors = [r for r in results if isinstance(r, RecordLoadError)]
    for e in errors:
        log.warning("skipping pair: %s", e)
    return DatasetLoad(records, errors)


def save_dataset(records: Sequence[SampleRecord], root: str | os.PathLike) -> Path:
    """Write records in the directory layout read by :func:`load_dataset`.

    Returns the path of the written pairs file.
    """
    root = Path(root)
    for sub in IMAGE_DIRS:
        (root / sub).mkdir(parents=True, exist_ok=True)

    def rgb(t):
        return Image.fromarray(((t.clamp(-1, 1) + 1) * 127.5).round().byte().permute(1, 2, 0).numpy())

    lines = []
    for rec in records:
        name = rec.pair_id
        rgb(rec.person).save(root / "person" / f"{name}.png")
        rgb(rec.clothes).save(root / "cloth" / f"{name}.png")
        Image.fromarray((rec.clothes_mask[0] * 255).round().byte().numpy()).save(
            root / "cloth_mask" / f"{name}.png")
        rgb(rec.pose).save(root / "pose" / f"{name}.png")
        parse = Image.fromarray(to_label_map(rec.parse).byte().numpy(), mode="P")
        parse.putpalette(_label_colors(rec.parse.shape[0]).flatten().tolist())
        parse.save(root / "parse" / f"{name}.png")
        lines.append(f"{name}.png {name}.png")
    pairs = root / "pairs.txt"
    pairs.write_text("\n".join(lines) + ("\n" if lines else ""))
    return pairs


def _label_colors(n: int) -> np.ndarray:
    base = np.array(
        [[0, 0, 0], [254, 85, 0], [0, 85, 85], [0, 128, 0], [51, 170, 221],
         [0, 255, 255], [128, 128, 128]], dtype=np.uint8)
    if n <= len(base):
        return base[:n]
    rng = np.random.default_rng(0)
    extra = rng.integers(0, 256, size=(n - len(base), 3), dtype=np.uint8)
    return np.concatenate([base, extra])


def colorize(seg: torch.Tensor) -> torch.Tensor:
    """Segmentation map (one-hot or soft) -> RGB image in [-1, 1] for display."""
    colors = torch.from_numpy(_label_colors(seg.shape[-3]).astype(np.float32)) / 127.5 - 1
    return colors[to_label_map(seg)].movedim(-1, -3)


# ---------------------------------------------------------------------------
# synthetic data

SKIN = np.array([0.75, 0.35, 0.1])


def _capsule(xx, yy, p0, p1, radius):
    """Boolean mask of a thick segment plus along/across coordinates."""
    d = p1 - p0
    length2 = float(d @ d)
    t = ((xx - p0[0]) * d[0] + (yy - p0[1]) * d[1]) / length2
    tc = np.clip(t, 0, 1)
    px = p0[0] + tc * d[0]
    py = p0[1] + tc * d[1]
    dist = np.hypot(xx - px, yy - py)
    across = ((xx - p0[0]) * -d[1] + (yy - p0[1]) * d[0]) / math.sqrt(length2)
    return dist <= radius, tc, np.clip(across / radius, -1, 1)


def synth_record(
    seed: int, index: int, resolution: tuple[int, int] = (128, 96),
    palette: LabelPalette = DEFAULT_PALETTE, occlusion_prob: float = 0.5,
) -> SampleRecord:
    """Render one procedural person wearing a striped top plus its product view."""
    rng = np.random.default_rng([seed, index])
    h, w = resolution
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64) + 0.5
    lab = {name: palette.index(name) for name in
           ("background", "face_hair", "torso_clothes", "bottom", "left_arm", "right_arm")}

    # product garment (flat view, centered)
    top_y = 0.14 * h
    length_p = rng.uniform(0.45, 0.65) * h
    half_top_p = rng.uniform(0.24, 0.28) * w
    half_bot_p = rng.uniform(0.22, 0.30) * w
    period_p = rng.uniform(0.10, 0.14) * w
    phase = rng.uniform(0, 1)
    col_a = rng.uniform(-0.9, 0.2, size=3)
    col_b = np.clip(col_a + rng.uniform(0.5, 0.8, size=3), -1, 1)
    col_logo = rng.uniform(-1, 1, size=3)
    logo_half = 0.05 * w
    logo_cy = top_y + 0.12 * h

    def garment(xp, yp):
        rel = (yp - top_y) / length_p
        half = half_top_p + (half_bot_p - half_top_p) * rel
        inside = (rel >= 0) & (rel <= 1) & (np.abs(xp - w / 2) <= half)
        s = 0.5 + 0.5 * np.cos(2 * np.pi * ((xp - w / 2) / period_p + phase))
        tex = col_a[:, None, None] + s[None] * (col_b - col_a)[:, None, None]
        logo = (np.abs(xp - w / 2) <= logo_half) & (np.abs(yp - logo_cy) <= logo_half)
        tex = np.where(logo[None], col_logo[:, None, None], tex)
        return inside, tex

    c_mask, c_tex = garment(xx, yy)
    clothes = np.where(c_mask[None], c_tex, 0.0)

    # person geometry
    cx = w * (0.5 + rng.uniform(-0.04, 0.04))
    shoulder_y = h * rng.uniform(0.24, 0.28)
    sx = rng.uniform(0.70, 0.85)
    sy = rng.uniform(0.75, 0.90)
    waist_y = 0.62 * h
    xp = w / 2 + (xx - cx) / sx
    yp = top_y + (yy - shoulder_y) / sy
    g_mask, g_tex = garment(xp, yp)
    half_shoulder = half_top_p * sx

    bg = rng.uniform(0.3, 0.7) + rng.uniform(-0.08, 0.08, size=3)
    bottom_col = rng.uniform(-0.9, -0.3, size=3)
    image = np.broadcast_to(bg[:, None, None], (3, h, w)).copy()
    labels = np.full((h, w), lab["background"], dtype=np.int64)
    pose = np.full((3, h, w), -1.0)

    def paint(mask, label, color, part, u, v):
        image[:, mask] = color[:, mask] if color.ndim == 3 else color[:, None]
        labels[mask] = label
        pose[0][mask] = part / 5 * 2 - 1
        pose[1][mask] = np.broadcast_to(u, mask.shape)[mask]
        pose[2][mask] = np.broadcast_to(v, mask.shape)[mask]

    # bottom (trousers) from just above the waist down
    bottom = (yy >= 0.55 * h) & (np.abs(xx - cx) <= 0.17 * w)
    paint(bottom, lab["bottom"], bottom_col, 5,
          (xx - cx) / (0.17 * w), (yy - 0.55 * h) / (0.45 * h) * 2 - 1)
    # torso body: the surface the garment sits on
    rel = (yy - shoulder_y) / (waist_y - shoulder_y)
    body_half = half_shoulder * (1 - 0.1 * rel)
    torso = (rel >= 0) & (rel <= 1) & (np.abs(xx - cx) <= body_half)
    paint(torso, lab["torso_clothes"], np.broadcast_to(SKIN[:, None, None], (3, h, w)), 1,
          np.clip((xx - cx) / body_half, -1, 1), rel * 2 - 1)
    # garment overlays the body; pose keeps the body-surface coordinates
    image[:, g_mask] = g_tex[:, g_mask]
    labels[g_mask] = lab["torso_clothes"]
    labels[torso & ~g_mask] = lab["bottom"]
    image[:, torso & ~g_mask] = bottom_col[:, None]
    # neck + head
    head_c = np.array([cx, 0.13 * h])
    rx, ry = 0.11 * w, 0.09 * h
    head = ((xx - head_c[0]) / rx) ** 2 + ((yy - head_c[1]) / ry) ** 2 <= 1
    neck = (yy >= head_c[1]) & (yy <= shoulder_y + 1) & (np.abs(xx - cx) <= 0.05 * w)
    paint(head | neck, lab["face_hair"], SKIN, 2, (xx - head_c[0]) / rx,
          np.clip((yy - head_c[1]) / ry, -1, 1))

    # arms, drawn last so they occlude the garment
    occluded = rng.uniform() < occlusion_prob
    occ_side = int(rng.integers(0, 2)) if occluded else -1
    arm_len = 0.36 * h
    radius = 0.045 * w
    for side, name, part in ((0, "left_arm", 3), (1, "right_arm", 4)):
        sign = -1 if side == 0 else 1
        shoulder = np.array([cx + sign * (half_shoulder - 0.5 * radius), shoulder_y + 0.03 * h])
        if side == occ_side:
            angle = -np.deg2rad(rng.uniform(18, 32))
        else:
            angle = np.deg2rad(rng.uniform(14, 30))
        end = shoulder + arm_len * np.array([sign * np.sin(angle), np.cos(angle)])
        arm, t, across = _capsule(xx, yy, shoulder, end, radius)
        paint(arm, lab[name], SKIN, part, t * 2 - 1, across)

    person = torch.from_numpy(image.astype(np.float32)).clamp(-1, 1)
    parse = to_one_hot(labels, palette)
    agn_img, agn_parse = make_agnostic(person, parse, palette)
    meta = {
        "stripe_period_frac": float(period_p * sx / w),
        "product_period_frac": float(period_p / w),
        "scale": (float(sx), float(sy)),
        "occluded_side": ("left", "right")[occ_side] if occ_side >= 0 else None,
    }
    return SampleRecord(
        person=person,
        clothes=torch.from_numpy(clothes.astype(np.float32)),
        clothes_mask=torch.from_numpy(c_mask[None].astype(np.float32)),
        pose=torch.from_numpy(pose.astype(np.float32)),
        parse=parse,
        agnostic_image=agn_img,
        agnostic_parse=agn_parse,
        pair_id=f"synth{seed}_{index:05d}",
        meta=meta,
    )


def generate_synthetic_dataset(
    seed: int,
    n: int,
    resolution: tuple[int, int] = (128, 96),
    palette: LabelPalette = DEFAULT_PALETTE,
    occlusion_prob: float = 0.5,
) -> list[SampleRecord]:
    """Deterministic procedural dataset; record ``k`` depends only on ``(seed, k)``."""
    if n < 0:
        raise ValueError("n must be >= 0")
    return [synth_record(seed, k, resolution, palette, occlusion_prob) for k in range(n)]


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    """Records stacked along a leading batch dimension."""

    person: torch.Tensor
    clothes: torch.Tensor
    clothes_mask: torch.Tensor
    pose: torch.Tensor
    parse: torch.Tensor
    agnostic_image: torch.Tensor
    agnostic_parse: torch.Tensor

    FIELDS = ("person", "clothes", "clothes_mask", "pose", "parse", "agnostic_image",
              "agnostic_parse")

    @classmethod
    def stack(cls, records: Sequence[SampleRecord]) -> "Batch":
        if not records:
            raise ValueError("cannot stack an empty record list")
        return cls(**{f: torch.stack([getattr(r, f) for r in records]) for f in cls.FIELDS})

    def __len__(self) -> int:
        return self.person.shape[0]

    def __getitem__(self, idx) -> "Batch":
        if isinstance(idx, int):
            idx = [idx]
        return Batch(**{f: getattr(self, f)[idx] for f in self.FIELDS})

    def to(self, dtype=None) -> "Batch":
        return Batch(**{f: getattr(self, f).to(dtype=dtype) for f in self.FIELDS})

    def resized(self, size: tuple[int, int]) -> "Batch":
        return Batch(
            person=resize_image(self.person, size),
            clothes=resize_image(self.clothes, size),
            clothes_mask=resize_mask(self.clothes_mask, size),
            pose=resize_image(self.pose, size),
            parse=resize_seg(self.parse, size),
            agnostic_image=resize_image(self.agnostic_image, size),
            agnostic_parse=resize_seg(self.agnostic_parse, size),
        )
