"""Run configuration with a flat ``key = value`` text form."""

from __future__ import annotations

import os
import typing
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from tryon.condgen import DEFAULT_WIDTHS, check_resolution
from tryon.imagegen import DEFAULT_GEN_WIDTHS
from tryon.losses import LossWeights

ABLATIONS = ("no_fusion_exchange", "no_condition_align", "no_occlusion_handling",
             "no_multiscale_losses")


@dataclass(frozen=True)
class RunConfig:
    cond_size: tuple[int, int] = (64, 48)
    out_size: tuple[int, int] = (128, 96)

    lambda_ce: float = 10.0
    lambda_l1: float = 10.0
    lambda_vgg: float = 1.0
    lambda_tv: float = 2.0
    w: tuple[float, ...] = (0.25, 0.25, 0.25, 0.25)
    lambda_vgg_toig: float = 10.0
    lambda_fm_toig: float = 10.0

    beta1: float = 0.5
    beta2: float = 0.999
    lr_tocg_g: float = 0.0002
    lr_tocg_d: float = 0.0002
    lr_toig_g: float = 0.0001
    lr_toig_d: float = 0.0004
    batch_tocg: int = 8
    batch_toig: int = 4
    iters_tocg: int = 2000
    iters_toig: int = 2000
    seed: int = 0
    deterministic: bool = True
    threads: int = 1

    no_fusion_exchange: bool = False
    no_condition_align: bool = False
    no_occlusion_handling: bool = False
    no_multiscale_losses: bool = False

    dataset: str = "synthetic"
    data_root: str = ""
    pairs_file: str = ""
    palette_file: str = ""
    synth_n: int = 256
    synth_test_n: int = 64
    synth_occlusion_prob: float = 0.5

    tocg_widths: tuple[int, ...] = DEFAULT_WIDTHS
    toig_widths: tuple[int, ...] = DEFAULT_GEN_WIDTHS
    spade_hidden: int = 32
    disc_width: int = 32
    tocg_disc_dropout: float = 0.5
    rejection_threshold: float = 0.3
    checkpoint_every: int = 0

    def __post_init__(self):
        for name in ("lr_tocg_g", "lr_tocg_d", "lr_toig_g", "lr_toig_d", "batch_tocg",
                     "batch_toig"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.iters_tocg < 0 or self.iters_toig < 0:
            raise ValueError("iteration budgets must be >= 0")
        check_resolution(self.cond_size)
        check_resolution(self.out_size)
        if self.out_size[0] % self.cond_size[0] or self.out_size[1] % self.cond_size[1]:
            raise ValueError("out_size must be an integer multiple of cond_size")
        if self.dataset not in ("synthetic", "directory"):
            raise ValueError(f"dataset must be 'synthetic' or 'directory', got {self.dataset!r}")
        self.loss_weights  # validates weights

    @property
    def loss_weights(self) -> LossWeights:
        w = self.w if not self.no_multiscale_losses else tuple(0.0 for _ in self.w)
        return LossWeights(self.lambda_ce, self.lambda_l1, self.lambda_vgg, self.lambda_tv, w,
                           self.lambda_vgg_toig, self.lambda_fm_toig)

    @property
    def upscale(self) -> int:
        return self.out_size[0] // self.cond_size[0]

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: coerce(self, k, v) for k, v in kw.items()})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        base = cls()
        return base.with_overrides(**{k: v for k, v in d.items() if k in _field_types()})

    def to_text(self) -> str:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            out.append(f"{f.name} = {v}")
        return "\n".join(out) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        kv = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
            key = key.strip().replace("-", "_")
            if key not in _field_types():
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            kv[key] = value.strip()
        return cls().with_overrides(**kv)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RunConfig":
        return cls.from_text(Path(path).read_text())

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.to_text())


def _field_types() -> dict:
    return typing.get_type_hints(RunConfig)


def coerce(cfg: RunConfig, key: str, value):
    """Convert a string (or already-typed value) to the declared type of ``key``."""
    types = _field_types()
    if key not in types:
        raise ValueError(f"unknown config key {key!r}")
    t = types[key]
    if not isinstance(value, str):
        return tuple(value) if typing.get_origin(t) is tuple else value
    if t is bool:
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: not a boolean: {value!r}")
    if typing.get_origin(t) is tuple:
        elem = typing.get_args(t)[0]
        parts = [p for p in value.replace("x", ",").split(",") if p.strip()]
        return tuple(elem(p.strip()) for p in parts)
    return t(value)
