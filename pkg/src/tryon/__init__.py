"""Two-stage virtual try-on: a joint warping/segmentation condition generator,
a segmentation-conditioned image generator, and discriminator-based rejection."""

from tryon.data import (
    DEFAULT_PALETTE,
    LabelPalette,
    SampleRecord,
    generate_synthetic_dataset,
    load_dataset,
    make_agnostic,
)
from tryon.warp import loss_tv, upsample_flow, warp

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_PALETTE",
    "LabelPalette",
    "SampleRecord",
    "generate_synthetic_dataset",
    "load_dataset",
    "make_agnostic",
    "warp",
    "upsample_flow",
    "loss_tv",
]
