"""Discriminator rejection: calibrate the normalizer on training data, then gate
condition-generator outputs by a deterministic acceptance threshold."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

CALIBRATION_VERSION = 1
DEFAULT_THRESHOLD = 0.3
DEFAULT_EPS = 1e-6


class CalibrationError(ValueError):
    pass


def build_rejection_input(seg, pose, agnostic_parse, clothes, clothes_mask) -> torch.Tensor:
    """Concatenate ``(seg, pose, agnostic_parse, clothes, clothes_mask)`` along channels."""
    parts = [seg, pose, agnostic_parse, clothes, clothes_mask]
    size = parts[0].shape[-2:]
    for p in parts:
        if p.shape[-2:] != size or p.dim() != parts[0].dim():
            raise ValueError(f"rejection input shapes disagree: {[tuple(q.shape) for q in parts]}")
    return torch.cat(parts, dim=-3)


def d_scalar(scores: Sequence[torch.Tensor] | torch.Tensor, eps: float = DEFAULT_EPS
             ) -> torch.Tensor:
    """Reduce per-scale patch score maps to one value per sample in ``[eps, 1-eps]``.

    Each scale's map is averaged spatially, the scales are averaged, and the
    result is clamped. Least-squares scores already target 0 (fake) / 1 (real).
    """
    if isinstance(scores, torch.Tensor):
        scores = [scores]
    means = [s.flatten(start_dim=1).mean(1) if s.dim() == 4 else s.mean().reshape(1)
             for s in scores]
    return torch.stack(means).mean(0).clamp(eps, 1 - eps)


@torch.no_grad()
def discriminator_score(disc, x: torch.Tensor, eps: float = DEFAULT_EPS) -> torch.Tensor:
    """``D(x)`` per sample with the discriminator in evaluation mode (no dropout)."""
    was_training = disc.training
    disc.eval()
    try:
        scores, _ = disc(x if x.dim() == 4 else x.unsqueeze(0))
    finally:
        disc.train(was_training)
    return d_scalar(scores, eps)


def odds(d, eps: float = DEFAULT_EPS):
    d = np.clip(np.asarray(d, dtype=np.float64), eps, 1 - eps)
    return d / (1 - d)


@dataclass
class RejectionCalibration:
    L: float
    scores: list[float] = field(default_factory=list)
    threshold: float = DEFAULT_THRESHOLD
    epsilon: float = DEFAULT_EPS

    def __post_init__(self):
        if not self.L > 0:
            raise CalibrationError(f"L must be positive, got {self.L}")
        if not 0 <= self.threshold <= 1:
            raise CalibrationError(f"threshold must be in [0, 1], got {self.threshold}")

    def histogram(self, bins: int = 20) -> dict:
        counts, edges = np.histogram(self.scores, bins=bins, range=(0.0, 1.0))
        return {"counts": counts.tolist(), "edges": edges.tolist()}

    def to_dict(self) -> dict:
        return {
            "version": CALIBRATION_VERSION,
            "L": self.L,
            "threshold": self.threshold,
            "epsilon": self.epsilon,
            "scores": list(self.scores),
            "histogram": self.histogram(),
        }

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def from_dict(cls, d: dict) -> "RejectionCalibration":
        if d.get("version") != CALIBRATION_VERSION:
            raise CalibrationError(f"unsupported calibration version {d.get('version')}")
        return cls(L=float(d["L"]), scores=[float(s) for s in d.get("scores", [])],
                   threshold=float(d["threshold"]), epsilon=float(d["epsilon"]))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RejectionCalibration":
        return cls.from_dict(json.loads(Path(path).read_text()))


def estimate_L(scores: Iterable[float], threshold: float = DEFAULT_THRESHOLD,
               eps: float = DEFAULT_EPS) -> RejectionCalibration:
    """``L = max D/(1-D)`` over calibration scores ``D``."""
    scores = [float(s) for s in scores]
    if not scores:
        raise CalibrationError("calibration set is empty")
    L = float(odds(scores, eps).max())
    return RejectionCalibration(L=L, scores=scores, threshold=threshold, epsilon=eps)


def p_accept(d, calibration: RejectionCalibration):
    """``min(1, D / (L (1 - D)))``; scalar in, float out; array in, array out."""
    p = np.minimum(1.0, odds(d, calibration.epsilon) / calibration.L)
    return float(p) if np.ndim(p) == 0 else p


@dataclass(frozen=True)
class GateResult:
    accepted: bool
    p: float


def gate(d: float, calibration: RejectionCalibration, threshold: float | None = None
         ) -> GateResult:
    tau = calibration.threshold if threshold is None else threshold
    p = p_accept(float(d), calibration)
    return GateResult(accepted=p >= tau, p=p)


def threshold_sweep(calibration: RejectionCalibration, scores: Sequence[float] | None = None,
                    taus: Sequence[float] = tuple(np.round(np.linspace(0, 1, 11), 2))
                    ) -> list[dict]:
    """Acceptance rate at each threshold, over ``scores`` (default: calibration scores)."""
    scores = calibration.scores if scores is None else scores
    p = np.atleast_1d(p_accept(np.asarray(scores, dtype=np.float64), calibration))
    return [{"threshold": float(t), "accept_rate": float((p >= t).mean()) if len(p) else 0.0}
            for t in taus]
