"""Request/response models for the HTTP service.

Tensors travel as base64-encoded little-endian float32 buffers with an explicit
shape, so records round-trip bit-exactly between client and server.
"""

from __future__ import annotations

import base64

import numpy as np
import torch
from pydantic import BaseModel, Field, field_validator

from tryon.data import SampleRecord


class TensorPayload(BaseModel):
    shape: list[int]
    data: str = Field(description="base64 of little-endian float32 values, C order")

    @field_validator("shape")
    @classmethod
    def _non_negative(cls, v):
        if any(s < 0 for s in v):
            raise ValueError("shape entries must be >= 0")
        return v

    @classmethod
    def from_tensor(cls, t: torch.Tensor) -> "TensorPayload":
        arr = t.detach().cpu().to(torch.float32).contiguous().numpy().astype("<f4")
        return cls(shape=list(arr.shape), data=base64.b64encode(arr.tobytes()).decode("ascii"))

    def to_tensor(self) -> torch.Tensor:
        raw = base64.b64decode(self.data)
        arr = np.frombuffer(raw, dtype="<f4")
        if arr.size != int(np.prod(self.shape)):
            raise ValueError(f"payload holds {arr.size} values, shape {self.shape} needs "
                             f"{int(np.prod(self.shape))}")
        return torch.from_numpy(arr.reshape(self.shape).astype(np.float32))


class RecordPayload(BaseModel):
    pair_id: str = ""
    person: TensorPayload
    clothes: TensorPayload
    clothes_mask: TensorPayload
    pose: TensorPayload
    parse: TensorPayload
    agnostic_image: TensorPayload
    agnostic_parse: TensorPayload

    @classmethod
    def from_record(cls, rec: SampleRecord) -> "RecordPayload":
        return cls(pair_id=rec.pair_id, **{
            f: TensorPayload.from_tensor(getattr(rec, f))
            for f in ("person", "clothes", "clothes_mask", "pose", "parse", "agnostic_image",
                      "agnostic_parse")})

    def to_record(self) -> SampleRecord:
        return SampleRecord(
            person=self.person.to_tensor(), clothes=self.clothes.to_tensor(),
            clothes_mask=self.clothes_mask.to_tensor(), pose=self.pose.to_tensor(),
            parse=self.parse.to_tensor(), agnostic_image=self.agnostic_image.to_tensor(),
            agnostic_parse=self.agnostic_parse.to_tensor(), pair_id=self.pair_id,
        )


class InferRequest(BaseModel):
    person: RecordPayload
    cloth: RecordPayload | None = Field(
        None, description="garment source; defaults to the person's own garment")
    threshold: float | None = Field(None, ge=0.0, le=1.0)
    use_calibration: bool = True


class InferResponse(BaseModel):
    pair_id: str
    accepted: bool
    p_accept: float | None = None
    d_score: float | None = None
    image: TensorPayload | None = None
    warped_clothes: TensorPayload
    seg_labels: list[list[int]]


class ScoreRequest(BaseModel):
    records: list[RecordPayload] = Field(min_length=1)
    threshold: float | None = Field(None, ge=0.0, le=1.0)


class ScoreItem(BaseModel):
    pair_id: str
    d_score: float
    p_accept: float | None = None
    accepted: bool | None = None


class ScoreResponse(BaseModel):
    items: list[ScoreItem]
    L: float | None = None
    threshold: float | None = None


class HealthResponse(BaseModel):
    status: str
    image_generator: bool
    calibrated: bool
    cond_size: list[int]
    out_size: list[int]
