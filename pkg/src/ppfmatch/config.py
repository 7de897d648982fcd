"""Validated configuration for the whole pipeline.

An empty JSON object yields the default configuration; unknown keys are
rejected.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ppfmatch.errors import ConfigError


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class EncoderBlock(_Strict):
    downsample_ratio: int = Field(ge=1)
    out_channels: int = Field(ge=1)
    num_pal: int = Field(default=1, ge=0)
    num_dec_pal: int = Field(default=1, ge=0)
    k_neighbors: int | None = Field(default=None, ge=1)


def _default_plan() -> list[EncoderBlock]:
    return [
        EncoderBlock(downsample_ratio=1, out_channels=64),
        EncoderBlock(downsample_ratio=4, out_channels=128),
        EncoderBlock(downsample_ratio=4, out_channels=256),
        EncoderBlock(downsample_ratio=4, out_channels=256),
    ]


class MatchConfig(_Strict):
    num_superpoint_corr: int = Field(default=256, ge=1)
    sinkhorn_iters: int = Field(default=100, ge=1)
    mutual_top_k: int = Field(default=3, ge=1)
    min_confidence: float = Field(default=0.05, ge=0.0, lt=1.0)
    nonrigid_distance_gate: float = Field(default=0.75, gt=0.0)
    nonrigid_fallback_top: int = Field(default=128, ge=1)
    nonrigid_mutual_top_k: int = Field(default=2, ge=1)
    dual_normalization: Literal["product", "sequential"] = "product"


class LossConfig(_Strict):
    tau_r: float = Field(default=0.1, ge=0.0, lt=1.0)
    delta_e: float = 0.1
    delta_f: float = 1.4
    gamma: float = Field(default=10.0, gt=0.0)
    lam: float = Field(default=1.0, ge=0.0)

    @model_validator(mode="after")
    def _margins(self):
        if not self.delta_e < self.delta_f:
            raise ValueError("delta_e must be smaller than delta_f")
        return self


class MetricsConfig(_Strict):
    tau1_rigid: float = Field(default=0.1, gt=0.0)
    tau1_nonrigid: float = Field(default=0.04, gt=0.0)
    tau2_fmr: float = Field(default=0.05, gt=0.0)
    tau3_rmse: float = Field(default=0.2, gt=0.0)
    tau4_flow: float = Field(default=0.04, gt=0.0)
    nfmr_k: int = Field(default=3, ge=1)
    rmse2_literal: bool = False
    ransac_max_iters: int = Field(default=50_000, ge=1)

    def inlier_threshold(self, mode: str) -> float:
        return self.tau1_rigid if mode == "rigid" else self.tau1_nonrigid


class PipelineConfig(_Strict):
    encoder: list[EncoderBlock] = Field(default_factory=_default_plan, min_length=1)
    k_neighbors: int = Field(default=16, ge=1)
    interp_k: int = Field(default=3, ge=1)
    c_prime: int = Field(default=256, ge=2)
    g: int = Field(default=3, ge=0)
    sigma_d: float = Field(default=0.2, gt=0.0)
    sigma_a: float = Field(default=15.0, gt=0.0)
    ffn_expansion: int = Field(default=2, ge=1)
    ln_eps: float = Field(default=1e-5, gt=0.0)
    normal_k: int = Field(default=16, ge=3)
    # None orients estimated normals toward each cloud's own centroid, which moves with the cloud
    viewpoint: tuple[float, float, float] | None = (0.0, 0.0, 0.0)
    seed: int = 0
    mode: Literal["rigid", "nonrigid"] = "rigid"
    match: MatchConfig = Field(default_factory=MatchConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    metrics: MetricsConfig = Field(default_factory=MetricsConfig)

    @model_validator(mode="after")
    def _consistent(self):
        if self.c_prime % 2:
            raise ValueError(f"c_prime must be even, got {self.c_prime}")
        if self.encoder[-1].out_channels != self.c_prime:
            raise ValueError("c_prime must equal the last encoder block width")
        return self

    def block_k(self, b: int) -> int:
        k = self.encoder[b].k_neighbors
        return self.k_neighbors if k is None else k

    def level_sizes(self, n: int) -> list[int]:
        sizes, cur = [], n
        for blk in self.encoder:
            cur = cur // blk.downsample_ratio
            sizes.append(cur)
        return sizes

    def check_input_size(self, n: int) -> list[int]:
        """Per-level point counts for an n-point input; raises if any level is too small."""
        sizes = self.level_sizes(n)
        for b, s in enumerate(sizes):
            if s < self.block_k(b):
                raise ConfigError(f"input of {n} points too small: level {b + 1} has {s} points, "
                                  f"needs >= {self.block_k(b)}")
            if b > 0 and s < self.interp_k:
                raise ConfigError(f"level {b + 1} has {s} points, fewer than interp_k={self.interp_k}")
        if sizes[-1] < 4:
            raise ConfigError(f"superpoint level has {sizes[-1]} points; at least 4 are required")
        return sizes

    def config_hash(self) -> str:
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()

    def with_updates(self, **kwargs) -> "PipelineConfig":
        """Copy with fields replaced; dict values merge into nested sections."""
        data = self.model_dump()
        for key, value in kwargs.items():
            if isinstance(value, dict) and isinstance(data.get(key), dict):
                data[key] = {**data[key], **value}
            else:
                data[key] = value
        return load_config_dict(data)


def load_config_dict(data: dict) -> PipelineConfig:
    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return load_config_dict(data)
