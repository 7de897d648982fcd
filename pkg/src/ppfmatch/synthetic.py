"""Seeded synthetic point-cloud pairs with exact ground truth."""
from __future__ import annotations

from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ppfmatch.geom import PointCloudTriplet, RigidTransform, random_rotation
from ppfmatch.metrics import GroundTruth


class SyntheticPairSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n: int = Field(default=1024, ge=4)
    shape: Literal["sphere", "box", "composite"] = "composite"
    noise: float = Field(default=0.0, ge=0.0)
    overlap: float = Field(default=1.0, gt=0.0, le=1.0)
    rotation: Literal["uniform", "identity"] = "uniform"
    max_translation: float = Field(default=1.0, ge=0.0)
    deformation: float = Field(default=0.0, ge=0.0)
    scale: float = Field(default=1.0, gt=0.0)


def _sphere(rng, count, center, radius):
    u = rng.standard_normal((count, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return center + radius * u, u


def _box(rng, count, center, half):
    half = np.asarray(half, dtype=np.float64)
    # faces: +-x, +-y, +-z with areas proportional to the other two extents
    areas = np.array([half[1] * half[2], half[0] * half[2], half[0] * half[1]]).repeat(2)
    face = rng.choice(6, size=count, p=areas / areas.sum())
    axis, sign = face // 2, np.where(face % 2 == 0, 1.0, -1.0)
    pts = rng.uniform(-1.0, 1.0, (count, 3)) * half
    pts[np.arange(count), axis] = sign * half[axis]
    normals = np.zeros((count, 3))
    normals[np.arange(count), axis] = sign
    return center + pts, normals


def sample_surface(shape: str, count: int, rng: np.random.Generator, scale: float = 1.0):
    """Points and outward unit normals sampled uniformly on a simple surface."""
    if shape == "sphere":
        return _sphere(rng, count, np.zeros(3), scale)
    if shape == "box":
        return _box(rng, count, np.zeros(3), scale * np.array([1.0, 0.7, 0.5]))
    if shape == "composite":
        s_center, s_r = scale * np.array([-0.8, 0.0, 0.0]), 0.6 * scale
        b_center, b_half = scale * np.array([0.6, 0.1, 0.0]), scale * np.array([0.5, 0.4, 0.3])
        s_area = 4 * np.pi * s_r ** 2
        b_area = 8 * (b_half[0] * b_half[1] + b_half[0] * b_half[2] + b_half[1] * b_half[2])
        on_sphere = rng.random(count) < s_area / (s_area + b_area)
        pts = np.empty((count, 3))
        nrm = np.empty((count, 3))
        k = int(on_sphere.sum())
        pts[on_sphere], nrm[on_sphere] = _sphere(rng, k, s_center, s_r)
        pts[~on_sphere], nrm[~on_sphere] = _box(rng, count - k, b_center, b_half)
        return pts, nrm
    raise ValueError(f"unknown shape {shape!r}")


class SmoothFlow:
    """Displacement f(p)_c = A sin(w_c . p + phi_c), one low-frequency wave per axis."""

    def __init__(self, rng: np.random.Generator, amplitude: float, scale: float = 1.0):
        self.amplitude = amplitude
        self.freq = rng.normal(0.0, 1.0, (3, 3)) / scale
        self.phase = rng.uniform(0.0, 2 * np.pi, 3)

    def __call__(self, p: np.ndarray) -> np.ndarray:
        return self.amplitude * np.sin(p @ self.freq.T + self.phase)

    def deform_normals(self, p: np.ndarray, normals: np.ndarray) -> np.ndarray:
        # J = I + A cos(.) w;   n' ~ J^{-T} n
        c = self.amplitude * np.cos(p @ self.freq.T + self.phase)
        J = np.eye(3)[None] + c[:, :, None] * self.freq[None]
        out = np.linalg.solve(np.swapaxes(J, 1, 2), normals[:, :, None])[:, :, 0]
        return out / np.linalg.norm(out, axis=1, keepdims=True)


def generate_pair(spec: SyntheticPairSpec | None = None, seed: int = 0
                  ) -> tuple[PointCloudTriplet, PointCloudTriplet, GroundTruth]:
    """Source cloud, target cloud and ground truth mapping source onto target.

    The target holds the overlapping source points (in source order) followed
    by fresh surface samples; ground-truth pairs are exact before noise.
    """
    spec = spec or SyntheticPairSpec()
    rng = np.random.default_rng(seed)
    n = spec.n
    p_pts, p_nrm = sample_surface(spec.shape, n, rng, spec.scale)
    n_ov = max(1, int(round(spec.overlap * n)))
    if n_ov == n:
        overlap_idx = np.arange(n)
    else:
        direction = rng.standard_normal(3)
        overlap_idx = np.sort(np.argsort(-(p_pts @ direction), kind="stable")[:n_ov])
    extra_pts, extra_nrm = sample_surface(spec.shape, n - n_ov, rng, spec.scale)
    q_pts = np.vstack([p_pts[overlap_idx], extra_pts])
    q_nrm = np.vstack([p_nrm[overlap_idx], extra_nrm])

    R = random_rotation(rng) if spec.rotation == "uniform" else np.eye(3)
    t = rng.uniform(-spec.max_translation, spec.max_translation, 3)
    T = RigidTransform(R, t)
    pairs = np.stack([overlap_idx, np.arange(n_ov)], axis=1)
    meta = {"seed": seed, "spec": spec.model_dump()}

    if spec.deformation > 0:
        flow_fn = SmoothFlow(rng, spec.deformation * spec.scale, spec.scale)
        q_nrm = flow_fn.deform_normals(q_pts, q_nrm)
        q_pts = q_pts + flow_fn(q_pts)
        # true displacement of every source point under deformation then rigid motion
        flow = T.apply(p_pts + flow_fn(p_pts)) - p_pts
        truth = GroundTruth(pairs, flow=flow, meta={**meta, "mode": "nonrigid"})
    else:
        truth = GroundTruth(pairs, transform=T, meta={**meta, "mode": "rigid"})
    if spec.noise > 0:
        q_pts = q_pts + spec.noise * rng.standard_normal(q_pts.shape)
    q_pts = T.apply(q_pts)
    q_nrm = T.rotate(q_nrm)
    q_nrm /= np.linalg.norm(q_nrm, axis=1, keepdims=True)
    return (PointCloudTriplet.with_unit_features(p_pts, p_nrm),
            PointCloudTriplet.with_unit_features(q_pts, q_nrm), truth)
