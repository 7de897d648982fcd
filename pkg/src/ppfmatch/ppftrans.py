"""Local rotation-invariant attention stack and the encoder/decoder built on it.

Geometry enters only through point pair features, so every output here is
unchanged when points and normals are moved by the same rigid transform.
"""
from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from ppfmatch.config import PipelineConfig
from ppfmatch.errors import ShapeError
from ppfmatch.geom import PointCloudTriplet, farthest_point_sample, idw_weights, knn, ppf_batch
from ppfmatch.linalg import ModelWeights, check_finite, layer_norm, relu, softmax_rows

Params = Mapping[str, np.ndarray]


def pam(anchor_pts, anchor_nrm, support: PointCloudTriplet, w: Params, k: int,
        eps: float = 1e-5) -> np.ndarray:
    """Attend from each anchor over its k nearest support points.

    Returns anchor features of width ``W_out.shape[1]``.
    """
    anchor_pts = np.asarray(anchor_pts, dtype=np.float64)
    anchor_nrm = np.asarray(anchor_nrm, dtype=np.float64)
    if k > len(support):
        raise ValueError(f"pam: k={k} exceeds support size {len(support)}")
    if support.features.shape[1] != w["W_context"].shape[0]:
        raise ShapeError(f"pam: support width {support.features.shape[1]} != "
                         f"W_context rows {w['W_context'].shape[0]}")
    nbrs = knn(anchor_pts, support.points, k).indices          # (a, k)
    nearest = nbrs[:, 0]
    coords = ppf_batch(anchor_pts[:, None, :], anchor_nrm[:, None, :],
                       support.points[nbrs], support.normals[nbrs])  # (a, k, 4)

    ctx = support.features @ w["W_context"]                  # (s, c)
    x_s = ctx[nearest]                                        # (a, c)
    # project per support point once, then gather; equal to projecting gathered rows
    keys = (ctx @ w["W_K"])[nbrs]
    values = (ctx @ w["W_V"])[nbrs]
    geo = coords @ (w["W_coord"] @ w["W_G"])                 # G = E_S W_G
    pos = coords @ (w["W_coord"] @ w["W_E"])                 # E = E_S W_E
    q = x_s @ w["W_Q"]

    c0 = q.shape[1]
    scores = np.einsum("ac,akc->ak", q, pos + keys) / np.sqrt(c0)
    attn = softmax_rows(scores)
    msg = np.einsum("ak,akc->ac", attn, geo + values)
    h = layer_norm(x_s + msg @ w["W_msg"], w["ln_gain"], w["ln_bias"], eps)
    return check_finite(h @ w["W_out"], "pam")


def aal(support: PointCloudTriplet, m: int, w: Params, k: int,
        eps: float = 1e-5) -> tuple[PointCloudTriplet, np.ndarray]:
    """Downsample by FPS and describe the anchors with PAM.

    Returns the anchor triplet and the selected support indices. With
    ``m == len(support)`` the input order is kept.
    """
    n = len(support)
    if m > n:
        raise ValueError(f"aal: cannot select {m} anchors from {n} points")
    idx = np.arange(n) if m == n else farthest_point_sample(support.points, m, 0)
    pts, nrm = support.points[idx], support.normals[idx]
    feats = pam(pts, nrm, support, w, k, eps)
    return PointCloudTriplet(pts, nrm, feats), idx


def pal(triplet: PointCloudTriplet, w: Params, k: int, eps: float = 1e-5) -> PointCloudTriplet:
    """Self-attention PAM with residual, LayerNorm and ReLU; geometry untouched."""
    pam_w = {key[4:]: v for key, v in w.items() if key.startswith("pam.")}
    c = triplet.features.shape[1]
    if pam_w["W_out"].shape[1] != c:
        raise ShapeError("pal: feature width must be preserved")
    delta = pam(triplet.points, triplet.normals, triplet, pam_w, k, eps)
    feats = relu(triplet.features + layer_norm(delta, w["norm.gain"], w["norm.bias"], eps))
    return PointCloudTriplet(triplet.points, triplet.normals, feats)


def interpolate_features(anchor: PointCloudTriplet, query_points, k: int) -> np.ndarray:
    """Inverse-distance interpolation of anchor features at ``query_points``."""
    nb = knn(query_points, anchor.points, k)
    weights = idw_weights(nb.distances)
    return np.einsum("jk,jkc->jc", weights, anchor.features[nb.indices])


def tul(anchor: PointCloudTriplet, support_skip: PointCloudTriplet, zeta1, zeta2,
        k: int) -> PointCloudTriplet:
    """Upsample anchor features onto the skip points and fuse with the skip features."""
    if support_skip.features.shape[1] != np.shape(zeta1)[0]:
        raise ShapeError(f"tul: skip width {support_skip.features.shape[1]} != zeta1 rows {np.shape(zeta1)[0]}")
    if anchor.features.shape[1] != np.shape(zeta2)[0]:
        raise ShapeError(f"tul: anchor width {anchor.features.shape[1]} != zeta2 rows {np.shape(zeta2)[0]}")
    interp = interpolate_features(anchor, support_skip.points, k)
    feats = support_skip.features @ zeta1 + interp @ zeta2
    return PointCloudTriplet(support_skip.points, support_skip.normals, check_finite(feats, "tul"))


@dataclass(frozen=True)
class EncoderOutput:
    superpoints: PointCloudTriplet
    levels: list[PointCloudTriplet]
    # per block, indices into the previous level (block 1: into the input)
    selections: list[np.ndarray]

    def level_indices(self, b: int) -> np.ndarray:
        """Indices of level ``b`` (0-based) points in the original input."""
        idx = self.selections[0]
        for sel in self.selections[1:b + 1]:
            idx = idx[sel]
        return idx


def run_encoder(cloud: PointCloudTriplet, weights: ModelWeights, cfg: PipelineConfig) -> EncoderOutput:
    cfg.check_input_size(len(cloud))
    eps = cfg.ln_eps
    levels, selections = [], []
    cur = cloud
    for b, blk in enumerate(cfg.encoder, start=1):
        k = cfg.block_k(b - 1)
        m = len(cur) // blk.downsample_ratio
        cur, idx = aal(cur, m, weights.scope(f"enc.block{b}.aal.pam"), k, eps)
        for p in range(1, blk.num_pal + 1):
            cur = pal(cur, weights.scope(f"enc.block{b}.pal{p}"), k, eps)
        levels.append(cur)
        selections.append(idx)
    return EncoderOutput(cur, levels, selections)


def run_decoder(superpoints: PointCloudTriplet, skips: list[PointCloudTriplet],
                weights: ModelWeights, cfg: PipelineConfig) -> PointCloudTriplet:
    """Decode back to the first encoder level; the deepest TUL is same-resolution (k=1)."""
    nb = len(cfg.encoder)
    if len(skips) != nb:
        raise ShapeError(f"run_decoder: expected {nb} skip levels, got {len(skips)}")
    eps = cfg.ln_eps
    cur = superpoints
    for b in range(nb, 0, -1):
        skip = skips[b - 1]
        if b == nb and len(skip) != len(superpoints):
            raise ShapeError("run_decoder: deepest skip must match the superpoint count")
        k_interp = 1 if b == nb else min(cfg.interp_k, len(cur))
        cur = tul(cur, skip, weights[f"dec.block{b}.tul.zeta1"], weights[f"dec.block{b}.tul.zeta2"], k_interp)
        k = cfg.block_k(b - 1)
        for p in range(1, cfg.encoder[b - 1].num_dec_pal + 1):
            cur = pal(cur, weights.scope(f"dec.block{b}.pal{p}"), k, eps)
    return cur
