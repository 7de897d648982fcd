"""Cross-frame context aggregation over superpoints."""
from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from ppfmatch.config import PipelineConfig
from ppfmatch.errors import ShapeError
from ppfmatch.geom import PointCloudTriplet, angles, pairwise_distances
from ppfmatch.linalg import ModelWeights, check_finite, layer_norm, linear, relu, softmax_rows

Params = Mapping[str, np.ndarray]


def sinusoidal_embed(values, c: int, sigma: float) -> np.ndarray:
    """sin/cos embedding on a trailing axis of size c (sin at even, cos at odd slots)."""
    if c % 2:
        raise ValueError(f"embedding width must be even, got {c}")
    values = np.asarray(values, dtype=np.float64)[..., None] / sigma
    freq = 1.0 / np.power(10000.0, 2.0 * np.arange(c // 2) / c)
    phase = values * freq
    out = np.empty(values.shape[:-1] + (c,))
    out[..., 0::2] = np.sin(phase)
    out[..., 1::2] = np.cos(phase)
    return out


def sinusoidal_distance_embed(superpoints, c: int, sigma_d: float = 0.2) -> np.ndarray:
    return sinusoidal_embed(pairwise_distances(superpoints, superpoints), c, sigma_d)


def triplet_angles(superpoints) -> np.ndarray:
    """alpha[i, j, s] = angle(p_k - p_i, p_j - p_i) for the s-th of i's 3 nearest others."""
    pts = np.asarray(superpoints, dtype=np.float64)
    n = pts.shape[0]
    if n < 4:
        raise ValueError(f"angular embedding needs at least 4 superpoints, got {n}")
    d = pairwise_distances(pts, pts)
    np.fill_diagonal(d, np.inf)
    nbrs = np.argsort(d, axis=1, kind="stable")[:, :3]
    ref = pts[nbrs] - pts[:, None, :]                   # (n, 3, 3)
    rel = pts[None, :, :] - pts[:, None, :]             # (n, n, 3)
    return angles(ref[:, None, :, :], rel[:, :, None, :])


def angular_embed(superpoints, c: int, sigma_a: float = 15.0) -> np.ndarray:
    """(n, n, 3, c) embedding; angles are measured in degrees before scaling by sigma_a."""
    return sinusoidal_embed(np.degrees(triplet_angles(superpoints)), c, sigma_a)


def fuse_geometric_embedding(g_dist, g_ang, W_D, W_A) -> np.ndarray:
    return linear(g_dist, W_D) + linear(g_ang, W_A).max(axis=-2)


def geometric_embedding(superpoints, W_D, W_A, sigma_d: float, sigma_a: float) -> np.ndarray:
    c = np.shape(W_D)[0]
    return fuse_geometric_embedding(sinusoidal_distance_embed(superpoints, c, sigma_d),
                                    angular_embed(superpoints, c, sigma_a), W_D, W_A)


def feed_forward(x, w: Params, eps: float = 1e-5) -> np.ndarray:
    h = linear(relu(linear(x, w["W1"], w["b1"])), w["W2"], w["b2"])
    return layer_norm(x + h, w["ln_gain"], w["ln_bias"], eps)


def _sub(w: Params, prefix: str) -> dict[str, np.ndarray]:
    head = prefix + "."
    return {k[len(head):]: v for k, v in w.items() if k.startswith(head)}


@dataclass(frozen=True)
class PositionContextPair:
    position: np.ndarray   # E'_P
    context: np.ndarray    # C'_P

    def fused(self) -> np.ndarray:
        return self.position + self.context


def gsm(triplet: PointCloudTriplet, w: Params, sigma_d: float = 0.2, sigma_a: float = 15.0,
        eps: float = 1e-5) -> PositionContextPair:
    """Self-attention whose scores and messages include the pairwise geometric embedding."""
    x = triplet.features
    c = w["W_Q"].shape[0]
    if x.shape[1] != c:
        raise ShapeError(f"gsm: feature width {x.shape[1]} != {c}")
    emb = geometric_embedding(triplet.points, w["W_D"], w["W_A"], sigma_d, sigma_a)
    geo = emb @ w["W_G"]                                    # (n, n, c)
    pos = emb @ w["W_E"]
    q, k, v = x @ w["W_Q"], x @ w["W_K"], x @ w["W_V"]
    scores = (np.einsum("ic,ijc->ij", q, pos) + q @ k.T) / np.sqrt(c)
    attn = softmax_rows(scores)
    m_geo = np.einsum("ij,ijc->ic", attn, geo)
    m_ctx = attn @ v
    h = layer_norm(x + (m_geo + m_ctx) @ w["W_msg"], w["ln_gain"], w["ln_bias"], eps)
    context = feed_forward(h, _sub(w, "ffn_ctx"), eps)
    position = feed_forward(m_geo, _sub(w, "ffn_geo"), eps)
    return PositionContextPair(check_finite(position, "gsm"), check_finite(context, "gsm"))


def pcm(target: PositionContextPair, source: PositionContextPair, w: Params,
        eps: float = 1e-5) -> np.ndarray:
    """Cross-attention from ``source`` into ``target`` on position-aware features."""
    f_t, f_s = target.fused(), source.fused()
    if f_t.shape[1] != f_s.shape[1]:
        raise ShapeError("pcm: frames must share the feature width")
    q, k, v = f_t @ w["W_Q"], f_s @ w["W_K"], f_s @ w["W_V"]
    attn = softmax_rows(q @ k.T)
    h = layer_norm(f_t + (attn @ v) @ w["W_msg"], w["ln_gain"], w["ln_bias"], eps)
    return check_finite(feed_forward(h, _sub(w, "ffn"), eps), "pcm")


def global_block(p: PointCloudTriplet, q: PointCloudTriplet, w_gsm: Params, w_pcm: Params,
                 cfg: PipelineConfig) -> tuple[PointCloudTriplet, PointCloudTriplet]:
    pair_p = gsm(p, w_gsm, cfg.sigma_d, cfg.sigma_a, cfg.ln_eps)
    pair_q = gsm(q, w_gsm, cfg.sigma_d, cfg.sigma_a, cfg.ln_eps)
    new_p = pcm(pair_p, pair_q, w_pcm, cfg.ln_eps)
    # the reverse pass sees the already-updated first frame
    new_q = pcm(pair_q, PositionContextPair(pair_p.position, new_p), w_pcm, cfg.ln_eps)
    return p.with_features(new_p), q.with_features(new_q)


def run_global_stack(p: PointCloudTriplet, q: PointCloudTriplet, weights: ModelWeights,
                     cfg: PipelineConfig, g: int | None = None) -> tuple[PointCloudTriplet, PointCloudTriplet]:
    g = cfg.g if g is None else g
    if g < 0:
        raise ValueError("number of global blocks must be non-negative")
    for b in range(1, g + 1):
        p, q = global_block(p, q, weights.scope(f"global.block{b}.gsm"),
                            weights.scope(f"global.block{b}.pcm"), cfg)
    return p, q
