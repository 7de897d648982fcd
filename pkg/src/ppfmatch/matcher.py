"""Coarse-to-fine correspondence extraction."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from ppfmatch.config import MatchConfig
from ppfmatch.errors import NonFiniteError, ShapeError
from ppfmatch.geom import PointCloudTriplet, groups_from_assignment, point_to_node
from ppfmatch.linalg import logsumexp


@dataclass(frozen=True)
class CorrespondenceSet:
    """Index pairs into the two clouds with a confidence in [0, 1] each."""

    src: np.ndarray
    tgt: np.ndarray
    confidence: np.ndarray
    resolution: Literal["superpoint", "point"] = "point"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        src = np.asarray(self.src, dtype=np.int64).reshape(-1)
        tgt = np.asarray(self.tgt, dtype=np.int64).reshape(-1)
        conf = np.asarray(self.confidence, dtype=np.float64).reshape(-1)
        if not (src.shape == tgt.shape == conf.shape):
            raise ShapeError("correspondence arrays must have equal length")
        if np.any(src < 0) or np.any(tgt < 0):
            raise ValueError("correspondence indices must be non-negative")
        if not np.all(np.isfinite(conf)) or np.any(conf < 0) or np.any(conf > 1):
            raise ValueError("confidences must be finite and in [0, 1]")
        object.__setattr__(self, "src", src)
        object.__setattr__(self, "tgt", tgt)
        object.__setattr__(self, "confidence", conf)

    @classmethod
    def empty(cls, resolution: str = "point") -> "CorrespondenceSet":
        return cls(np.zeros(0, int), np.zeros(0, int), np.zeros(0), resolution)

    def __len__(self) -> int:
        return self.src.shape[0]

    def pairs(self) -> list[tuple[int, int, float]]:
        return list(zip(self.src.tolist(), self.tgt.tolist(), self.confidence.tolist()))

    def index_set(self) -> set[tuple[int, int]]:
        return set(zip(self.src.tolist(), self.tgt.tolist()))

    def check_bounds(self, n_src: int, n_tgt: int) -> None:
        if len(self) and (self.src.max() >= n_src or self.tgt.max() >= n_tgt):
            raise ValueError("correspondence index out of range")


def normalize_rows(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norm = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.maximum(norm, 1e-12)


def gaussian_correlation(x, y) -> np.ndarray:
    """exp(-|x_i - y_j|^2) for unit-normalized rows; larger means more similar."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    sq = np.sum(x * x, 1)[:, None] + np.sum(y * y, 1)[None, :] - 2.0 * (x @ y.T)
    return np.exp(-np.maximum(sq, 0.0))


def dual_normalize(s, mode: str = "product") -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise NonFiniteError("dual_normalize: non-finite input")
    row_sum = s.sum(axis=1, keepdims=True)
    col_sum = s.sum(axis=0, keepdims=True)
    if np.any(row_sum == 0) or np.any(col_sum == 0):
        raise ValueError("dual_normalize: all-zero row or column")
    if mode == "product":
        return (s / row_sum) * (s / col_sum)
    if mode == "sequential":
        r = s / row_sum
        return r / r.sum(axis=0, keepdims=True)
    raise ValueError(f"unknown dual normalization mode {mode!r}")


def _ranked_entries(s: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    # descending; equal values keep row-major (row, col) order
    order = np.argsort(-s.ravel(), kind="stable")[:k]
    return np.divmod(order, s.shape[1])


def top_k_superpoint_matches(s_bar, k: int) -> CorrespondenceSet:
    s_bar = np.asarray(s_bar, dtype=np.float64)
    if k > s_bar.size:
        raise ValueError(f"top-k: k={k} exceeds {s_bar.size} entries")
    rows, cols = _ranked_entries(s_bar, k)
    vals = s_bar[rows, cols]
    peak = s_bar.max()
    conf = vals / peak if peak > 0 else np.zeros_like(vals)
    return CorrespondenceSet(rows, cols, np.clip(conf, 0.0, 1.0), "superpoint")


def sinkhorn(scores, slack_alpha: float, iters: int = 100) -> np.ndarray:
    """Log-domain Sinkhorn on the slack-augmented score matrix.

    Real rows/columns carry unit mass, the slack row carries ``m`` and the
    slack column ``n``. Returns the (n+1) x (m+1) assignment in probability
    space.
    """
    return sinkhorn_batch([scores], slack_alpha, iters)[0]


def sinkhorn_batch(score_list, slack_alpha: float, iters: int = 100) -> list[np.ndarray]:
    """``sinkhorn`` on several score matrices at once, padded to a common size."""
    mats = [np.asarray(s, dtype=np.float64) for s in score_list]
    if iters < 1:
        raise ValueError("sinkhorn needs at least one iteration")
    if not np.isfinite(slack_alpha) or not all(np.all(np.isfinite(s)) for s in mats):
        raise NonFiniteError("sinkhorn: non-finite scores")
    if not mats:
        return []
    if any(s.ndim != 2 or 0 in s.shape for s in mats):
        raise ShapeError("sinkhorn: score matrices must be non-empty 2-D arrays")
    b = len(mats)
    ns = np.array([s.shape[0] for s in mats])
    ms = np.array([s.shape[1] for s in mats])
    N, M = int(ns.max()), int(ms.max())
    # padded rows/columns hold -inf scores and zero mass
    row_ok = np.arange(N)[None, :] < ns[:, None]
    col_ok = np.arange(M)[None, :] < ms[:, None]
    z = np.full((b, N + 1, M + 1), -np.inf)
    for i, s in enumerate(mats):
        z[i, :ns[i], :ms[i]] = s
        z[i, :ns[i], M] = slack_alpha
        z[i, N, :ms[i]] = slack_alpha
        z[i, N, M] = slack_alpha
    with np.errstate(divide="ignore"):
        log_mu = np.concatenate([np.where(row_ok, 0.0, -np.inf), np.log(ms)[:, None]], axis=1)
        log_nu = np.concatenate([np.where(col_ok, 0.0, -np.inf), np.log(ns)[:, None]], axis=1)
    live_u = np.isfinite(log_mu)
    live_v = np.isfinite(log_nu)
    uv = _potentials_kernel(z, log_mu, log_nu, live_u, live_v, iters)
    u, v = uv if uv is not None else _potentials_lse(z, log_mu, log_nu, live_u, live_v, iters)
    p = np.exp(z + u[:, :, None] + v[:, None, :])
    out = []
    for i in range(b):
        rows = np.r_[0:ns[i], N]
        cols = np.r_[0:ms[i], M]
        out.append(p[i][np.ix_(rows, cols)])
    return out


def _potentials_lse(z, log_mu, log_nu, live_u, live_v, iters):
    u = np.where(live_u, 0.0, -np.inf)
    v = np.where(live_v, 0.0, -np.inf)
    with np.errstate(invalid="ignore"):
        for _ in range(iters):
            u = np.where(live_u, log_mu - logsumexp(z + v[:, None, :], axis=2), -np.inf)
            v = np.where(live_v, log_nu - logsumexp(z + u[:, :, None], axis=1), -np.inf)
    return u, v


def _shift(x: np.ndarray, axis: int) -> np.ndarray:
    peak = np.max(x, axis=axis, keepdims=True)
    return np.where(np.isfinite(peak), peak, 0.0)


def _potentials_kernel(z, log_mu, log_nu, live_u, live_v, iters):
    """Same updates as ``_potentials_lse`` with the kernel exponentiated once.

    lse_j(z_ij + v_j) = a_i + b + log sum_j exp(z_ij - a_i) exp(v_j - b), with
    a_i the row maximum of z and b the maximum of v. Returns ``None`` when a
    live sum underflows, so the caller can use the per-iteration path.
    """
    a = _shift(z, 2)                      # (b, N+1, 1)
    c = _shift(z, 1)                      # (b, 1, M+1)
    k_row = np.exp(z - a)
    k_col = np.exp(z - c)
    a, c = a[:, :, 0], c[:, 0, :]
    u = np.where(live_u, 0.0, -np.inf)
    v = np.where(live_v, 0.0, -np.inf)
    tiny = np.finfo(np.float64).tiny * 1e10
    with np.errstate(divide="ignore", invalid="ignore"):
        for _ in range(iters):
            bv = _shift(v, 1)
            sv = np.einsum("bij,bj->bi", k_row, np.exp(v - bv))
            if np.any(sv[live_u] < tiny):
                return None
            u = np.where(live_u, log_mu - (a + bv + np.log(sv)), -np.inf)
            bu = _shift(u, 1)
            su = np.einsum("bij,bi->bj", k_col, np.exp(u - bu))
            if np.any(su[live_v] < tiny):
                return None
            v = np.where(live_v, log_nu - (c + bu + np.log(su)), -np.inf)
    return u, v


def _rank_along(p: np.ndarray, axis: int) -> np.ndarray:
    order = np.argsort(-p, axis=axis, kind="stable")
    ranks = np.empty_like(order)
    idx = np.arange(p.shape[axis])
    shape = [1, 1]
    shape[axis] = -1
    np.put_along_axis(ranks, order, np.broadcast_to(idx.reshape(shape), p.shape), axis=axis)
    return ranks


def mutual_top_k_mask(p, k: int, min_confidence: float) -> np.ndarray:
    """Entries ranked within the top-k of both their row and their column, above the threshold."""
    p = np.asarray(p, dtype=np.float64)
    return (_rank_along(p, 1) < k) & (_rank_along(p, 0) < k) & (p > min_confidence)


def _group_scores(gx, gy) -> np.ndarray:
    gx = np.asarray(gx, dtype=np.float64)
    gy = np.asarray(gy, dtype=np.float64)
    if gx.shape[0] == 0 or gy.shape[0] == 0:
        raise ValueError("point_match_group: empty group")
    return gx @ gy.T / np.sqrt(gx.shape[1])


def _select(assignment: np.ndarray, k: int, min_confidence: float) -> CorrespondenceSet:
    u, v = np.nonzero(mutual_top_k_mask(assignment, k, min_confidence))
    return CorrespondenceSet(u, v, np.clip(assignment[u, v], 0.0, 1.0), "point")


def point_match_group(gx, gy, cfg: MatchConfig, slack_alpha: float,
                      mutual_k: int | None = None) -> CorrespondenceSet:
    """Match two feature groups; indices in the result are local to the groups."""
    assignment = sinkhorn(_group_scores(gx, gy), slack_alpha, cfg.sinkhorn_iters)[:-1, :-1]
    k = cfg.mutual_top_k if mutual_k is None else mutual_k
    return _select(assignment, k, cfg.min_confidence)


def superpoint_matches(sp_p: PointCloudTriplet, sp_q: PointCloudTriplet, cfg: MatchConfig,
                       mode: str = "rigid") -> CorrespondenceSet:
    if len(sp_p) < 1 or len(sp_q) < 1:
        raise ValueError("coarse matching needs at least one superpoint per frame")
    x = normalize_rows(sp_p.features)
    y = normalize_rows(sp_q.features)
    corr = gaussian_correlation(x, y)
    s_bar = dual_normalize(corr, cfg.dual_normalization)
    if mode == "rigid":
        return top_k_superpoint_matches(s_bar, min(cfg.num_superpoint_corr, s_bar.size))
    if mode != "nonrigid":
        raise ValueError(f"unknown mode {mode!r}")
    ranked = top_k_superpoint_matches(s_bar, s_bar.size)
    dist = np.linalg.norm(x[ranked.src] - y[ranked.tgt], axis=1)
    keep = dist < cfg.nonrigid_distance_gate
    if keep.sum() < cfg.nonrigid_fallback_top:
        keep = np.arange(len(ranked)) < min(cfg.nonrigid_fallback_top, len(ranked))
    return CorrespondenceSet(ranked.src[keep], ranked.tgt[keep], ranked.confidence[keep], "superpoint")


def union_max_confidence(parts: list[tuple[np.ndarray, np.ndarray, np.ndarray]]) -> CorrespondenceSet:
    """Merge pair lists, keeping the highest confidence per (u, v); sorted by (u, v)."""
    best: dict[tuple[int, int], float] = {}
    for src, tgt, conf in parts:
        for u, v, c in zip(src.tolist(), tgt.tolist(), conf.tolist()):
            key = (u, v)
            if c > best.get(key, -1.0):
                best[key] = c
    if not best:
        return CorrespondenceSet.empty("point")
    keys = sorted(best)
    return CorrespondenceSet([k[0] for k in keys], [k[1] for k in keys], [best[k] for k in keys], "point")


def coarse_to_fine(sp_p: PointCloudTriplet, sp_q: PointCloudTriplet, dense_p: PointCloudTriplet,
                   dense_q: PointCloudTriplet, cfg: MatchConfig, slack_alpha: float = 1.0,
                   mode: str = "rigid", chunk: int = 64) -> CorrespondenceSet:
    """Superpoint matches refined to point matches inside each matched group pair."""
    coarse = superpoint_matches(sp_p, sp_q, cfg, mode)
    groups_p = groups_from_assignment(point_to_node(dense_p.points, sp_p.points), len(sp_p))
    groups_q = groups_from_assignment(point_to_node(dense_q.points, sp_q.points), len(sp_q))
    mutual_k = cfg.mutual_top_k if mode == "rigid" else cfg.nonrigid_mutual_top_k
    jobs = [(groups_p[i], groups_q[j]) for i, j in zip(coarse.src.tolist(), coarse.tgt.tolist())
            if groups_p[i].size and groups_q[j].size]
    # similar sizes share a chunk to keep padding small; the union is order-free
    jobs.sort(key=lambda job: (job[0].size, job[1].size))
    parts = []
    for start in range(0, len(jobs), chunk):
        batch = jobs[start:start + chunk]
        scores = [_group_scores(dense_p.features[gp], dense_q.features[gq]) for gp, gq in batch]
        for (gp, gq), a in zip(batch, sinkhorn_batch(scores, slack_alpha, cfg.sinkhorn_iters)):
            local = _select(a[:-1, :-1], mutual_k, cfg.min_confidence)
            if len(local):
                parts.append((gp[local.src], gq[local.tgt], local.confidence))
    return union_max_confidence(parts)
