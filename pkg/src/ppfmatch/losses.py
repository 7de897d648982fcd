"""Value-only training objectives (no gradients)."""
from __future__ import annotations

from collections.abc import Iterable

import numpy as np

from ppfmatch.config import LossConfig


def overlap_ratio(group_p, group_q, gt_pairs) -> float:
    """Share of ``group_p`` points with a ground-truth partner inside ``group_q``."""
    group_p = np.asarray(group_p).reshape(-1)
    if group_p.size == 0:
        raise ValueError("overlap_ratio: empty source group")
    in_q = set(np.asarray(group_q).reshape(-1).tolist())
    partnered = {int(u) for u, v in gt_pairs if int(v) in in_q}
    return sum(1 for u in group_p.tolist() if u in partnered) / group_p.size


def overlap_matrix(assign_p, assign_q, n_nodes_p: int, n_nodes_q: int, gt_pairs) -> np.ndarray:
    """Overlap ratio for every superpoint pair from point-to-node assignments."""
    assign_p = np.asarray(assign_p, dtype=np.int64)
    assign_q = np.asarray(assign_q, dtype=np.int64)
    gt = np.asarray(list(gt_pairs), dtype=np.int64).reshape(-1, 2)
    counts = np.zeros((n_nodes_p, n_nodes_q))
    if gt.size:
        # a source point counts once per target group holding one of its partners
        hits = np.unique(np.stack([gt[:, 0], assign_q[gt[:, 1]]], axis=1), axis=0)
        np.add.at(counts, (assign_p[hits[:, 0]], hits[:, 1]), 1.0)
    sizes = np.bincount(assign_p, minlength=n_nodes_p).astype(np.float64)[:, None]
    return np.divide(counts, sizes, out=np.zeros_like(counts), where=sizes > 0)


def _one_side(dist: np.ndarray, overlap: np.ndarray, cfg: LossConfig) -> float:
    pos = overlap > cfg.tau_r
    neg = overlap == 0
    beta_e = np.maximum(cfg.gamma * (dist - cfg.delta_e), 0.0)
    beta_f = np.maximum(cfg.gamma * (cfg.delta_f - dist), 0.0)
    pos_logit = np.where(pos, overlap * beta_e * (dist - cfg.delta_e), -np.inf)
    neg_logit = np.where(neg, beta_f * (cfg.delta_f - dist), -np.inf)
    with np.errstate(divide="ignore"):
        lse_pos = np.logaddexp.reduce(pos_logit, axis=1)
        lse_neg = np.logaddexp.reduce(neg_logit, axis=1)
    # log(1 + sum_pos * sum_neg); rows with an empty set give log(1) = 0
    terms = np.logaddexp(0.0, lse_pos + lse_neg)
    return float(terms.mean())


def circle_loss(x, y, overlap, cfg: LossConfig | None = None, overlap_q=None) -> float:
    """Overlap-weighted circle loss averaged over both frames.

    ``overlap`` is n' x m' from the first frame's side; ``overlap_q`` (m' x n')
    defaults to its transpose.
    """
    cfg = cfg or LossConfig()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    for name, f in (("x", x), ("y", y)):
        if np.any(np.abs(np.linalg.norm(f, axis=1) - 1.0) > 1e-6):
            raise ValueError(f"circle_loss: {name} rows must be unit vectors")
    overlap = np.asarray(overlap, dtype=np.float64)
    overlap_q = overlap.T if overlap_q is None else np.asarray(overlap_q, dtype=np.float64)
    diff = x[:, None, :] - y[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return 0.5 * (_one_side(dist, overlap, cfg) + _one_side(dist.T, overlap_q, cfg))


def point_nll_loss(assignment, gt_pairs, unmatched_p, unmatched_q) -> float:
    """Negative log-likelihood of the required entries of a slack-augmented assignment."""
    c = np.asarray(assignment, dtype=np.float64)
    n, m = c.shape[0] - 1, c.shape[1] - 1
    gt = np.asarray(list(gt_pairs), dtype=np.int64).reshape(-1, 2)
    up = np.asarray(list(unmatched_p), dtype=np.int64).reshape(-1)
    uq = np.asarray(list(unmatched_q), dtype=np.int64).reshape(-1)
    if (gt.size and (gt[:, 0].max() >= n or gt[:, 1].max() >= m or gt.min() < 0)) \
            or (up.size and (up.max() >= n or up.min() < 0)) or (uq.size and (uq.max() >= m or uq.min() < 0)):
        raise ValueError("point_nll_loss: index out of range")
    if set(gt[:, 0].tolist()) & set(up.tolist()) or set(gt[:, 1].tolist()) & set(uq.tolist()):
        raise ValueError("point_nll_loss: matched and unmatched index sets overlap")
    probs = np.concatenate([c[gt[:, 0], gt[:, 1]], c[up, m], c[n, uq]])
    if np.any(probs <= 0) or not np.all(np.isfinite(probs)):
        raise ValueError("point_nll_loss: zero probability at a required entry")
    return float(-np.sum(np.log(probs)))


def point_matching_loss(per_correspondence: Iterable[float]) -> float:
    vals = list(per_correspondence)
    if not vals:
        raise ValueError("point_matching_loss: no superpoint correspondences")
    return float(np.mean(vals))


def total_loss(superpoint_loss: float, point_loss: float, lam: float = 1.0) -> float:
    if not (np.isfinite(superpoint_loss) and np.isfinite(point_loss)):
        raise ValueError("total_loss: non-finite input")
    return float(superpoint_loss + lam * point_loss)
