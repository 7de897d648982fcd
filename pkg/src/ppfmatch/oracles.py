"""Slow, loop-based reference implementations.

These exist to check the vectorized code paths: they share no helpers with
them beyond plain numpy arithmetic and favour obviousness over speed.
"""
from __future__ import annotations

import math

import numpy as np


def _dist(a, b) -> float:
    return math.sqrt(sum((float(x) - float(y)) ** 2 for x, y in zip(a, b)))


def fps(points, m: int, seed_index: int = 0) -> list[int]:
    pts = np.asarray(points, dtype=np.float64)
    chosen = [seed_index]
    for _ in range(1, m):
        best, best_d = -1, -1.0
        for i in range(len(pts)):
            if i in chosen:
                continue
            d = min(_dist(pts[i], pts[j]) for j in chosen)
            if d > best_d:
                best, best_d = i, d
        chosen.append(best)
    return chosen


def knn(queries, support, k: int) -> tuple[list[list[int]], list[list[float]]]:
    idx, dist = [], []
    for q in np.asarray(queries, dtype=np.float64):
        ranked = sorted(range(len(support)), key=lambda j: (_dist(q, support[j]), j))[:k]
        idx.append(ranked)
        dist.append([_dist(q, support[j]) for j in ranked])
    return idx, dist


def point_to_node(points, nodes) -> list[int]:
    return [row[0] for row in knn(points, nodes, 1)[0]]


def dual_normalize(s, mode: str = "product") -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    n, m = s.shape
    rows = [math.fsum(s[i, j] for j in range(m)) for i in range(n)]
    cols = [math.fsum(s[i, j] for i in range(n)) for j in range(m)]
    out = np.empty_like(s)
    for i in range(n):
        for j in range(m):
            if mode == "product":
                out[i, j] = (s[i, j] / rows[i]) * (s[i, j] / cols[j])
            else:
                out[i, j] = s[i, j] / rows[i]
    if mode != "product":
        col2 = [math.fsum(out[i, j] for i in range(n)) for j in range(m)]
        for i in range(n):
            for j in range(m):
                out[i, j] /= col2[j]
    return out


def circle_loss(x, y, overlap, tau_r=0.1, delta_e=0.1, delta_f=1.4, gamma=10.0, overlap_q=None) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    overlap = np.asarray(overlap, dtype=np.float64)
    overlap_q = overlap.T if overlap_q is None else np.asarray(overlap_q)

    def side(a, b, ov):
        terms = []
        for i in range(len(a)):
            pos, neg = [], []
            for j in range(len(b)):
                d = _dist(a[i], b[j])
                if ov[i, j] > tau_r:
                    be = max(gamma * (d - delta_e), 0.0)
                    pos.append(math.exp(ov[i, j] * be * (d - delta_e)))
                elif ov[i, j] == 0:
                    bf = max(gamma * (delta_f - d), 0.0)
                    neg.append(math.exp(bf * (delta_f - d)))
            terms.append(math.log1p(math.fsum(pos) * math.fsum(neg)))
        return math.fsum(terms) / len(terms)

    return 0.5 * (side(x, y, overlap) + side(y, x, overlap_q))


def point_nll(assignment, gt_pairs, unmatched_p, unmatched_q) -> float:
    c = np.asarray(assignment, dtype=np.float64)
    n, m = c.shape[0] - 1, c.shape[1] - 1
    total = [-math.log(c[u, v]) for u, v in gt_pairs]
    total += [-math.log(c[u, m]) for u in unmatched_p]
    total += [-math.log(c[n, v]) for v in unmatched_q]
    return math.fsum(total)


def nfmr(src, tgt, gt_pairs, src_points, tgt_points, flow, tau4=0.04, k=3) -> float:
    src_points = np.asarray(src_points, dtype=np.float64)
    tgt_points = np.asarray(tgt_points, dtype=np.float64)
    pairs = sorted(set(zip([int(u) for u in src], [int(v) for v in tgt])))
    anchors = [src_points[u] for u, _ in pairs]
    flows = [tgt_points[v] - src_points[u] for u, v in pairs]
    hits = 0
    for u, _ in gt_pairs:
        p = src_points[u]
        ranked = sorted(range(len(anchors)), key=lambda j: (_dist(p, anchors[j]), j))[:min(k, len(anchors))]
        dists = [_dist(p, anchors[j]) for j in ranked]
        exact = [j for j, d in zip(ranked, dists) if d < 1e-12]
        if exact:
            est = flows[exact[0]]
        else:
            inv = [1.0 / d for d in dists]
            est = sum(w * flows[j] for w, j in zip(inv, ranked)) / math.fsum(inv)
        if _dist(est, flow[u]) < tau4:
            hits += 1
    return hits / len(gt_pairs)


def ppf(p_a, n_a, p_s, n_s) -> np.ndarray:
    def ang(a, b):
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na < 1e-12 or nb < 1e-12:
            return 0.0
        cos = float(np.dot(a, b)) / (na * nb)
        return math.acos(max(-1.0, min(1.0, cos)))
    d = np.asarray(p_s, dtype=np.float64) - np.asarray(p_a, dtype=np.float64)
    return np.array([np.linalg.norm(d), ang(n_a, d), ang(n_s, d), ang(n_s, n_a)])


def _layer_norm(x, gain, bias, eps):
    mu = x.mean()
    var = ((x - mu) ** 2).mean()
    return gain * (x - mu) / math.sqrt(var + eps) + bias


def _softmax(z):
    e = np.exp(z - z.max())
    return e / e.sum()


def pam(anchor_pts, anchor_nrm, support_pts, support_nrm, support_feats, w, k: int,
        eps: float = 1e-5) -> np.ndarray:
    """One anchor at a time, with every projection applied to gathered rows."""
    out = []
    nbr_idx, _ = knn(anchor_pts, support_pts, k)
    for a, nbrs in enumerate(nbr_idx):
        coords = np.array([ppf(anchor_pts[a], anchor_nrm[a], support_pts[j], support_nrm[j]) for j in nbrs])
        e_s = coords @ w["W_coord"]
        ctx = np.asarray(support_feats)[nbrs] @ w["W_context"]
        x_s = ctx[0]
        G, E = e_s @ w["W_G"], e_s @ w["W_E"]
        K, V = ctx @ w["W_K"], ctx @ w["W_V"]
        q = x_s @ w["W_Q"]
        att = _softmax((E @ q + K @ q) / math.sqrt(len(q)))
        m = att @ G + att @ V
        out.append(_layer_norm(x_s + m @ w["W_msg"], w["ln_gain"], w["ln_bias"], eps) @ w["W_out"])
    return np.array(out)


def feed_forward(x, w, eps: float = 1e-5) -> np.ndarray:
    h = np.maximum(x @ w["W1"] + w["b1"], 0.0) @ w["W2"] + w["b2"]
    return np.array([_layer_norm(r, w["ln_gain"], w["ln_bias"], eps) for r in x + h])


def standard_self_attention(x, w, eps: float = 1e-5) -> np.ndarray:
    """Textbook scaled dot-product self-attention, residual, LayerNorm and FFN."""
    x = np.asarray(x, dtype=np.float64)
    c = x.shape[1]
    q, k, v = x @ w["W_Q"], x @ w["W_K"], x @ w["W_V"]
    rows = []
    for i in range(len(x)):
        att = _softmax(k @ q[i] / math.sqrt(c))
        msg = att @ v
        rows.append(_layer_norm(x[i] + msg @ w["W_msg"], w["ln_gain"], w["ln_bias"], eps))
    ffn = {kk[len("ffn_ctx."):]: vv for kk, vv in w.items() if kk.startswith("ffn_ctx.")}
    return feed_forward(np.array(rows), ffn, eps)


def sinkhorn_prob(scores, alpha: float, iters: int) -> np.ndarray:
    """Plain multiplicative Sinkhorn on the slack-augmented matrix."""
    s = np.asarray(scores, dtype=np.float64)
    n, m = s.shape
    z = np.full((n + 1, m + 1), float(alpha))
    z[:n, :m] = s
    K = np.exp(z)
    mu = np.r_[np.ones(n), m]
    nu = np.r_[np.ones(m), n]
    a, b = np.ones(n + 1), np.ones(m + 1)
    for _ in range(iters):
        a = mu / (K @ b)
        b = nu / (K.T @ a)
    return a[:, None] * K * b[None, :]
