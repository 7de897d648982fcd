"""Runtime table: vectorized PAM against a per-anchor loop at growing widths."""
from __future__ import annotations

import time

import numpy as np

from ppfmatch.geom import PointCloudTriplet, knn, ppf_batch
from ppfmatch.linalg import layer_norm, softmax_rows
from ppfmatch.ppftrans import pam
from ppfmatch.weights import pam_shapes


def naive_pam(anchor_pts, anchor_nrm, support: PointCloudTriplet, w, k: int,
              eps: float = 1e-5) -> np.ndarray:
    """Loop over anchors; every projection is applied to the gathered neighbor rows."""
    nbrs = knn(anchor_pts, support.points, k).indices
    out = []
    for a in range(len(anchor_pts)):
        idx = nbrs[a]
        coords = ppf_batch(anchor_pts[a], anchor_nrm[a], support.points[idx], support.normals[idx])
        e_s = coords @ w["W_coord"]
        ctx = support.features[idx] @ w["W_context"]
        x_s = ctx[0]
        q = x_s @ w["W_Q"]
        scores = ((e_s @ w["W_E"]) @ q + (ctx @ w["W_K"]) @ q) / np.sqrt(q.shape[0])
        att = softmax_rows(scores)
        m = att @ (e_s @ w["W_G"]) + att @ (ctx @ w["W_V"])
        out.append(layer_norm(x_s + m @ w["W_msg"], w["ln_gain"], w["ln_bias"], eps) @ w["W_out"])
    return np.stack(out)


def _best_of(fn, repeats: int) -> float:
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_bench(widths=(16, 32, 64, 128, 256), n: int = 512, k: int = 16, repeats: int = 3,
              seed: int = 0) -> list[dict]:
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((n, 3))
    nrm = rng.standard_normal((n, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    rows = []
    for c in widths:
        cloud = PointCloudTriplet(pts, nrm, rng.standard_normal((n, c)))
        w = {name.rsplit(".", 1)[1]: rng.uniform(-1, 1, shape) / np.sqrt(shape[0])
             for name, shape in pam_shapes("b", c, c, c).items()}
        fast = pam(pts, nrm, cloud, w, k)
        slow = naive_pam(pts, nrm, cloud, w, k)
        t_fast = _best_of(lambda: pam(pts, nrm, cloud, w, k), repeats)
        t_slow = _best_of(lambda: naive_pam(pts, nrm, cloud, w, k), repeats)
        rows.append({"width": c, "n": n, "k": k, "pam_ms": 1e3 * t_fast, "naive_ms": 1e3 * t_slow,
                     "speedup": t_slow / t_fast,
                     "max_rel_dev": float(np.max(np.abs(fast - slow)) / np.max(np.abs(slow)))})
    return rows


def format_bench(rows: list[dict]) -> str:
    lines = [f"{'width':>5} {'n':>6} {'k':>3} {'pam_ms':>9} {'naive_ms':>9} {'speedup':>8} {'max_rel_dev':>11}"]
    for r in rows:
        lines.append(f"{r['width']:>5} {r['n']:>6} {r['k']:>3} {r['pam_ms']:>9.2f} {r['naive_ms']:>9.2f} "
                     f"{r['speedup']:>8.1f} {r['max_rel_dev']:>11.2e}")
    return "\n".join(lines)
