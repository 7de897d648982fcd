"""Built-in invariant suite behind ``ppfmatch selftest``."""
from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ppfmatch import oracles
from ppfmatch.config import PipelineConfig
from ppfmatch.geom import (PointCloudTriplet, farthest_point_sample, knn, point_to_node,
                           random_transform)
from ppfmatch.global_transformer import gsm
from ppfmatch.linalg import ModelWeights, layer_norm
from ppfmatch.matcher import CorrespondenceSet, dual_normalize, sinkhorn
from ppfmatch.metrics import kabsch, ransac_registration, rotation_error
from ppfmatch.pipeline import match_pair
from ppfmatch.ppftrans import pam
from ppfmatch.synthetic import SyntheticPairSpec, generate_pair
from ppfmatch.weights import init_random_weights, load_weights, save_weights


@dataclass(frozen=True)
class CheckResult:
    name: str
    worst: float
    tolerance: float
    passed: bool


def rel_dev(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(float(np.max(np.abs(b))), 1e-300)
    return float(np.max(np.abs(a - b))) / scale


def _check(name, worst, tol) -> CheckResult:
    return CheckResult(name, float(worst), float(tol), bool(worst <= tol))


def _random_cloud(rng, n) -> PointCloudTriplet:
    nrm = rng.standard_normal((n, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    return PointCloudTriplet.with_unit_features(rng.standard_normal((n, 3)), nrm)


def check_invariance(weights: ModelWeights, cfg: PipelineConfig, n_transforms: int = 3,
                     seed: int = 0) -> list[CheckResult]:
    # random weights give near-uniform assignments; without the floor the index sets are non-empty
    cfg = cfg.with_updates(match={"min_confidence": 0.0})
    cloud_p, cloud_q, _ = generate_pair(SyntheticPairSpec(n=1024, overlap=0.7), seed)
    base = match_pair(cloud_p, cloud_q, weights, cfg)
    ref = base.descriptors()
    rng = np.random.default_rng(seed + 1)
    worst, mismatched = 0.0, 0
    for _ in range(n_transforms):
        moved = match_pair(cloud_p.transformed(random_transform(rng)),
                           cloud_q.transformed(random_transform(rng)), weights, cfg)
        out = moved.descriptors()
        worst = max(worst, max(rel_dev(out[k], ref[k]) for k in ref))
        mismatched += len(base.correspondences.index_set() ^ moved.correspondences.index_set())
    return [_check("rotation invariance: descriptors", worst, 1e-6),
            _check(f"rotation invariance: index set ({len(base.correspondences)} pairs)", mismatched, 0)]


def check_oracles(seed: int = 0, trials: int = 5) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    fps_bad = knn_bad = node_bad = 0
    knn_dist = dual = 0.0
    for _ in range(trials):
        pts = rng.standard_normal((int(rng.integers(20, 60)), 3))
        m = int(rng.integers(1, len(pts)))
        fps_bad += int(farthest_point_sample(pts, m).tolist() != oracles.fps(pts, m))
        q = rng.standard_normal((15, 3))
        k = int(rng.integers(1, 8))
        nb = knn(q, pts, k)
        idx, dist = oracles.knn(q, pts, k)
        knn_bad += int(nb.indices.tolist() != idx)
        knn_dist = max(knn_dist, rel_dev(nb.distances, dist))
        nodes = pts[:m]
        node_bad += int(point_to_node(q, nodes).tolist() != oracles.point_to_node(q, nodes))
        s = rng.random((int(rng.integers(2, 12)), int(rng.integers(2, 12)))) + 1e-3
        dual = max(dual, rel_dev(dual_normalize(s), oracles.dual_normalize(s)))
    return [_check("FPS vs brute force (mismatches)", fps_bad, 0),
            _check("knn vs brute force (mismatches)", knn_bad, 0),
            _check("knn distances vs brute force", knn_dist, 1e-9),
            _check("point_to_node vs brute force (mismatches)", node_bad, 0),
            _check("dual_normalize vs loops", dual, 1e-9)]


def check_sinkhorn(seed: int = 0, trials: int = 10) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    marg = agree = 0.0
    for _ in range(trials):
        s = rng.standard_normal((8, 8))
        p100 = sinkhorn(s, 1.0, 100)
        marg = max(marg, np.max(np.abs(p100[:-1].sum(axis=1) - 1.0)),
                   np.max(np.abs(p100[:, :-1].sum(axis=0) - 1.0)))
        agree = max(agree, float(np.max(np.abs(p100 - sinkhorn(s, 1.0, 1000)))))
    return [_check("Sinkhorn marginals (8x8, 100 iters)", marg, 1e-6),
            _check("Sinkhorn 100 vs 1000 iters", agree, 1e-6)]


def check_registration(seed: int = 0, trials: int = 5) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    k_rot = k_t = r_rot = r_t = 0.0
    for _ in range(trials):
        T = random_transform(rng)
        src = rng.standard_normal((100, 3))
        dst = T.apply(src)
        est = kabsch(src, dst)
        k_rot = max(k_rot, rotation_error(est.R, T.R))
        k_t = max(k_t, float(np.linalg.norm(est.t - T.t)))
        corr = CorrespondenceSet(np.arange(100), np.arange(100), np.ones(100))
        est, _ = ransac_registration(corr, src, dst, 0.1, 1000, seed=int(rng.integers(1 << 31)))
        r_rot = max(r_rot, rotation_error(est.R, T.R))
        r_t = max(r_t, float(np.linalg.norm(est.t - T.t)))
    return [_check("Kabsch rotation error (rad)", k_rot, 1e-6),
            _check("Kabsch translation error (m)", k_t, 1e-6),
            _check("RANSAC rotation error (rad)", r_rot, 1e-6),
            _check("RANSAC translation error (m)", r_t, 1e-6)]


def check_reductions(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    cfg = PipelineConfig()
    w = init_random_weights(cfg, seed).scope("global.block1.gsm")
    w["W_E"] = np.zeros_like(w["W_E"])
    w["W_G"] = np.zeros_like(w["W_G"])
    sp = _random_cloud(rng, 16).with_features(rng.standard_normal((16, cfg.c_prime)))
    ctx = gsm(sp, w, cfg.sigma_d, cfg.sigma_a, cfg.ln_eps).context
    gsm_dev = rel_dev(ctx, oracles.standard_self_attention(sp.features, w, cfg.ln_eps))

    pw = init_random_weights(cfg, seed).scope("enc.block1.pal1.pam")
    cloud = _random_cloud(rng, 50).with_features(rng.standard_normal((50, 64)))
    out = pam(cloud.points, cloud.normals, cloud, pw, 1)
    # one key: softmax weight is exactly 1 and the self PPF is zero, so m = x_s W_V
    x_s = cloud.features @ pw["W_context"]
    closed = layer_norm(x_s + (x_s @ pw["W_V"]) @ pw["W_msg"], pw["ln_gain"], pw["ln_bias"]) @ pw["W_out"]
    return [_check("GSM (W_E = W_G = 0) vs standard attention", gsm_dev, 1e-9),
            _check("PAM k=1 vs closed form", float(np.max(np.abs(out - closed))), 0.0)]


def check_weights_roundtrip(weights: ModelWeights, cfg: PipelineConfig) -> list[CheckResult]:
    cloud_p, cloud_q, _ = generate_pair(SyntheticPairSpec(n=1024), 7)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "w.bin"
        save_weights(weights, path)
        loaded = load_weights(path, cfg)
    a = match_pair(cloud_p, cloud_q, weights, cfg).descriptors()
    b = match_pair(cloud_p, cloud_q, loaded, cfg).descriptors()
    return [_check("weights save/load forward output", max(rel_dev(b[k], a[k]) for k in a), 1e-6)]


def run_selftest(weights: ModelWeights | None = None, cfg: PipelineConfig | None = None,
                 seed: int = 0) -> list[CheckResult]:
    cfg = cfg or PipelineConfig()
    weights = weights if weights is not None else init_random_weights(cfg, seed)
    results = []
    results += check_invariance(weights, cfg, seed=seed)
    results += check_oracles(seed)
    results += check_sinkhorn(seed)
    results += check_registration(seed)
    results += check_reductions(seed)
    results += check_weights_roundtrip(weights, cfg)
    return results


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'property':<{width}}  {'worst':>11}  {'tolerance':>9}  result"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.worst:>11.3e}  {r.tolerance:>9.1e}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)


def timed_selftest(**kw) -> tuple[list[CheckResult], float]:
    start = time.perf_counter()
    res = run_selftest(**kw)
    return res, time.perf_counter() - start

