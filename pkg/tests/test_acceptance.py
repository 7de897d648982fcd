"""Acceptance criteria, one pass/fail line each.

Every test records a line in ``RESULTS``; conftest prints them in the
terminal summary, and running this file directly prints them too.
"""
import os
import subprocess
import sys
import time

import numpy as np

from ppfmatch import oracles
from ppfmatch.config import LossConfig, PipelineConfig
from ppfmatch.geom import (PointCloudTriplet, RigidTransform, farthest_point_sample, knn, point_to_node,
                           random_transform)
from ppfmatch.global_transformer import gsm
from ppfmatch.linalg import layer_norm
from ppfmatch.losses import circle_loss, point_nll_loss
from ppfmatch.matcher import CorrespondenceSet, dual_normalize, sinkhorn
from ppfmatch.metrics import (GroundTruth, RegistrationCase, feature_matching_recall, inlier_ratio,
                              inlier_ratio_flow, nfmr, ransac_registration, registration_recall,
                              rotation_error)
from ppfmatch.pipeline import match_pair
from ppfmatch.ppftrans import pam, run_decoder, run_encoder
from ppfmatch.selftest import run_selftest
from ppfmatch.synthetic import SyntheticPairSpec, generate_pair
from ppfmatch.weights import init_random_weights

RESULTS: list[str] = []


def record(num: int, title: str, passed: bool, detail: str) -> None:
    RESULTS.append(f"[{'PASS' if passed else 'FAIL'}] criterion {num}: {title}: {detail}")
    print(RESULTS[-1])
    assert passed, RESULTS[-1]


def rel(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)) if b.size else 0.0


def unit(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def test_criterion_1_rotation_invariance():
    # random weights give near-uniform fine assignments, so the confidence floor is lifted to
    # keep the index set non-empty; every other setting is the default
    cfg = PipelineConfig().with_updates(match={"min_confidence": 0.0})
    p, q, _ = generate_pair(SyntheticPairSpec(n=1024, overlap=0.7), 2024)
    rng = np.random.default_rng(77)
    start = time.perf_counter()
    worst, mismatches, sizes = 0.0, 0, []
    for wseed in range(5):
        weights = init_random_weights(cfg, wseed)
        base = match_pair(p, q, weights, cfg)
        ref, ref_set = base.descriptors(), base.correspondences.index_set()
        sizes.append(len(ref_set))
        for _ in range(20):
            moved = match_pair(p.transformed(random_transform(rng, 5.0)),
                               q.transformed(random_transform(rng, 5.0)), weights, cfg)
            out = moved.descriptors()
            worst = max(worst, max(rel(out[k], ref[k]) for k in ref))
            mismatches += len(ref_set ^ moved.correspondences.index_set())
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and mismatches == 0 and min(sizes) > 0 and elapsed < 300
    record(1, "rotation invariance (5 weight seeds x 20 per-frame transforms)", ok,
           f"descriptor rel dev {worst:.2e} (tol 1e-6), index-set mismatches {mismatches} "
           f"(set sizes {min(sizes)}-{max(sizes)}), runtime {elapsed:.1f}s (limit 300s)")


def test_criterion_2_oracles():
    rng = np.random.default_rng(2)
    bad = {name: 0 for name in ("fps", "knn", "point_to_node")}
    dev = {name: 0.0 for name in ("knn dist", "dual_normalize", "circle_loss", "point_nll", "nfmr")}
    trials = 100
    for _ in range(trials):
        pts = rng.standard_normal((int(rng.integers(10, 200)), 3))
        m = int(rng.integers(1, min(len(pts), 40)))
        bad["fps"] += farthest_point_sample(pts, m).tolist() != oracles.fps(pts, m)

        queries = rng.standard_normal((int(rng.integers(1, 40)), 3))
        support = pts[:min(len(pts), 120)]
        k = int(rng.integers(1, min(len(support), 16) + 1))
        nb = knn(queries, support, k)
        idx, dist = oracles.knn(queries, support, k)
        bad["knn"] += nb.indices.tolist() != idx
        dev["knn dist"] = max(dev["knn dist"], rel(nb.distances, dist))
        bad["point_to_node"] += point_to_node(pts, pts[:m]).tolist() != oracles.point_to_node(pts, pts[:m])

        s = rng.random((int(rng.integers(1, 60)), int(rng.integers(1, 60)))) + 1e-3
        mode = "product" if rng.random() < 0.5 else "sequential"
        dev["dual_normalize"] = max(dev["dual_normalize"], rel(dual_normalize(s, mode), oracles.dual_normalize(s, mode)))

        n1, n2, c = int(rng.integers(1, 30)), int(rng.integers(1, 30)), int(rng.integers(2, 16))
        x, y = unit(rng.standard_normal((n1, c))), unit(rng.standard_normal((n2, c)))
        ov = np.where(rng.random((n1, n2)) < 0.4, 0.0, rng.random((n1, n2)))
        ov_q = np.where(rng.random((n2, n1)) < 0.4, 0.0, rng.random((n2, n1)))
        got = circle_loss(x, y, ov, LossConfig(), ov_q)
        dev["circle_loss"] = max(dev["circle_loss"], rel(got, oracles.circle_loss(x, y, ov, overlap_q=ov_q)))

        a = rng.random((n1 + 1, n2 + 1)) + 1e-3
        perm_p, perm_q = rng.permutation(n1), rng.permutation(n2)
        n_gt = int(rng.integers(0, min(n1, n2) + 1))
        gt = list(zip(perm_p[:n_gt].tolist(), perm_q[:n_gt].tolist()))
        up, uq = perm_p[n_gt:].tolist(), perm_q[n_gt:].tolist()
        dev["point_nll"] = max(dev["point_nll"], rel(point_nll_loss(a, gt, up, uq), oracles.point_nll(a, gt, up, uq)))

        n = int(rng.integers(5, 200))
        src = rng.standard_normal((n, 3))
        flow = 0.03 * rng.standard_normal((n, 3))
        tgt = src + flow
        gt_pairs = np.c_[np.arange(n), np.arange(n)][rng.random(n) < 0.5]
        if len(gt_pairs) == 0:
            gt_pairs = np.array([[0, 0]])
        u = rng.integers(0, n, int(rng.integers(1, 40)))
        v = np.where(rng.random(len(u)) < 0.6, u, rng.integers(0, n, len(u)))
        corr = CorrespondenceSet(u, v, np.ones(len(u)))
        dev["nfmr"] = max(dev["nfmr"], abs(nfmr(corr, gt_pairs, src, tgt, flow) -
                                           oracles.nfmr(u, v, gt_pairs, src, tgt, flow)))
    ok = all(v == 0 for v in bad.values()) and all(v <= 1e-9 for v in dev.values())
    detail = ", ".join([f"{k} mismatches {v}" for k, v in bad.items()] +
                       [f"{k} {v:.1e}" for k, v in dev.items()])
    record(2, f"oracle equivalence ({trials} instances each)", ok, detail + " (tol 1e-9 / exact)")


def test_criterion_3_sinkhorn():
    rng = np.random.default_rng(3)
    marg = agree = 0.0
    for _ in range(100):
        s = rng.standard_normal((8, 8))
        p100 = sinkhorn(s, 1.0, 100)
        marg = max(marg, float(np.max(np.abs(p100[:-1].sum(axis=1) - 1))),
                   float(np.max(np.abs(p100[:, :-1].sum(axis=0) - 1))))
        agree = max(agree, float(np.max(np.abs(p100 - sinkhorn(s, 1.0, 1000)))))
    record(3, "Sinkhorn on 100 random 8x8 matrices", marg <= 1e-6 and agree <= 1e-6,
           f"marginal error {marg:.1e}, 100 vs 1000 iterations {agree:.1e} (tol 1e-6)")


def test_criterion_4_registration():
    p, q, truth = generate_pair(SyntheticPairSpec(n=1024, overlap=0.8), 4)
    gt = truth.correspondences
    T_true = truth.transform
    exact = CorrespondenceSet(gt[:, 0], gt[:, 1], np.ones(len(gt)))
    T, _ = ransac_registration(exact, p.points, q.points, 0.1, 1000, seed=0)
    rot0, tr0 = rotation_error(T.R, T_true.R), float(np.linalg.norm(T.t - T_true.t))

    recovered = 0
    for trial in range(100):
        rng = np.random.default_rng(1000 + trial)
        pick = rng.choice(len(gt), 300, replace=False)
        u, v = gt[pick, 0].copy(), gt[pick, 1].copy()
        bad = rng.choice(300, 210, replace=False)             # 70% outliers
        v[bad] = (v[bad] + rng.integers(1, len(q), 210)) % len(q)
        corr = CorrespondenceSet(u, v, np.ones(300))
        # a tight gate keeps accidental near-hits among the outliers out of the refit
        T, _ = ransac_registration(corr, p.points, q.points, 0.01, 1000, seed=trial)
        err = max(rotation_error(T.R, T_true.R), float(np.linalg.norm(T.t - T_true.t)))
        recovered += err <= 1e-3
    ok = rot0 < 1e-6 and tr0 < 1e-6 and recovered >= 99
    record(4, "registration recovery", ok,
           f"noise-free rotation {rot0:.1e} rad, translation {tr0:.1e} m (tol 1e-6); "
           f"70% outliers: {recovered}/100 within 1e-3 (need 99)")


def test_criterion_5_shapes():
    cfg = PipelineConfig()
    weights = init_random_weights(cfg, 0)
    p, _, _ = generate_pair(SyntheticPairSpec(n=1024), 5)
    enc = run_encoder(p, weights, cfg)
    dec = run_decoder(enc.superpoints, enc.levels, weights, cfg)
    sp, dp = enc.superpoints.features.shape, dec.features.shape
    record(5, "architecture shape audit (n=1024, default config)", sp == (16, 256) and dp == (1024, 64),
           f"superpoints {sp[0]}x{sp[1]} (want 16x256), decoded {dp[0]}x{dp[1]} (want 1024x64)")


def test_criterion_6_reductions():
    cfg = PipelineConfig()
    rng = np.random.default_rng(6)
    gsm_dev = pam_dev = 0.0
    for seed in range(5):
        weights = init_random_weights(cfg, seed)
        w = weights.scope("global.block1.gsm")
        w["W_E"] = np.zeros_like(w["W_E"])
        w["W_G"] = np.zeros_like(w["W_G"])
        x = rng.standard_normal((16, 256))
        sp = PointCloudTriplet(rng.standard_normal((16, 3)), unit(rng.standard_normal((16, 3))), x)
        gsm_dev = max(gsm_dev, rel(gsm(sp, w, cfg.sigma_d, cfg.sigma_a, cfg.ln_eps).context,
                                   oracles.standard_self_attention(x, w, cfg.ln_eps)))
        pw = weights.scope("enc.block2.pal1.pam")
        cloud = PointCloudTriplet(rng.standard_normal((64, 3)), unit(rng.standard_normal((64, 3))),
                                  rng.standard_normal((64, 128)))
        out = pam(cloud.points, cloud.normals, cloud, pw, 1)
        x_s = cloud.features @ pw["W_context"]
        closed = layer_norm(x_s + (x_s @ pw["W_V"]) @ pw["W_msg"], pw["ln_gain"], pw["ln_bias"]) @ pw["W_out"]
        pam_dev = max(pam_dev, float(np.max(np.abs(out - closed))))
    record(6, "reduction oracles", gsm_dev <= 1e-9 and pam_dev == 0.0,
           f"GSM (W_E = W_G = 0) vs standard attention {gsm_dev:.1e} (tol 1e-9); "
           f"PAM k=1 vs closed form {pam_dev:.1e} (exact)")


def test_criterion_7_metric_fixtures():
    ident = RigidTransform(np.eye(3), np.zeros(3))
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float)
    checks = []
    # IR: 3 of 4 pairs land within 0.1 after the true transform
    corr = CorrespondenceSet([0, 1, 2, 3], [0, 1, 2, 0], np.ones(4))
    checks.append(("IR", inlier_ratio(corr, pts, pts, ident, 0.1), 0.75))
    shift = RigidTransform(np.eye(3), np.array([0.0, 0.0, 0.05]))
    checks.append(("IR shifted", inlier_ratio(corr, pts, pts + [0, 0, 0.05], shift, 0.1), 0.75))
    flow = np.zeros((4, 3))
    flow[3] = [0.0, 1.0, -1.0]
    corr_flow = CorrespondenceSet([0, 3], [0, 2], np.ones(2))
    checks.append(("IR flow", inlier_ratio_flow(corr_flow, pts, pts, flow, 0.04), 1.0))
    # FMR: ratios above 0.05 strictly
    checks.append(("FMR", feature_matching_recall([0.0, 0.05, 0.051, 0.9]), 0.5))
    # RR: a 0.3 m translation error fails tau3 = 0.2, an exact estimate passes
    gt_pairs = np.c_[np.arange(4), np.arange(4)]
    truth = GroundTruth(gt_pairs, ident)
    off = RigidTransform(np.eye(3), np.array([0.3, 0.0, 0.0]))
    cases = [RegistrationCase(ident, truth, pts, pts), RegistrationCase(off, truth, pts, pts),
             RegistrationCase(ident, truth, pts, pts, 2)]
    checks.append(("RR", registration_recall(cases, 0.2), 2 / 3))
    checks.append(("RR literal", registration_recall([RegistrationCase(off, truth, pts, pts, 2)], 0.2, True), 1.0))
    # NFMR: constant flow 0.1 in x, one putative pair is wrong by 1 m
    src = np.array([[0, 0, 0], [10, 0, 0], [20, 0, 0], [30, 0, 0]], float)
    const = np.tile([0.1, 0.0, 0.0], (4, 1))
    tgt = src + const
    good = CorrespondenceSet([0, 1, 2, 3], [0, 1, 2, 3], np.ones(4))
    checks.append(("NFMR exact", nfmr(good, gt_pairs, src, tgt, const), 1.0))
    tgt_bad = tgt.copy()
    tgt_bad[3] += [0.0, 1.0, 0.0]
    checks.append(("NFMR one wrong", nfmr(good, gt_pairs, src, tgt_bad, const, k=1), 0.75))
    worst = max(abs(got - want) for _, got, want in checks)
    record(7, "metric fixtures", worst <= 1e-12,
           f"{len(checks)} hand-computed values ({', '.join(n for n, _, _ in checks)}), worst error {worst:.1e} (tol 1e-12)")


def test_criterion_8_cli(tmp_path):
    env_cmd = [sys.executable, "-m", "ppfmatch"]
    subprocess.run(env_cmd + ["gen", "--output", str(tmp_path), "--n", "1024", "--seed", "8"],
                   check=True, capture_output=True)
    threads = {"OMP_NUM_THREADS": "1", "OPENBLAS_NUM_THREADS": "1", "MKL_NUM_THREADS": "1"}
    env = {**os.environ, **threads}
    start = time.perf_counter()
    run = subprocess.run(env_cmd + ["match", str(tmp_path / "src.xyz"), str(tmp_path / "tgt.xyz"),
                                    "--output", str(tmp_path / "corr.txt")], capture_output=True, text=True, env=env)
    elapsed = time.perf_counter() - start
    results = run_selftest()
    failed = [r.name for r in results if not r.passed]
    # exit 2 means the run finished with an empty set under the default confidence floor
    ok = run.returncode in (0, 2) and elapsed < 10 and not failed
    record(8, "desk-scale end to end", ok,
           f"cli match on 1024 points, single-threaded: {elapsed:.2f}s (limit 10s, exit {run.returncode}); "
           f"selftest {len(results) - len(failed)}/{len(results)} checks green")


if __name__ == "__main__":
    import pathlib
    import tempfile
    for name, fn in list(globals().items()):
        if name.startswith("test_criterion"):
            try:
                if "tmp_path" in fn.__code__.co_varnames[:fn.__code__.co_argcount]:
                    with tempfile.TemporaryDirectory() as tmp:
                        fn(pathlib.Path(tmp))
                else:
                    fn()
            except AssertionError:
                pass
