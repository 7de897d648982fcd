"""Evaluation metrics and rigid registration from correspondences."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from ppfmatch.errors import DegenerateGeometryError
from ppfmatch.geom import RigidTransform, idw_weights, knn
from ppfmatch.matcher import CorrespondenceSet


@dataclass(frozen=True)
class GroundTruth:
    """Either a rigid transform or a per-point flow, plus ground-truth index pairs."""

    correspondences: np.ndarray            # (k, 2) int
    transform: RigidTransform | None = None
    flow: np.ndarray | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if (self.transform is None) == (self.flow is None):
            raise ValueError("GroundTruth needs exactly one of transform or flow")
        corr = np.asarray(self.correspondences, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "correspondences", corr)
        if self.flow is not None:
            object.__setattr__(self, "flow", np.asarray(self.flow, dtype=np.float64))


def inlier_ratio(corr: CorrespondenceSet, src_points, tgt_points, T: RigidTransform, tau1: float) -> float:
    if len(corr) == 0:
        warnings.warn("inlier_ratio of an empty correspondence set is defined as 0", RuntimeWarning)
        return 0.0
    src = T.apply(np.asarray(src_points)[corr.src])
    err = np.linalg.norm(src - np.asarray(tgt_points)[corr.tgt], axis=1)
    return float(np.mean(err < tau1))


def inlier_ratio_flow(corr: CorrespondenceSet, src_points, tgt_points, flow, tau1: float) -> float:
    """Inlier ratio when the ground truth is a per-point flow instead of a transform."""
    if len(corr) == 0:
        warnings.warn("inlier_ratio of an empty correspondence set is defined as 0", RuntimeWarning)
        return 0.0
    src = np.asarray(src_points)[corr.src] + np.asarray(flow)[corr.src]
    err = np.linalg.norm(src - np.asarray(tgt_points)[corr.tgt], axis=1)
    return float(np.mean(err < tau1))


def feature_matching_recall(inlier_ratios, tau2: float = 0.05) -> float:
    irs = np.asarray(list(inlier_ratios), dtype=np.float64)
    if irs.size == 0:
        raise ValueError("feature_matching_recall needs at least one pair")
    return float(np.mean(irs > tau2))


def kabsch(src, dst, weights=None) -> RigidTransform:
    """Weighted least-squares rigid transform mapping ``src`` onto ``dst``."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    w = np.ones(src.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
    if src.shape != dst.shape or src.shape[0] < 3 or w.shape != (src.shape[0],):
        raise ValueError("kabsch needs matching k x 3 arrays with k >= 3")
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("kabsch weights must be non-negative with positive sum")
    w = w / w.sum()
    mu_s = w @ src
    mu_d = w @ dst
    xs = src - mu_s
    xd = dst - mu_d
    sv = np.linalg.svd(np.sqrt(w)[:, None] * xs, compute_uv=False)
    if sv[1] <= 1e-12 * max(sv[0], 1e-300):
        raise DegenerateGeometryError("kabsch: weighted points are collinear or coincident")
    H = xs.T @ (w[:, None] * xd)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d if d != 0 else 1.0]) @ U.T
    return RigidTransform(R, mu_d - R @ mu_s)


def rotation_error(R_est, R_true) -> float:
    """Geodesic angle (radians) between two rotations, accurate near zero."""
    D = np.asarray(R_est, dtype=np.float64).T @ np.asarray(R_true, dtype=np.float64)
    axis = np.array([D[2, 1] - D[1, 2], D[0, 2] - D[2, 0], D[1, 0] - D[0, 1]])
    return float(np.arctan2(0.5 * np.linalg.norm(axis), 0.5 * (np.trace(D) - 1.0)))


def _batched_kabsch(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unweighted Kabsch over a batch of (b, 3, 3) samples; also flags degenerate samples."""
    mu_s = src.mean(axis=1, keepdims=True)
    mu_d = dst.mean(axis=1, keepdims=True)
    xs, xd = src - mu_s, dst - mu_d
    sv = np.linalg.svd(xs, compute_uv=False)
    ok = sv[:, 1] > 1e-9 * np.maximum(sv[:, 0], 1e-300)
    U, _, Vt = np.linalg.svd(np.einsum("bki,bkj->bij", xs, xd))
    V = np.swapaxes(Vt, 1, 2)
    d = np.sign(np.linalg.det(V @ np.swapaxes(U, 1, 2)))
    d[d == 0] = 1.0
    D = np.zeros((len(d), 3, 3))
    D[:, 0, 0] = 1.0
    D[:, 1, 1] = 1.0
    D[:, 2, 2] = d
    R = V @ D @ np.swapaxes(U, 1, 2)
    t = mu_d[:, 0, :] - np.einsum("bij,bj->bi", R, mu_s[:, 0, :])
    return R, t, ok


def ransac_registration(corr: CorrespondenceSet, src_points, tgt_points, inlier_dist: float = 0.1,
                        max_iters: int = 50_000, seed: int = 0, batch: int = 1000,
                        confidence: float = 0.999999) -> tuple[RigidTransform, np.ndarray]:
    """Three-point RANSAC with a Kabsch refit on the best consensus set.

    Hypotheses are drawn from a generator seeded with ``seed``; sampling stops
    early once the best consensus makes further improvement unlikely at the
    given ``confidence``. Returns the transform and the inlier mask over ``corr``.
    """
    if len(corr) < 3:
        raise ValueError("ransac_registration needs at least 3 correspondences")
    src = np.asarray(src_points, dtype=np.float64)[corr.src]
    dst = np.asarray(tgt_points, dtype=np.float64)[corr.tgt]
    k = src.shape[0]
    rng = np.random.default_rng(seed)
    batch = max(1, min(batch, 4_000_000 // k))
    sq_const = np.sum(src * src, axis=1) + np.sum(dst * dst, axis=1)
    outer = np.einsum("ki,kj->kij", dst, src).reshape(k, 9)
    best_count, best_R, best_t = -1, None, None
    done = 0
    needed = max_iters
    while done < min(max_iters, needed):
        b = min(batch, max_iters - done)
        # three distinct indices per hypothesis
        samples = np.argsort(rng.random((b, k)), axis=1)[:, :3] if k <= 64 else _distinct_triples(rng, b, k)
        R, t, ok = _batched_kabsch(src[samples], dst[samples])
        counts = _consensus(R, t, src, dst, sq_const, outer, inlier_dist)
        counts[~ok] = -1
        top = int(np.argmax(counts))
        if counts[top] > best_count:
            best_count, best_R, best_t = int(counts[top]), R[top], t[top]
            ratio = best_count / k
            fail = 1.0 - ratio ** 3
            if fail <= 0:
                needed = 0
            elif fail < 1:
                needed = int(np.ceil(np.log(1 - confidence) / np.log(fail)))
        done += b
    if best_count < 3:
        raise DegenerateGeometryError("ransac_registration: no hypothesis with at least 3 inliers")
    mask = np.linalg.norm(src @ best_R.T + best_t - dst, axis=1) < inlier_dist
    T = kabsch(src[mask], dst[mask])
    refit_mask = np.linalg.norm(T.apply(src) - dst, axis=1) < inlier_dist
    if refit_mask.sum() >= mask.sum():
        mask = refit_mask
    return T, mask


def _consensus(R, t, src, dst, sq_const, outer, inlier_dist) -> np.ndarray:
    """Inlier count per hypothesis via the expansion of |R s + t - d|^2 into matrix products."""
    # |s|^2 + |d|^2 + |t|^2 + 2 s.(R^T t) - 2 d.t - 2 <d s^T, R>
    rt = np.einsum("bij,bi->bj", R, t)
    sq = (sq_const[:, None] + np.sum(t * t, axis=1)[None, :] + 2.0 * (src @ rt.T)
          - 2.0 * (dst @ t.T) - 2.0 * (outer @ R.reshape(-1, 9).T))
    return np.count_nonzero(sq < inlier_dist * inlier_dist, axis=0)


def _distinct_triples(rng: np.random.Generator, b: int, k: int) -> np.ndarray:
    out = rng.integers(0, k, size=(b, 3))
    while True:
        bad = (out[:, 0] == out[:, 1]) | (out[:, 0] == out[:, 2]) | (out[:, 1] == out[:, 2])
        if not bad.any():
            return out
        out[bad] = rng.integers(0, k, size=(int(bad.sum()), 3))


def rmse_correspondences(T: RigidTransform, src_points, tgt_points, gt_pairs) -> float:
    gt = np.asarray(gt_pairs, dtype=np.int64).reshape(-1, 2)
    diff = T.apply(np.asarray(src_points)[gt[:, 0]]) - np.asarray(tgt_points)[gt[:, 1]]
    return float(np.sqrt(np.mean(np.sum(diff * diff, axis=1))))


def rmse_transform(T: RigidTransform, T_true: RigidTransform, points, literal: bool = False) -> float:
    """RMS displacement between two transforms over ``points``.

    ``literal=True`` evaluates ``sqrt(sum) / n`` instead of ``sqrt(sum / n)``.
    """
    points = np.asarray(points, dtype=np.float64)
    diff = T.apply(points) - T_true.apply(points)
    total = np.sum(diff * diff)
    n = points.shape[0]
    return float(np.sqrt(total) / n) if literal else float(np.sqrt(total / n))


@dataclass(frozen=True)
class RegistrationCase:
    estimate: RigidTransform
    truth: GroundTruth
    src_points: np.ndarray
    tgt_points: np.ndarray | None = None
    variant: Literal[1, 2] = 1


def case_rmse(case: RegistrationCase, literal: bool = False) -> float:
    if case.variant == 1:
        return rmse_correspondences(case.estimate, case.src_points, case.tgt_points,
                                    case.truth.correspondences)
    if case.truth.transform is None:
        raise ValueError("RMSE variant 2 needs a rigid ground-truth transform")
    return rmse_transform(case.estimate, case.truth.transform, case.src_points, literal)


def registration_recall(cases, tau3: float = 0.2, literal: bool = False) -> float:
    rmses = [case_rmse(c, literal) for c in cases]
    if not rmses:
        raise ValueError("registration_recall needs at least one pair")
    return float(np.mean(np.asarray(rmses) < tau3))


def interpolate_flow(query_points, putative_src, putative_flow, k: int = 3) -> np.ndarray:
    k = min(k, putative_src.shape[0])
    nb = knn(query_points, putative_src, k)
    w = idw_weights(nb.distances)
    return np.einsum("ik,ikc->ic", w, putative_flow[nb.indices])


def nfmr(corr: CorrespondenceSet, gt_pairs, src_points, tgt_points, flow, tau4: float = 0.04,
         k: int = 3) -> float:
    """Share of ground-truth pairs whose interpolated putative flow is within ``tau4``.

    ``flow[i]`` is the true displacement of source point ``i``.
    """
    gt = np.asarray(gt_pairs, dtype=np.int64).reshape(-1, 2)
    if gt.shape[0] == 0:
        raise ValueError("nfmr needs at least one ground-truth pair")
    if len(corr) == 0:
        warnings.warn("nfmr of an empty correspondence set is defined as 0", RuntimeWarning)
        return 0.0
    src_points = np.asarray(src_points, dtype=np.float64)
    tgt_points = np.asarray(tgt_points, dtype=np.float64)
    pairs = np.unique(np.stack([corr.src, corr.tgt], axis=1), axis=0)
    put_src = src_points[pairs[:, 0]]
    put_flow = tgt_points[pairs[:, 1]] - put_src
    est = interpolate_flow(src_points[gt[:, 0]], put_src, put_flow, k)
    true = np.asarray(flow, dtype=np.float64)[gt[:, 0]]
    return float(np.mean(np.linalg.norm(est - true, axis=1) < tau4))
