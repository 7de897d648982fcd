import math

import numpy as np
import pytest

from ppfmatch import oracles
from ppfmatch.errors import DegenerateGeometryError
from ppfmatch.geom import RigidTransform, random_rotation, random_transform
from ppfmatch.matcher import CorrespondenceSet
from ppfmatch.metrics import (GroundTruth, RegistrationCase, feature_matching_recall, inlier_ratio,
                              inlier_ratio_flow, kabsch, nfmr, ransac_registration, registration_recall,
                              rmse_correspondences, rmse_transform, rotation_error)

IDENTITY = RigidTransform(np.eye(3), np.zeros(3))


def _corr(src, tgt):
    return CorrespondenceSet(src, tgt, np.ones(len(src)))


def test_ground_truth_needs_one_kind():
    with pytest.raises(ValueError):
        GroundTruth(np.zeros((0, 2)))
    with pytest.raises(ValueError):
        GroundTruth(np.zeros((0, 2)), IDENTITY, np.zeros((1, 3)))


def test_inlier_ratio_cases():
    pts = np.eye(3)
    assert inlier_ratio(_corr([0, 1], [0, 1]), pts, pts, IDENTITY, 0.1) == 1.0
    assert inlier_ratio(_corr([0, 1], [0, 2]), pts, pts, IDENTITY, 0.1) == 0.5
    with pytest.warns(RuntimeWarning):
        assert inlier_ratio(CorrespondenceSet.empty(), pts, pts, IDENTITY, 0.1) == 0.0
    flow = np.array([[-1.0, 1.0, 0.0], [0, 0, 0], [0, 0, 0]])
    assert inlier_ratio_flow(_corr([0, 1], [1, 1]), pts, pts, flow, 0.01) == 1.0


def test_feature_matching_recall_is_strict():
    assert feature_matching_recall([0.05, 0.06, 0.5, 0.0]) == 0.5
    assert feature_matching_recall([1.0]) == 1.0
    with pytest.raises(ValueError):
        feature_matching_recall([])


def test_kabsch_identity_recovery_and_reflection(rng):
    pts = rng.standard_normal((20, 3))
    T = kabsch(pts, pts)
    assert np.allclose(T.R, np.eye(3), atol=1e-12) and np.allclose(T.t, 0, atol=1e-12)
    truth = random_transform(rng)
    est = kabsch(pts, truth.apply(pts))
    assert np.max(np.abs(est.R - truth.R)) <= 1e-12 and np.max(np.abs(est.t - truth.t)) <= 1e-12
    # a mirrored target still yields a proper rotation
    mirrored = pts * [1, 1, -1]
    assert np.linalg.det(kabsch(pts, mirrored).R) == pytest.approx(1.0)


def test_rotation_error():
    R = random_rotation(np.random.default_rng(3))
    assert rotation_error(R, R) <= 1e-7
    Rz = np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]])
    assert rotation_error(Rz, np.eye(3)) == pytest.approx(math.pi / 2, abs=1e-15)


def test_ransac_noise_free_and_deterministic(rng):
    truth = random_transform(rng)
    src = rng.standard_normal((50, 3))
    tgt = truth.apply(src)
    corr = _corr(range(50), range(50))
    T, mask = ransac_registration(corr, src, tgt, 0.05, 200, seed=1)
    assert mask.all()
    assert np.max(np.abs(T.as_matrix() - truth.as_matrix())) <= 1e-6
    T2, mask2 = ransac_registration(corr, src, tgt, 0.05, 200, seed=1)
    assert np.array_equal(T.as_matrix(), T2.as_matrix()) and np.array_equal(mask, mask2)


def test_ransac_minimal_and_degenerate(rng):
    truth = random_transform(rng)
    src = rng.standard_normal((3, 3))
    T, mask = ransac_registration(_corr([0, 1, 2], [0, 1, 2]), src, truth.apply(src), 0.05, 10)
    assert mask.sum() == 3 and np.allclose(T.R, truth.R, atol=1e-9)
    with pytest.raises(ValueError):
        ransac_registration(_corr([0, 1], [0, 1]), src, src, 0.05, 10)
    line = np.c_[np.arange(5.0), np.zeros(5), np.zeros(5)]
    far = line + [0, 0, 100]
    with pytest.raises(DegenerateGeometryError):
        ransac_registration(_corr(range(5), range(5)), line, far[::-1] * [1, 3, 1], 0.01, 50)


def test_ransac_with_outliers(rng):
    truth = random_transform(rng)
    src = rng.uniform(-1, 1, (200, 3))
    tgt = truth.apply(src)
    bad = rng.choice(200, 140, replace=False)
    tgt[bad] = rng.uniform(-3, 3, (140, 3))
    T, mask = ransac_registration(_corr(range(200), range(200)), src, tgt, 0.01, 1000, seed=0)
    assert np.max(np.abs(T.as_matrix() - truth.as_matrix())) <= 1e-3
    assert mask.sum() >= 60


def test_rmse_variants():
    pts = np.random.default_rng(0).standard_normal((9, 3))
    shifted = RigidTransform(np.eye(3), np.array([0.3, 0.0, 0.0]))
    assert rmse_transform(shifted, IDENTITY, pts) == pytest.approx(0.3, abs=1e-12)
    assert rmse_transform(shifted, IDENTITY, pts, literal=True) == pytest.approx(0.1, abs=1e-12)
    gt = np.c_[np.arange(9), np.arange(9)]
    assert rmse_correspondences(shifted, pts, pts, gt) == pytest.approx(0.3, abs=1e-12)
    truth = GroundTruth(gt, IDENTITY)
    cases = [RegistrationCase(shifted, truth, pts, pts), RegistrationCase(IDENTITY, truth, pts, pts, 2)]
    assert registration_recall(cases) == 0.5
    assert registration_recall(cases, tau3=0.31) == 1.0
    with pytest.raises(ValueError):
        registration_recall([])


def test_nfmr_cases(rng):
    src = rng.standard_normal((30, 3))
    flow = np.tile([0.1, 0.0, 0.0], (30, 1))
    tgt = src + flow
    gt = np.c_[np.arange(30), np.arange(30)]
    corr = _corr([0, 5, 9, 20], [0, 5, 9, 20])
    assert nfmr(corr, gt, src, tgt, flow) == 1.0
    wrong = _corr([0, 5, 9], [1, 6, 10])
    got = nfmr(wrong, gt, src, tgt, flow)
    assert got == oracles.nfmr(wrong.src, wrong.tgt, gt, src, tgt, flow)
    with pytest.warns(RuntimeWarning):
        assert nfmr(CorrespondenceSet.empty(), gt, src, tgt, flow) == 0.0
    with pytest.raises(ValueError):
        nfmr(corr, np.zeros((0, 2)), src, tgt, flow)


def test_nfmr_ignores_duplicates_and_matches_oracle(rng):
    src = rng.standard_normal((40, 3))
    flow = 0.05 * rng.standard_normal((40, 3))
    tgt = src + flow
    gt = np.c_[np.arange(40), np.arange(40)]
    u = rng.integers(0, 40, 15)
    v = np.where(rng.random(15) < 0.6, u, rng.integers(0, 40, 15))
    corr = _corr(u, v)
    dup = _corr(np.r_[u, u], np.r_[v, v])
    assert nfmr(dup, gt, src, tgt, flow) == nfmr(corr, gt, src, tgt, flow)
    assert math.isclose(nfmr(corr, gt, src, tgt, flow), oracles.nfmr(u, v, gt, src, tgt, flow), abs_tol=1e-12)
