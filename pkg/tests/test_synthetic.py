import numpy as np
import pytest
from pydantic import ValidationError

from ppfmatch.synthetic import SmoothFlow, SyntheticPairSpec, generate_pair, sample_surface


def test_deterministic_per_seed():
    a = generate_pair(SyntheticPairSpec(n=256, overlap=0.6), 4)
    b = generate_pair(SyntheticPairSpec(n=256, overlap=0.6), 4)
    c = generate_pair(SyntheticPairSpec(n=256, overlap=0.6), 5)
    assert np.array_equal(a[1].points, b[1].points)
    assert not np.array_equal(a[1].points, c[1].points)


def test_identity_full_overlap_reproduces_source():
    p, q, truth = generate_pair(SyntheticPairSpec(n=128, rotation="identity", max_translation=0.0), 0)
    assert np.array_equal(p.points, q.points) and np.allclose(p.normals, q.normals, atol=1e-15)
    assert truth.correspondences.tolist() == [[i, i] for i in range(128)]


def test_rigid_ground_truth_is_exact():
    p, q, truth = generate_pair(SyntheticPairSpec(n=300, overlap=0.5), 9)
    gt = truth.correspondences
    assert len(gt) == 150 and len(q) == 300
    moved = truth.transform.apply(p.points[gt[:, 0]])
    assert np.max(np.abs(moved - q.points[gt[:, 1]])) <= 1e-12
    assert np.max(np.abs(truth.transform.rotate(p.normals[gt[:, 0]]) - q.normals[gt[:, 1]])) <= 1e-12
    assert truth.meta["mode"] == "rigid"


def test_nonrigid_flow_consistency():
    p, q, truth = generate_pair(SyntheticPairSpec(n=200, deformation=0.05), 2)
    assert truth.transform is None and truth.meta["mode"] == "nonrigid"
    gt = truth.correspondences
    assert np.max(np.abs(p.points[gt[:, 0]] + truth.flow[gt[:, 0]] - q.points[gt[:, 1]])) <= 1e-12
    assert np.allclose(np.linalg.norm(q.normals, axis=1), 1.0)


def test_noise_perturbs_target_only():
    clean = generate_pair(SyntheticPairSpec(n=64, rotation="identity", max_translation=0), 1)
    noisy = generate_pair(SyntheticPairSpec(n=64, rotation="identity", max_translation=0, noise=0.01), 1)
    assert np.array_equal(clean[0].points, noisy[0].points)
    dev = np.linalg.norm(clean[1].points - noisy[1].points, axis=1)
    assert 0 < dev.mean() < 0.05


@pytest.mark.parametrize("shape", ["sphere", "box", "composite"])
def test_surfaces_have_unit_normals(shape, rng):
    pts, nrm = sample_surface(shape, 500, rng)
    assert pts.shape == nrm.shape == (500, 3)
    assert np.allclose(np.linalg.norm(nrm, axis=1), 1.0)
    if shape == "sphere":
        assert np.allclose(pts, nrm)


def test_flow_normals_follow_the_deformation(rng):
    # a tangent vector of the original surface stays orthogonal to the deformed normal
    flow = SmoothFlow(rng, 0.1)
    p, n = sample_surface("sphere", 50, rng)
    tangent = np.cross(n, rng.standard_normal((50, 3)))
    h = 1e-6
    pushed = (p + h * tangent + flow(p + h * tangent) - p - flow(p)) / h
    assert np.max(np.abs(np.sum(pushed * flow.deform_normals(p, n), axis=1))) < 1e-5


def test_spec_validation():
    with pytest.raises(ValidationError):
        SyntheticPairSpec(n=2)
    with pytest.raises(ValidationError):
        SyntheticPairSpec(overlap=0.0)
    with pytest.raises(ValidationError):
        SyntheticPairSpec(colour="red")
