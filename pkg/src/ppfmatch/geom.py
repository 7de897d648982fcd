"""Point-cloud primitives: PPF coordinates, sampling, neighbor search."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ppfmatch.errors import DegenerateGeometryError, ShapeError

ZERO_NORM = 1e-12
EXACT_HIT = 1e-12
_CHUNK = 2048


@dataclass(frozen=True)
class PointCloudTriplet:
    """Points, unit normals and per-point features of one cloud."""

    points: np.ndarray
    normals: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        normals = np.asarray(self.normals, dtype=np.float64)
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim == 1:
            features = features[:, None]
        if points.ndim != 2 or points.shape[1] != 3:
            raise ShapeError(f"points must be n x 3, got {points.shape}")
        if normals.shape != points.shape:
            raise ShapeError(f"normals shape {normals.shape} != points shape {points.shape}")
        if features.ndim != 2 or features.shape[0] != points.shape[0]:
            raise ShapeError(f"features must have {points.shape[0]} rows, got {features.shape}")
        if not np.all(np.isfinite(points)):
            raise ValueError("points contain non-finite coordinates")
        norms = np.linalg.norm(normals, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            bad = int(np.argmax(np.abs(norms - 1.0)))
            raise ValueError(f"normal {bad} is not unit length (norm={norms[bad]!r})")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "features", features)

    def __len__(self) -> int:
        return self.points.shape[0]

    @classmethod
    def with_unit_features(cls, points, normals) -> "PointCloudTriplet":
        points = np.asarray(points, dtype=np.float64)
        return cls(points, normals, np.ones((points.shape[0], 1)))

    def with_features(self, features) -> "PointCloudTriplet":
        return PointCloudTriplet(self.points, self.normals, features)

    def subset(self, idx) -> "PointCloudTriplet":
        idx = np.asarray(idx)
        return PointCloudTriplet(self.points[idx], self.normals[idx], self.features[idx])

    def transformed(self, T: "RigidTransform") -> "PointCloudTriplet":
        return PointCloudTriplet(T.apply(self.points), T.rotate(self.normals), self.features)


@dataclass(frozen=True)
class RigidTransform:
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64)
        t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        if R.shape != (3, 3) or t.shape != (3,):
            raise ShapeError(f"RigidTransform needs R 3x3 and t 3, got {R.shape}, {t.shape}")
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("R is not a rotation matrix")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, M) -> "RigidTransform":
        M = np.asarray(M, dtype=np.float64)
        return cls(M[:3, :3], M[:3, 3])

    def as_matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.R.T + self.t

    def rotate(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ self.R.T

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.R.T, -self.R.T @ self.t)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self`` after ``other``."""
        return RigidTransform(self.R @ other.R, self.R @ other.t + self.t)


@dataclass(frozen=True)
class NeighborIndex:
    indices: np.ndarray
    distances: np.ndarray


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform SO(3) sample from a normalized Gaussian quaternion."""
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def random_transform(rng: np.random.Generator, max_translation: float = 1.0) -> RigidTransform:
    return RigidTransform(random_rotation(rng), rng.uniform(-max_translation, max_translation, 3))


def angles(v1, v2) -> np.ndarray:
    """Vectorized angle in [0, pi]; pairs with a near-zero vector give 0."""
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    cross = np.linalg.norm(np.cross(v1, v2), axis=-1)
    dot = np.sum(v1 * v2, axis=-1)
    out = np.arctan2(cross, dot)
    degenerate = (np.linalg.norm(v1, axis=-1) < ZERO_NORM) | (np.linalg.norm(v2, axis=-1) < ZERO_NORM)
    return np.where(degenerate, 0.0, out)


def angle(v1, v2) -> float:
    return float(angles(v1, v2))


def ppf_batch(p_anchor, n_anchor, p_support, n_support) -> np.ndarray:
    """Point pair features with broadcasting over leading axes; last axis 4."""
    d = np.asarray(p_support, dtype=np.float64) - np.asarray(p_anchor, dtype=np.float64)
    n_anchor = np.asarray(n_anchor, dtype=np.float64)
    n_support = np.asarray(n_support, dtype=np.float64)
    d, n_anchor, n_support = np.broadcast_arrays(d, n_anchor, n_support)
    return np.stack([
        np.linalg.norm(d, axis=-1),
        angles(n_anchor, d),
        angles(n_support, d),
        angles(n_support, n_anchor),
    ], axis=-1)


def ppf(p_anchor, n_anchor, p_support, n_support) -> np.ndarray:
    return ppf_batch(p_anchor, n_anchor, p_support, n_support)


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # difference form avoids the cancellation of |a|^2 + |b|^2 - 2ab
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def pairwise_distances(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.sqrt(_sq_dists(a, b))


def _k_smallest(sq: np.ndarray, k: int) -> np.ndarray:
    """Row-wise indices of the k smallest entries, ordered by (value, index)."""
    if k == sq.shape[1]:
        return np.argsort(sq, axis=1, kind="stable")
    part = np.argpartition(sq, k - 1, axis=1)[:, :k]
    vals = np.take_along_axis(sq, part, axis=1)
    order = np.take_along_axis(part, np.lexsort((part, vals), axis=1), axis=1)
    # a tie straddling the k-th place makes the partition choice arbitrary
    tied = np.count_nonzero(sq <= vals.max(axis=1, keepdims=True), axis=1) > k
    if tied.any():
        order[tied] = np.argsort(sq[tied], axis=1, kind="stable")[:, :k]
    return order


def knn(queries, support, k: int) -> NeighborIndex:
    """Exact k nearest neighbors; equal distances resolve to the smaller index."""
    queries = np.asarray(queries, dtype=np.float64)
    support = np.asarray(support, dtype=np.float64)
    m = support.shape[0]
    if k < 1 or k > m:
        raise ValueError(f"knn: k={k} must be in [1, {m}]")
    idx_out = np.empty((queries.shape[0], k), dtype=np.int64)
    dist_out = np.empty((queries.shape[0], k))
    for start in range(0, queries.shape[0], _CHUNK):
        sq = _sq_dists(queries[start:start + _CHUNK], support)
        order = _k_smallest(sq, k)
        idx_out[start:start + _CHUNK] = order
        dist_out[start:start + _CHUNK] = np.sqrt(np.take_along_axis(sq, order, axis=1))
    return NeighborIndex(idx_out, dist_out)


def farthest_point_sample(points, m: int, seed_index: int = 0) -> np.ndarray:
    """Greedy farthest point sampling starting at ``seed_index``."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"farthest_point_sample: m={m} must be in [1, {n}]")
    if not 0 <= seed_index < n:
        raise ValueError(f"seed_index {seed_index} out of range")
    selected = np.empty(m, dtype=np.int64)
    selected[0] = seed_index
    diff = points - points[seed_index]
    min_d = np.einsum("ij,ij->i", diff, diff)
    min_d[seed_index] = -1.0
    for s in range(1, m):
        nxt = int(np.argmax(min_d))
        selected[s] = nxt
        diff = points - points[nxt]
        np.minimum(min_d, np.einsum("ij,ij->i", diff, diff), out=min_d)
        min_d[selected[: s + 1]] = -1.0
    return selected


def point_to_node(points, superpoints) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    superpoints = np.asarray(superpoints, dtype=np.float64)
    if superpoints.shape[0] < 1:
        raise ValueError("point_to_node needs at least one superpoint")
    return knn(points, superpoints, 1).indices[:, 0]


def groups_from_assignment(assignment, n_nodes: int) -> list[np.ndarray]:
    assignment = np.asarray(assignment)
    order = np.argsort(assignment, kind="stable")
    bounds = np.searchsorted(assignment[order], np.arange(n_nodes + 1))
    return [order[bounds[i]:bounds[i + 1]] for i in range(n_nodes)]


def idw_weights(distances) -> np.ndarray:
    """Normalized inverse-distance weights per row, with the exact-hit rule."""
    d = np.atleast_2d(np.asarray(distances, dtype=np.float64))
    hit = d < EXACT_HIT
    any_hit = hit.any(axis=1)
    inv = 1.0 / np.where(hit, 1.0, d)
    w = inv / inv.sum(axis=1, keepdims=True)
    if np.any(any_hit):
        first = np.argmax(hit, axis=1)
        one_hot = np.zeros_like(d)
        one_hot[np.arange(d.shape[0]), first] = 1.0
        w = np.where(any_hit[:, None], one_hot, w)
    return w


def inverse_distance_weights(query, neighbors) -> np.ndarray:
    query = np.asarray(query, dtype=np.float64)
    neighbors = np.atleast_2d(np.asarray(neighbors, dtype=np.float64))
    if neighbors.shape[0] < 1:
        raise ValueError("need at least one neighbor")
    d = np.linalg.norm(neighbors - query, axis=1)
    return idw_weights(d[None, :])[0]


def estimate_normals(points, k: int = 16, viewpoint=(0.0, 0.0, 0.0)) -> np.ndarray:
    """PCA normals from k-neighborhoods, oriented toward ``viewpoint``.

    ``viewpoint`` is one 3-vector, one per point, or ``None`` for the centroid.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if not 3 <= k <= n:
        raise ValueError(f"estimate_normals: need n >= k >= 3, got n={n}, k={k}")
    nbrs = points[knn(points, points, k).indices]
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    scale = np.trace(cov, axis1=1, axis2=2)
    extent = np.max(np.abs(points)) + 1.0
    degenerate = np.flatnonzero(scale <= (1e-12 * extent) ** 2)
    if degenerate.size:
        raise DegenerateGeometryError(
            f"degenerate neighborhood at point {int(degenerate[0])}: all neighbors coincide")
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    if viewpoint is None:
        viewpoint = points.mean(axis=0)
    view = np.broadcast_to(np.asarray(viewpoint, dtype=np.float64), points.shape)
    flip = np.sum(normals * (view - points), axis=1) < 0
    normals[flip] *= -1.0
    return normals
