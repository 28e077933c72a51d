"""Rigid-body geometry: quaternions, poses, point clouds and point-to-point ICP."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DegenerateRotationError(ValueError):
    pass


class RankDeficiencyError(ValueError):
    pass


def normalize_quat(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise DegenerateRotationError(f"quaternion norm {n:.3e} too small")
    if abs(n - 1.0) > 4 * np.finfo(np.float64).eps:
        q = q / n
    # w >= 0 picks one representative of the double cover
    return -q if q[0] < 0 else q


def quat_to_rotmat(q) -> np.ndarray:
    w, x, y, z = normalize_quat(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotmat_to_quat(r: np.ndarray) -> np.ndarray:
    """Shepperd's method: branch on the largest diagonal term for stability."""
    r = np.asarray(r, dtype=np.float64)
    tr = np.trace(r)
    diag = (tr, r[0, 0], r[1, 1], r[2, 2])
    k = int(np.argmax(diag))
    if k == 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
    elif k == 1:
        s = 2.0 * np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
        q = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
    elif k == 2:
        s = 2.0 * np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
        q = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
        q = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    return normalize_quat(q)


def quat_multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def axis_angle_quat(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    return normalize_quat(np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis]))


def random_quaternion(rng: np.random.Generator) -> np.ndarray:
    """Uniform on SO(3): a normalized 4-d Gaussian."""
    while True:
        q = rng.standard_normal(4)
        if np.linalg.norm(q) > 1e-6:
            return normalize_quat(q)


@dataclass(frozen=True)
class Pose:
    """Rigid transform ``x -> R x + t`` stored as unit quaternion (w, x, y, z) and translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", normalize_quat(self.rotation))
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_rt(cls, r: np.ndarray, t) -> "Pose":
        return cls(rotmat_to_quat(r), t)

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Pose":
        return cls.from_rt(m[:3, :3], m[:3, 3])

    @property
    def R(self) -> np.ndarray:
        return quat_to_rotmat(self.rotation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.R
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Pose":
        q = self.rotation * np.array([1.0, -1.0, -1.0, -1.0])
        return Pose(q, -(quat_to_rotmat(q) @ self.translation))

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose_poses(self, other)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(self.translation, other.translation)

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))


@dataclass
class PointCloud:
    points: np.ndarray
    features: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point cloud contains non-finite coordinates")
        if self.features is not None:
            self.features = np.asarray(self.features, dtype=np.float64)
            if self.features.ndim != 2 or len(self.features) != len(self.points):
                raise ValueError(
                    f"features shape {self.features.shape} does not match {len(self.points)} points"
                )

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, idx) -> "PointCloud":
        feats = None if self.features is None else self.features[idx]
        return PointCloud(self.points[idx], feats)


def transform_points(pose: Pose, cloud: PointCloud | np.ndarray):
    """Apply ``R x + t`` to every point; features ride along untouched."""
    if isinstance(cloud, PointCloud):
        return PointCloud(cloud.points @ pose.R.T + pose.translation, cloud.features)
    return np.asarray(cloud, dtype=np.float64) @ pose.R.T + pose.translation


def compose_poses(outer: Pose, inner: Pose) -> Pose:
    """Pose that applies ``inner`` first, then ``outer``."""
    q = quat_multiply(outer.rotation, inner.rotation)
    return Pose(q, outer.R @ inner.translation + outer.translation)


def rotation_error_deg(a: Pose, b: Pose) -> float:
    d = abs(float(np.dot(a.rotation, b.rotation)))
    return float(np.degrees(2.0 * np.arccos(min(1.0, d))))


def translation_error(a: Pose, b: Pose) -> float:
    return float(np.linalg.norm(a.translation - b.translation))


# ---------------------------------------------------------------------------
# ICP


def kabsch(src: np.ndarray, dst: np.ndarray, weights: np.ndarray | None = None) -> Pose:
    """Least-squares rigid transform mapping corresponding rows of ``src`` onto ``dst``."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    w = np.ones(len(src)) if weights is None else np.asarray(weights, dtype=np.float64)
    w = w / w.sum()
    mu_s = w @ src
    mu_d = w @ dst
    cs, cd = src - mu_s, dst - mu_d
    if np.allclose(cs, 0.0, atol=1e-15):
        raise RankDeficiencyError("all source points coincide; rotation is undetermined")
    h = (cs * w[:, None]).T @ cd
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0:
        d = 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return Pose.from_rt(r, mu_d - r @ mu_s)


def nearest_neighbors(query: np.ndarray, ref: np.ndarray, chunk: int = 2048) -> tuple[np.ndarray, np.ndarray]:
    """Exhaustive nearest neighbour of each query row in ``ref``; returns (index, distance)."""
    ref_sq = (ref * ref).sum(axis=1)
    idx = np.empty(len(query), dtype=np.int64)
    dist = np.empty(len(query))
    for start in range(0, len(query), chunk):
        q = query[start : start + chunk]
        d2 = (q * q).sum(axis=1)[:, None] - 2.0 * q @ ref.T + ref_sq[None, :]
        j = np.argmin(d2, axis=1)
        idx[start : start + chunk] = j
        dist[start : start + chunk] = np.linalg.norm(q - ref[j], axis=1)
    return idx, dist


@dataclass
class IcpResult:
    pose: Pose
    residual: float
    iterations: int
    history: list[float]


def icp(
    source: PointCloud | np.ndarray,
    target: PointCloud | np.ndarray,
    init: Pose | None = None,
    max_iters: int = 50,
    tol: float = 1e-7,
) -> IcpResult:
    """Point-to-point ICP moving ``source`` onto ``target``.

    A step is accepted only if it does not raise the mean nearest-neighbour
    distance; iteration stops once the improvement drops below ``tol``.
    """
    src = source.points if isinstance(source, PointCloud) else np.asarray(source, dtype=np.float64)
    dst = target.points if isinstance(target, PointCloud) else np.asarray(target, dtype=np.float64)
    if len(src) == 0 or len(dst) == 0:
        raise ValueError("icp needs non-empty clouds")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if np.allclose(src, src[0], atol=1e-15):
        raise RankDeficiencyError("all source points coincide; rotation is undetermined")

    pose = Pose.identity() if init is None else init
    moved = transform_points(pose, src)
    idx, dist = nearest_neighbors(moved, dst)
    residual = float(dist.mean())
    history = [residual]
    iters = 0
    for iters in range(1, max_iters + 1):
        candidate = kabsch(src, dst[idx])
        moved = transform_points(candidate, src)
        new_idx, new_dist = nearest_neighbors(moved, dst)
        new_residual = float(new_dist.mean())
        if new_residual > residual:
            break
        improvement = residual - new_residual
        pose, idx, residual = candidate, new_idx, new_residual
        history.append(residual)
        if improvement < tol:
            break
    return IcpResult(pose, residual, iters, history)


def icp_align(
    source: PointCloud | np.ndarray,
    target: PointCloud | np.ndarray,
    init: Pose | None = None,
    max_iters: int = 50,
    tol: float = 1e-7,
) -> Pose:
    return icp(source, target, init, max_iters, tol).pose
