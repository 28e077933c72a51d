"""Synthetic objects and scenes, plus plain-text cloud/pose IO.

Everything here is a pure function of its arguments and seed.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import PointCloud, Pose, axis_angle_quat, quat_to_rotmat, random_quaternion, transform_points
from .losses import ObjectModel, max_pairwise_distance

SHAPE_LABELS = ("sphere", "box", "cylinder")

DEFAULT_SIZES = {
    "sphere": (0.08,),  # diameter
    "box": (0.10, 0.06, 0.04),  # extents
    "cylinder": (0.03, 0.10),  # radius, height
}


class DegenerateSceneError(ValueError):
    pass


class FormatError(ValueError):
    def __init__(self, path, line: int, column: int, message: str):
        super().__init__(f"{path}:{line}:{column}: {message}")
        self.path, self.line, self.column = path, line, column


def procedural_colors(points: np.ndarray, seed: int, scale: float = 1.0) -> np.ndarray:
    """RGB in [0, 1]: model-frame coordinates under a seeded rotation, divided by ``scale``.

    Colours vary smoothly and monotonically over the surface, so a point's
    colour pins down where it sits on the model.
    """
    q = random_quaternion(np.random.default_rng([seed, 0xC0102]))
    rgb = 0.5 + points @ quat_to_rotmat(q).T / max(scale, 1e-12)
    return np.clip(rgb, 0.0, 1.0)


def _unit_vectors(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _sample_sphere(rng, m, diameter):
    return 0.5 * diameter * _unit_vectors(rng, m)


def _sample_box(rng, m, extents):
    half = 0.5 * np.asarray(extents, dtype=np.float64)
    corners = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]) * half
    n_face = m - 8
    if n_face <= 0:
        return corners[:m]
    ex, ey, ez = 2 * half
    areas = np.array([ey * ez, ey * ez, ex * ez, ex * ez, ex * ey, ex * ey])
    faces = rng.choice(6, size=n_face, p=areas / areas.sum())
    pts = rng.uniform(-half, half, (n_face, 3))
    axis = faces // 2
    sign = np.where(faces % 2 == 0, -1.0, 1.0)
    pts[np.arange(n_face), axis] = sign * half[axis]
    return np.vstack([corners, pts])


def _sample_cylinder(rng, m, radius, height):
    side = 2 * np.pi * radius * height
    cap = np.pi * radius**2
    part = rng.choice(3, size=m, p=np.array([side, cap, cap]) / (side + 2 * cap))
    theta = rng.uniform(0, 2 * np.pi, m)
    # uniform on a disk needs sqrt-distributed radius
    rad = np.where(part == 0, radius, radius * np.sqrt(rng.uniform(0, 1, m)))
    z = np.where(part == 0, rng.uniform(-height / 2, height / 2, m), np.where(part == 1, -height / 2, height / 2))
    return np.column_stack([rad * np.cos(theta), rad * np.sin(theta), z])


def gen_object(kind: str, M: int, seed: int, size: tuple[float, ...] | None = None, id: str | None = None) -> ObjectModel:
    """Sample ``M`` surface points of a parametric shape centred at the origin."""
    if M < 4:
        raise ValueError(f"need at least 4 model points, got {M}")
    if kind not in DEFAULT_SIZES:
        raise ValueError(f"unknown shape kind {kind!r}; expected one of {sorted(DEFAULT_SIZES)}")
    size = DEFAULT_SIZES[kind] if size is None else tuple(size)
    rng = np.random.default_rng([seed, SHAPE_LABELS.index(kind)])
    if kind == "sphere":
        pts = _sample_sphere(rng, M, *size)
    elif kind == "box":
        pts = _sample_box(rng, M, size)
    else:
        pts = _sample_cylinder(rng, M, *size)
    diameter = max_pairwise_distance(pts)
    colors = procedural_colors(pts, seed, scale=diameter)
    return ObjectModel(pts, diameter, symmetric=kind != "box", id=id or kind, colors=colors, kind=kind)


@dataclass(frozen=True)
class PoseRange:
    translation_low: tuple[float, float, float] = (-0.05, -0.05, 0.5)
    translation_high: tuple[float, float, float] = (0.05, 0.05, 0.7)
    # >= 180 means uniform over SO(3)
    max_rotation_deg: float = 180.0

    def sample(self, rng: np.random.Generator) -> Pose:
        if self.max_rotation_deg >= 180.0:
            q = random_quaternion(rng)
        else:
            axis = _unit_vectors(rng, 1)[0]
            q = axis_angle_quat(axis, math.radians(self.max_rotation_deg) * rng.uniform(0, 1))
        t = rng.uniform(self.translation_low, self.translation_high)
        return Pose(q, t)


@dataclass
class SceneSample:
    object_id: str
    cloud: PointCloud
    gt: Pose
    occlusion: float
    noise_sigma: float
    model_indices: np.ndarray


def gen_scene(
    model: ObjectModel,
    pose_range: PoseRange = PoseRange(),
    occlusion: float = 0.0,
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> SceneSample:
    """Pose the model, cut away ``occlusion`` of it behind a random plane, add noise."""
    if not 0.0 <= occlusion <= 0.9:
        raise ValueError(f"occlusion must lie in [0, 0.9], got {occlusion}")
    rng = np.random.default_rng([seed, 0x5CE7E])
    gt = pose_range.sample(rng)
    posed = transform_points(gt, model.points)
    m = len(posed)
    drop = int(math.floor(occlusion * m))
    if drop:
        direction = _unit_vectors(rng, 1)[0]
        order = np.argsort(posed @ direction, kind="stable")
        keep = np.sort(order[: m - drop])
    else:
        keep = np.arange(m)
    if len(keep) < 8:
        raise DegenerateSceneError(f"occlusion {occlusion} leaves {len(keep)} points (< 8)")
    pts = posed[keep]
    if noise_sigma > 0:
        pts = pts + rng.normal(0.0, noise_sigma, pts.shape)
    colors = model.colors if model.colors is not None else procedural_colors(model.points, 0, model.diameter)
    return SceneSample(model.id, PointCloud(pts, colors[keep]), gt, occlusion, noise_sigma, keep)


def gen_shape_sample(
    label: int, n_points: int, seed: int, noise_sigma: float = 0.002, upright: bool = True
) -> np.ndarray:
    """Randomly sized shape of class ``label`` for classification, centred and scaled into the unit ball.

    ``upright`` follows the usual CAD-benchmark convention: models share an up
    axis and only spin about it. ``upright=False`` draws a uniform rotation.
    """
    rng = np.random.default_rng([seed, 0xC1A55])
    kind = SHAPE_LABELS[label]
    s = rng.uniform(0.6, 1.4)
    if kind == "sphere":
        size = (0.1 * s,)
    elif kind == "box":
        size = tuple(0.1 * s * rng.uniform(0.4, 1.0, 3))
    else:
        size = (0.03 * s * rng.uniform(0.7, 1.3), 0.1 * s * rng.uniform(0.6, 1.2))
    obj = gen_object(kind, n_points, int(rng.integers(2**31)), size=size)
    q = axis_angle_quat([0.0, 0.0, 1.0], rng.uniform(0.0, 2 * np.pi)) if upright else random_quaternion(rng)
    pts = transform_points(Pose(q), obj.points)
    pts = pts + rng.normal(0.0, noise_sigma, pts.shape)
    pts = pts - pts.mean(axis=0)
    return pts / np.linalg.norm(pts, axis=1).max()


# ---------------------------------------------------------------------------
# IO

_FEATURE_NAMES = ("r", "g", "b")


def write_cloud(path: str | os.PathLike, cloud: PointCloud) -> None:
    d = 0 if cloud.features is None else cloud.features.shape[1]
    names = _FEATURE_NAMES if d == 3 else tuple(f"f{i}" for i in range(d))
    lines = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}"]
    lines += [f"property double {c}" for c in ("x", "y", "z") + names]
    lines.append("end_header")
    rows = cloud.points if d == 0 else np.hstack([cloud.points, cloud.features])
    lines += [" ".join(repr(float(v)) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def read_cloud(path: str | os.PathLike) -> PointCloud:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise FormatError(path, 1, 1, "missing 'ply' magic")
    if len(lines) < 2 or lines[1].strip() != "format ascii 1.0":
        raise FormatError(path, 2, 1, "only 'format ascii 1.0' is supported")
    count, props, i = None, [], 2
    while i < len(lines) and lines[i].strip() != "end_header":
        tok = lines[i].split()
        if tok[:2] == ["element", "vertex"] and len(tok) == 3 and tok[2].isdigit():
            count = int(tok[2])
        elif len(tok) == 3 and tok[0] == "property" and tok[1] in ("double", "float"):
            props.append(tok[2])
        elif tok and tok[0] != "comment":
            raise FormatError(path, i + 1, 1, f"unexpected header line {lines[i]!r}")
        i += 1
    if i == len(lines):
        raise FormatError(path, i, 1, "missing end_header")
    if count is None or props[:3] != ["x", "y", "z"]:
        raise FormatError(path, i + 1, 1, "header must declare a vertex count and x y z properties")
    body = lines[i + 1 :]
    if len(body) < count:
        raise FormatError(path, i + 1 + len(body), 1, f"expected {count} vertex rows, found {len(body)}")
    rows = np.empty((count, len(props)))
    for r in range(count):
        lineno = i + 2 + r
        tok = body[r].split()
        if len(tok) != len(props):
            raise FormatError(path, lineno, 1, f"expected {len(props)} values, found {len(tok)}")
        for c, t in enumerate(tok):
            try:
                rows[r, c] = float(t)
            except ValueError:
                raise FormatError(path, lineno, c + 1, f"cannot parse {t!r} as a number") from None
    feats = rows[:, 3:] if len(props) > 3 else None
    return PointCloud(rows[:, :3], feats)


def write_pose(path: str | os.PathLike, pose: Pose) -> None:
    vals = list(pose.rotation) + list(pose.translation)
    Path(path).write_text(" ".join(repr(float(v)) for v in vals) + "\n")


def read_pose(path: str | os.PathLike) -> Pose:
    lines = [ln for ln in Path(path).read_text().splitlines()]
    content = [(n + 1, ln) for n, ln in enumerate(lines) if ln.strip() and not ln.lstrip().startswith("#")]
    if len(content) != 1:
        line = content[1][0] if len(content) > 1 else 1
        raise FormatError(path, line, 1, "pose file must contain exactly one line of 7 numbers")
    lineno, text = content[0]
    tok = text.split()
    if len(tok) != 7:
        raise FormatError(path, lineno, 1, f"expected 7 numbers (qw qx qy qz tx ty tz), found {len(tok)}")
    vals = []
    for c, t in enumerate(tok):
        try:
            vals.append(float(t))
        except ValueError:
            raise FormatError(path, lineno, c + 1, f"cannot parse {t!r} as a number") from None
    return Pose(vals[:4], vals[4:])
