"""ADD / ADD-S pose losses and the confidence-weighted dense objective."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .geometry import Pose, transform_points
from .tensor import ContractError, Tensor

CONFIDENCE_FLOOR = 1e-8


@dataclass(frozen=True)
class LossConfig:
    w: float = 0.015

    def __post_init__(self):
        if not self.w > 0:
            raise ValueError(f"confidence regularization weight must be > 0, got {self.w}")


@dataclass
class ObjectModel:
    """Sampled model surface: ``points`` in the object frame (meters)."""

    points: np.ndarray
    diameter: float
    symmetric: bool = False
    id: str = "object"
    colors: np.ndarray | None = None
    kind: str = ""

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if len(self.points) < 4:
            raise ValueError(f"object model needs at least 4 points, got {len(self.points)}")
        exact = max_pairwise_distance(self.points)
        if not abs(self.diameter - exact) <= 1e-9:
            raise ValueError(f"diameter {self.diameter} differs from the max pairwise distance {exact}")

    @property
    def M(self) -> int:
        return len(self.points)


def max_pairwise_distance(points: np.ndarray) -> float:
    points = np.asarray(points, dtype=np.float64)
    best = 0.0
    for start in range(0, len(points), 1024):
        block = points[start : start + 1024]
        d2 = ((block[:, None, :] - points[None, :, :]) ** 2).sum(-1)
        best = max(best, float(d2.max()))
    return float(np.sqrt(best))


def add_loss(model: ObjectModel, gt: Pose, pred: Pose) -> float:
    """Mean distance between model points under ``gt`` and under ``pred``."""
    a = transform_points(gt, model.points)
    b = transform_points(pred, model.points)
    return float(np.linalg.norm(a - b, axis=1).mean())


def adds_loss(model: ObjectModel, gt: Pose, pred: Pose) -> float:
    """Mean over gt-posed points of the distance to the closest pred-posed point."""
    a = transform_points(gt, model.points)
    b = transform_points(pred, model.points)
    total = 0.0
    for start in range(0, len(a), 512):
        block = a[start : start + 512]
        d = np.sqrt(((block[:, None, :] - b[None, :, :]) ** 2).sum(-1))
        total += float(d.min(axis=1).sum())
    return total / len(a)


def pose_loss(model: ObjectModel, gt: Pose, pred: Pose) -> float:
    return adds_loss(model, gt, pred) if model.symmetric else add_loss(model, gt, pred)


def hypothesis_losses(
    model_points: np.ndarray,
    target_points: np.ndarray,
    rotations: Tensor,
    translations: Tensor,
    symmetric: bool,
) -> Tensor:
    """Differentiable per-hypothesis ADD (or ADD-S) losses.

    ``target_points`` are the model points already moved by the ground-truth
    pose. ``rotations`` is ``[N x 3 x 3]`` and ``translations`` ``[N x 3]``.
    Returns a ``[N]`` tensor.
    """
    n = rotations.shape[0]
    x = Tensor(np.asarray(model_points, dtype=np.float64))
    moved = T.matmul(x, T.swap_last(rotations))  # [N, M, 3]
    moved = T.add(moved, T.reshape(translations, (n, 1, 3)))
    target = np.asarray(target_points, dtype=np.float64)
    if not symmetric:
        dist = T.norm(T.sub(moved, Tensor(target[None])), axis=-1)  # [N, M]
        return T.mean(dist, axis=1)
    dist = T.nearest_distance(moved, target)  # [N, M]
    return T.mean(dist, axis=1)


def confidence_weighted_loss(per_point_losses, confidences, config: LossConfig = LossConfig()) -> Tensor:
    """``mean_i(L_i * c_i - w * log(c_i))`` with ``c_i`` floored at 1e-8 inside the log."""
    losses = T.as_tensor(per_point_losses)
    conf = T.as_tensor(confidences)
    if losses.shape != conf.shape:
        raise ContractError(f"losses {losses.shape} and confidences {conf.shape} differ in shape")
    if not np.all(np.isfinite(conf.data)) or np.any(conf.data <= 0):
        raise ContractError("confidences must be finite and strictly positive")
    reg = T.log(T.clamp_min(conf, CONFIDENCE_FLOOR))
    return T.mean(T.sub(T.mul(losses, conf), T.mul(reg, config.w)))
