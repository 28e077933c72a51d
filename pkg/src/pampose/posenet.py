r"""Dense pose network, the global residual refiner, and the point classifier.

Layout of the pose network (per observed point, N points):

    xyz  -> geo1 (64) -> geo2 (128) --\
                                      concat (256) -> fuse1 (256) --+------------> heads
    rgb  -> app1 (64) -> app2 (128) --/                             \-> avg pool --/

A PAM instance can sit after any named layer (``geo1``, ``geo2``, ``app1``,
``app2``, ``fused``). Heads are pointwise conv stacks producing, per object
class, a raw quaternion, a translation offset and a confidence logit.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .geometry import PointCloud, Pose
from .optim import Params, count_params, init_layer
from .pam import PamConfig, PamParams, init_pam_params, pam_forward, pam_param_count
from .tensor import Tensor

INSERTION_POINTS = ("geo1", "geo2", "app1", "app2", "fused")


class InputError(ValueError):
    pass


@dataclass(frozen=True)
class NetConfig:
    appearance_dim: int = 3
    geo_widths: tuple[int, ...] = (64, 128)
    app_widths: tuple[int, ...] = (64, 128)
    fusion_widths: tuple[int, ...] = (256,)
    # also feed the elementwise product of the two branch outputs into the fusion MLP
    fuse_product: bool = False
    head_widths: tuple[int, ...] = (128, 64)
    num_objects: int = 1
    pam: PamConfig = field(default_factory=PamConfig)
    refiner: bool = False
    # xyz enters the geometry branch centred on the cloud mean and divided by this
    input_scale: float = 0.1

    def __post_init__(self):
        if self.geo_widths[-1] != self.app_widths[-1]:
            raise ValueError("geometry and appearance branches must end at the same width")
        unknown = set(self.pam.insertion_points) - set(INSERTION_POINTS)
        if unknown:
            raise ValueError(f"unknown PAM insertion points {sorted(unknown)}; choose from {INSERTION_POINTS}")

    @property
    def fused_width(self) -> int:
        return self.geo_widths[-1] + self.app_widths[-1]

    @property
    def fusion_in_width(self) -> int:
        return self.fused_width + (self.geo_widths[-1] if self.fuse_product else 0)

    @property
    def point_width(self) -> int:
        """Width of the per-point feature that is pooled and handed to the heads."""
        return self.fusion_widths[-1] if self.fusion_widths else self.fusion_in_width

    @property
    def feature_width(self) -> int:
        return 2 * self.point_width

    def layer_width(self, point: str) -> int:
        if point == "fused":
            return self.fused_width
        widths = self.geo_widths if point.startswith("geo") else self.app_widths
        return widths[int(point[3:]) - 1]

    def pam_points(self) -> tuple[str, ...]:
        return self.pam.insertion_points if self.pam.enabled else ()


@dataclass
class PredictionSet:
    rotations: Tensor  # [N, 4] unit quaternions
    translations: Tensor  # [N, 3]
    confidences: Tensor  # [N] in (0, 1)

    def __len__(self) -> int:
        return self.confidences.shape[0]

    def pose(self, i: int) -> Pose:
        return Pose(self.rotations.data[i], self.translations.data[i])


# ---------------------------------------------------------------------------
# parameters


def _init_stack(params: Params, prefix: str, widths, fan_in: int, seed: int) -> int:
    for i, w in enumerate(widths):
        init_layer(params, f"{prefix}{i + 1}", fan_in, w, seed)
        fan_in = w
    return fan_in


def init_feature_params(config: NetConfig, seed: int, prefix: str = "") -> Params:
    params: Params = {}
    _init_stack(params, f"{prefix}geo", config.geo_widths, 3, seed)
    _init_stack(params, f"{prefix}app", config.app_widths, config.appearance_dim, seed)
    _init_stack(params, f"{prefix}fuse", config.fusion_widths, config.fusion_in_width, seed)
    for point in config.pam_points():
        pam = init_pam_params(config.pam.at(config.layer_width(point)), seed, prefix=f"{prefix}pam.{point}")
        params.update(pam.named(f"{prefix}pam.{point}"))
    return params


def init_posenet_params(config: NetConfig, seed: int) -> Params:
    params = init_feature_params(config, seed)
    k = config.num_objects
    for head, out in (("rot", 4 * k), ("trans", 3 * k), ("conf", k)):
        fan_in = _init_stack(params, f"head.{head}", config.head_widths, config.feature_width, seed)
        init_layer(params, f"head.{head}.out", fan_in, out, seed)
    return params


def init_refiner_params(config: NetConfig, seed: int) -> Params:
    params = init_feature_params(config, seed, prefix="ref.")
    fan_in = _init_stack(params, "ref.head", config.head_widths, config.feature_width + 3, seed)
    k = config.num_objects
    init_layer(params, "ref.head.out", fan_in, 7 * k, seed)
    # start as the identity residual: tiny weights, bias (1, 0, 0, 0 | 0, 0, 0)
    params["ref.head.out.weight"].data *= 1e-3
    params["ref.head.out.bias"].data = np.tile([1.0, 0, 0, 0, 0, 0, 0], k)
    return params


def pam_params_total(config: NetConfig) -> int:
    return sum(pam_param_count(config.pam.at(config.layer_width(p))) for p in config.pam_points())


def posenet_param_count(config: NetConfig) -> int:
    return count_params(init_posenet_params(config, 0))


# ---------------------------------------------------------------------------
# forward


def _layer(params: Params, name: str, x: Tensor) -> Tensor:
    return T.pointwise_conv(x, params[f"{name}.weight"], params[f"{name}.bias"])


def _maybe_pam(params: Params, config: NetConfig, point: str, x: Tensor, prefix: str) -> Tensor:
    if point not in config.pam_points():
        return x
    pam_cfg = config.pam.at(config.layer_width(point))
    return pam_forward(x, PamParams.from_named(params, f"{prefix}pam.{point}", pam_cfg))


def extract_features(cloud: PointCloud, config: NetConfig, params: Params, prefix: str = "") -> Tensor:
    """Per-point fused features stacked on their average over the points, ``[2 * point_width, N]``.

    The branch outputs are concatenated and passed through the fusion MLP, so
    every per-point feature (and hence the pooled one) mixes geometry and
    appearance.
    """
    if cloud.features is None:
        raise InputError("extract_features needs per-point appearance features")
    if cloud.features.shape[1] != config.appearance_dim:
        raise InputError(
            f"appearance features have {cloud.features.shape[1]} dims, network expects {config.appearance_dim}"
        )
    pts = cloud.points
    n = len(pts)
    x = Tensor(((pts - pts.mean(axis=0)) / config.input_scale).T)
    e = Tensor(cloud.features.T)
    for i in range(len(config.geo_widths)):
        x = _maybe_pam(params, config, f"geo{i + 1}", T.relu(_layer(params, f"{prefix}geo{i + 1}", x)), prefix)
    for i in range(len(config.app_widths)):
        e = _maybe_pam(params, config, f"app{i + 1}", T.relu(_layer(params, f"{prefix}app{i + 1}", e)), prefix)
    fused = _maybe_pam(params, config, "fused", T.concat([x, e], axis=0), prefix)
    if config.fuse_product:
        fused = T.concat([fused, T.mul(x, e)], axis=0)
    for i in range(len(config.fusion_widths)):
        fused = T.relu(_layer(params, f"{prefix}fuse{i + 1}", fused))
    glob = T.repeat_columns(T.global_avg_pool(fused), n)
    return T.concat([fused, glob], axis=0)


def _head(params: Params, name: str, widths, x: Tensor) -> Tensor:
    for i in range(len(widths)):
        x = T.relu(_layer(params, f"{name}{i + 1}", x))
    return _layer(params, f"{name}.out", x)


def predict_dense(
    features: Tensor, cloud: PointCloud, params: Params, config: NetConfig, obj_index: int = 0
) -> PredictionSet:
    """One pose hypothesis and confidence per observed point.

    Translations are offsets anchored at each point: ``t_i = x_i + delta_i``.
    """
    n = len(cloud)
    if features.shape[1] != n:
        raise InputError(f"features cover {features.shape[1]} points but the cloud has {n}")
    w = config.head_widths
    rot = _head(params, "head.rot", w, features)[4 * obj_index : 4 * obj_index + 4]
    trans = _head(params, "head.trans", w, features)[3 * obj_index : 3 * obj_index + 3]
    conf = _head(params, "head.conf", w, features)[obj_index]
    quats = T.normalize_quaternions(T.transpose(rot))
    translations = T.add(T.transpose(trans), cloud.points)
    return PredictionSet(quats, translations, T.sigmoid(conf))


def forward(cloud: PointCloud, params: Params, config: NetConfig, obj_index: int = 0) -> PredictionSet:
    return predict_dense(extract_features(cloud, config, params), cloud, params, config, obj_index)


def select_pose(preds: PredictionSet) -> tuple[Pose, int]:
    """Most confident hypothesis; ``argmax`` already breaks ties toward the lowest index."""
    if len(preds) == 0:
        raise InputError("cannot select a pose from an empty prediction set")
    i = int(np.argmax(preds.confidences.data))
    return preds.pose(i), i


def refiner_forward(
    cloud: PointCloud, params: Params, config: NetConfig, obj_index: int = 0
) -> tuple[Tensor, Tensor]:
    """Single residual pose (unit quaternion ``[4]``, translation ``[3]``) from pooled features.

    The feature branches see a centred cloud, so the centroid is appended to the
    pooled feature; without it the residual translation would be unobservable.
    """
    feats = extract_features(cloud, config, params, prefix="ref.")
    centroid = Tensor(cloud.points.mean(axis=0).reshape(3, 1) / config.input_scale)
    h = T.concat([T.reshape(T.global_avg_pool(feats), (feats.shape[0], 1)), centroid], axis=0)
    out = T.reshape(_head(params, "ref.head", config.head_widths, h), (-1,))
    q = T.normalize_quaternions(out[7 * obj_index : 7 * obj_index + 4])
    return q, out[7 * obj_index + 4 : 7 * obj_index + 7]


# ---------------------------------------------------------------------------
# classification


@dataclass(frozen=True)
class ClassifierConfig:
    widths: tuple[int, ...] = (64, 64, 128)
    head_widths: tuple[int, ...] = (64,)
    num_classes: int = 3
    pam: PamConfig = field(default_factory=lambda: PamConfig(channels=64, insertion_points=("mid",)))

    @property
    def mid(self) -> int:
        return len(self.widths) // 2

    def without_pam(self) -> "ClassifierConfig":
        return replace(self, pam=replace(self.pam, enable_cap=False, enable_gap=False))


def init_classifier_params(config: ClassifierConfig, seed: int) -> Params:
    params: Params = {}
    fan_in = _init_stack(params, "cls.conv", config.widths, 3, seed)
    if config.pam.enabled:
        pam = init_pam_params(config.pam.at(config.widths[config.mid - 1]), seed, prefix="cls.pam")
        params.update(pam.named("cls.pam"))
    for i, w in enumerate(config.head_widths):
        init_layer(params, f"cls.fc{i + 1}", fan_in, w, seed)
        fan_in = w
    init_layer(params, "cls.fc.out", fan_in, config.num_classes, seed)
    return params


def classify_logits(cloud: PointCloud | np.ndarray, params: Params, config: ClassifierConfig) -> Tensor:
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    x = Tensor(pts.T)
    for i in range(len(config.widths)):
        x = T.relu(_layer(params, f"cls.conv{i + 1}", x))
        if i + 1 == config.mid and config.pam.enabled:
            pam_cfg = config.pam.at(config.widths[i])
            x = pam_forward(x, PamParams.from_named(params, "cls.pam", pam_cfg))
    h = T.global_max_pool(x)
    for i in range(len(config.head_widths)):
        h = T.relu(T.dense(h, params[f"cls.fc{i + 1}.weight"], params[f"cls.fc{i + 1}.bias"]))
    return T.dense(h, params["cls.fc.out.weight"], params["cls.fc.out.bias"])


def classify(cloud: PointCloud | np.ndarray, params: Params, config: ClassifierConfig = ClassifierConfig()) -> np.ndarray:
    """Class probabilities (softmax of the logits)."""
    return T.softmax(classify_logits(cloud, params, config)).data
