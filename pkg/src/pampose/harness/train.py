"""Training, iterative refinement and evaluation of the dense pose network."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .. import posenet
from .. import tensor as T
from ..checkpoint import CheckpointVersionError, load_checkpoint, save_checkpoint
from ..data import SceneSample, PoseRange, gen_object, gen_scene
from ..geometry import PointCloud, Pose, compose_poses, nearest_neighbors, transform_points
from ..losses import ObjectModel, add_loss, adds_loss, confidence_weighted_loss, hypothesis_losses
from ..metrics import EvalReport, MetricReport, ObjectMetrics
from ..optim import Adam, Params, count_params, scheduled_lr
from ..pam import pam_param_count
from ..tensor import ContractError
from .config import RunConfig, save_config

log = logging.getLogger(__name__)

TRAIN, EVAL = 0, 1


class DivergenceError(RuntimeError):
    def __init__(self, stage: str, epoch: int, step: int, value: float):
        super().__init__(f"{stage} loss became {value} at epoch {epoch}, step {step}")
        self.stage, self.epoch, self.step = stage, epoch, step


# ---------------------------------------------------------------------------
# data streams


def build_objects(config: RunConfig) -> list[ObjectModel]:
    return [
        gen_object(kind, config.model_points, seed=config.seed * 1000 + i, id=f"{i:02d}_{kind}")
        for i, kind in enumerate(config.objects)
    ]


@dataclass
class Scene:
    obj_index: int
    sample: SceneSample
    cloud: PointCloud  # fixed-size subsample fed to the network


def make_scene(config: RunConfig, objects: list[ObjectModel], split: int, epoch: int, index: int) -> Scene:
    rng = np.random.default_rng([config.seed, split, epoch, index])
    k = int(rng.integers(len(objects)))
    occlusion = float(rng.uniform(0.0, config.occlusion_max))
    pose_range = PoseRange(max_rotation_deg=config.max_rotation_deg)
    sample = gen_scene(objects[k], pose_range, occlusion, config.noise_sigma, seed=int(rng.integers(2**62)))
    n = len(sample.cloud)
    idx = rng.choice(n, config.num_points, replace=n < config.num_points)
    return Scene(k, sample, sample.cloud.subset(np.sort(idx)))


def scene_stream(config: RunConfig, objects, split: int, epoch: int, count: int) -> Iterator[Scene]:
    for i in range(count):
        yield make_scene(config, objects, split, epoch, i)


def eval_scenes(config: RunConfig, objects) -> list[Scene]:
    return list(scene_stream(config, objects, EVAL, 0, config.eval_scenes))


def frozen(params: Params) -> Params:
    return {k: T.Tensor(v.data) for k, v in params.items()}


# ---------------------------------------------------------------------------
# main network


def dense_step_loss(params: Params, config: RunConfig, model: ObjectModel, scene: Scene, loss_idx: np.ndarray):
    preds = posenet.forward(scene.cloud, params, config.net, scene.obj_index)
    pts = model.points[loss_idx]
    target = transform_points(scene.sample.gt, pts)
    per_point = hypothesis_losses(pts, target, T.quat_to_rotmat(preds.rotations), preds.translations, model.symmetric)
    return confidence_weighted_loss(per_point, preds.confidences, config.loss), per_point


def loss_subset(config: RunConfig, model: ObjectModel, epoch: int, index: int) -> np.ndarray:
    """Model points entering this step's loss: a fresh random subset of ``loss_points``."""
    if config.loss_points >= model.M:
        return np.arange(model.M)
    rng = np.random.default_rng([config.seed, 2, epoch, index])
    return np.sort(rng.choice(model.M, config.loss_points, replace=False))


def train_posenet(config: RunConfig, objects, params: Params | None = None) -> tuple[Params, list[dict]]:
    params = posenet.init_posenet_params(config.net, config.seed) if params is None else params
    opt = Adam(params, lr=config.learning_rate)
    curve = []
    step, steps = 0, config.epochs * config.scenes_per_epoch * config.steps_per_scene
    for epoch in range(config.epochs):
        total, dist_total, t0 = 0.0, 0.0, time.perf_counter()
        for i, scene in enumerate(scene_stream(config, objects, TRAIN, epoch, config.scenes_per_epoch)):
            model = objects[scene.obj_index]
            for _ in range(config.steps_per_scene):
                opt.lr = scheduled_lr(config.learning_rate, step, steps, config.lr_schedule)
                opt.zero_grad()
                try:
                    loss, per_point = dense_step_loss(params, config, model, scene, loss_subset(config, model, epoch, i))
                except ContractError:
                    # confidences collapsed to 0 or NaN: the weights have blown up
                    raise DivergenceError("posenet", epoch, step, math.nan) from None
                value = loss.item()
                if not math.isfinite(value):
                    raise DivergenceError("posenet", epoch, step, value)
                T.backward(loss)
                opt.step()
                step += 1
            # the curve records the last step taken on each scene
            total += value
            dist_total += float(per_point.data.mean())
        n = config.scenes_per_epoch
        curve.append({"stage": "posenet", "epoch": epoch, "loss": total / n, "mean_dist": dist_total / n})
        log.info("posenet epoch %d loss %.6f dist %.5f (%.1fs)", epoch, total / n, dist_total / n, time.perf_counter() - t0)
    return params, curve


def predict_pose(params: Params, config: RunConfig, scene: Scene) -> Pose:
    preds = posenet.forward(scene.cloud, params, config.net, scene.obj_index)
    return posenet.select_pose(preds)[0]


# ---------------------------------------------------------------------------
# refinement

Refiner = Callable[[Pose, Scene], Pose]


def iterative_refine(initial: Pose, observed: Scene, refiner: Refiner, K: int) -> Pose:
    """Left-compose ``K`` predicted residuals: ``p_K = r_K * ... * r_1 * p_0``."""
    if K < 0:
        raise ValueError("K must be >= 0")
    pose = initial
    for _ in range(K):
        pose = compose_poses(refiner(pose, observed), pose)
    return pose


def canonical_cloud(current: Pose, cloud: PointCloud) -> PointCloud:
    """Observed points pulled back into the frame of the current estimate."""
    return transform_points(current.inverse(), cloud)


@dataclass
class NetworkRefiner:
    """Refiner network wrapped as a left-residual predictor.

    The network sees the cloud in the current estimate's frame and predicts a
    right-side correction ``d`` (``gt ~ current * d``); the equivalent left
    residual is ``current * d * current^-1``.
    """

    params: Params
    config: RunConfig
    objects: list[ObjectModel] | None = None

    def delta(self, current: Pose, scene: Scene) -> Pose:
        q, t = posenet.refiner_forward(canonical_cloud(current, scene.cloud), self.params, self.config.net, scene.obj_index)
        return Pose(q.data, t.data)

    def __call__(self, current: Pose, scene: Scene) -> Pose:
        d = self.delta(current, scene)
        if self.objects is not None:
            # with the models at hand, keep a step only if it fits the observation better
            model = self.objects[scene.obj_index].points
            if fit_residual(model, compose_poses(current, d), scene.cloud) > fit_residual(model, current, scene.cloud):
                return Pose.identity()
        return compose_poses(compose_poses(current, d), current.inverse())


def fit_residual(model_points: np.ndarray, pose: Pose, cloud: PointCloud) -> float:
    """Mean distance from each observed point to the nearest model point placed at ``pose``."""
    return float(nearest_neighbors(cloud.points, transform_points(pose, model_points))[1].mean())


def train_refiner(config: RunConfig, objects, main_params: Params, params: Params | None = None):
    params = posenet.init_refiner_params(config.net, config.seed) if params is None else params
    main = frozen(main_params)
    opt = Adam(params, lr=config.learning_rate)
    curve, step = [], 0
    steps = config.refine_epochs * config.scenes_per_epoch * config.refine_iters
    for epoch in range(config.refine_epochs):
        total, count = 0.0, 0
        for i, scene in enumerate(scene_stream(config, objects, TRAIN, epoch, config.scenes_per_epoch)):
            model = objects[scene.obj_index]
            pts = model.points[loss_subset(config, model, epoch, i)]
            current = predict_pose(main, config, scene)
            for _ in range(config.refine_iters):
                opt.lr = scheduled_lr(config.learning_rate, step, steps, config.lr_schedule)
                opt.zero_grad()
                q, t = posenet.refiner_forward(canonical_cloud(current, scene.cloud), params, config.net, scene.obj_index)
                target = transform_points(compose_poses(current.inverse(), scene.sample.gt), pts)
                per = hypothesis_losses(
                    pts, target, T.quat_to_rotmat(T.reshape(q, (1, 4))), T.reshape(t, (1, 3)), model.symmetric
                )
                loss = T.mean(per)
                value = loss.item()
                if not math.isfinite(value):
                    raise DivergenceError("refiner", epoch, step, value)
                T.backward(loss)
                opt.step()
                step += 1
                total += value
                count += 1
                current = compose_poses(current, Pose(q.data, t.data))
        if count:
            curve.append({"stage": "refiner", "epoch": epoch, "loss": total / count, "mean_dist": total / count})
            log.info("refiner epoch %d loss %.6f", epoch, total / count)
    return params, curve


# ---------------------------------------------------------------------------
# evaluation


def _errors(model: ObjectModel, gt: Pose, pred: Pose) -> tuple[float, float]:
    return add_loss(model, gt, pred), adds_loss(model, gt, pred)


def stage_report(stage: str, objects, scenes: list[Scene], poses: list[Pose]) -> MetricReport:
    per_obj = []
    for k, model in enumerate(objects):
        pairs = [_errors(model, s.sample.gt, p) for s, p in zip(scenes, poses) if s.obj_index == k]
        if pairs:
            add_e, adds_e = zip(*pairs)
            per_obj.append(ObjectMetrics.from_errors(model, add_e, adds_e))
    return MetricReport.build(stage, per_obj)


def param_counts(config: RunConfig, main: Params, refiner: Params | None) -> dict[str, int]:
    per_instance = {p: pam_param_count(config.net.pam.at(config.net.layer_width(p))) for p in config.net.pam_points()}
    flat = {"posenet": count_params(main), "pam_total": sum(per_instance.values())}
    flat.update({f"pam.{k}": v for k, v in per_instance.items()})
    if refiner is not None:
        flat["refiner"] = count_params(refiner)
    return flat


def evaluate(
    config: RunConfig,
    main_params: Params,
    refiner: Refiner | None,
    objects=None,
    scenes: list[Scene] | None = None,
    predictor: Callable[[Scene], Pose] | None = None,
    metadata: dict | None = None,
) -> EvalReport:
    """Metrics without and with ``K``-step refinement on the same scene set."""
    objects = build_objects(config) if objects is None else objects
    scenes = eval_scenes(config, objects) if scenes is None else scenes
    main = frozen(main_params)
    predictor = predictor or (lambda s: predict_pose(main, config, s))
    initial = [predictor(s) for s in scenes]
    if refiner is None or config.refine_iters == 0:
        refined = list(initial)
    else:
        refined = [iterative_refine(p, s, refiner, config.refine_iters) for p, s in zip(initial, scenes)]
    meta = {"seed": config.seed, "config_hash": config.config_hash(), "param_counts": param_counts(config, main_params, None)}
    meta.update(metadata or {})
    return EvalReport(meta, stage_report("unrefined", objects, scenes, initial), stage_report("refined", objects, scenes, refined))


# ---------------------------------------------------------------------------
# full run


@dataclass
class TrainResult:
    config: RunConfig
    params: Params
    refiner_params: Params | None
    report: EvalReport
    loss_curve: list[dict] = field(default_factory=list)
    output_dir: Path | None = None


def train(config: RunConfig) -> TrainResult:
    """Train posenet, then the refiner on the frozen posenet, then evaluate on held-out scenes."""
    objects = build_objects(config)
    params, curve = train_posenet(config, objects)
    refiner_params = None
    if config.refine_iters > 0 and config.refine_epochs > 0:
        refiner_params, rcurve = train_refiner(config, objects, params)
        curve += rcurve
    refiner = NetworkRefiner(frozen(refiner_params), config, objects) if refiner_params is not None else None
    counts = param_counts(config, params, refiner_params)
    report = evaluate(config, params, refiner, objects, metadata={"param_counts": counts})
    result = TrainResult(config, params, refiner_params, report, curve)
    if config.output_dir:
        result.output_dir = write_outputs(result)
    return result


def train_best_of(config: RunConfig) -> TrainResult:
    """Train ``repeats`` times with seeds ``seed, seed + 1, ...`` and keep the run with the best refined AUC.

    Every run's seed and AUCs are listed in the kept report's metadata.
    """
    runs = []
    for i in range(config.repeats):
        cfg = replace(config, seed=config.seed + i, repeats=1, output_dir=None)
        runs.append(train(cfg))
    best = max(runs, key=lambda r: (r.report.refined.aggregate["auc"], -r.config.seed))
    best.report.metadata["repeats"] = [
        {"seed": r.config.seed, "auc": r.report.unrefined.aggregate["auc"], "refined_auc": r.report.refined.aggregate["auc"]}
        for r in runs
    ]
    best.config = replace(best.config, output_dir=config.output_dir)
    if config.output_dir:
        best.output_dir = write_outputs(best)
    return best


def write_outputs(result: TrainResult) -> Path:
    out = Path(result.config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(result.report.to_json() + "\n")
    (out / "report.csv").write_text(result.report.to_csv())
    lines = ["stage,epoch,loss,mean_dist"] + [
        f"{r['stage']},{r['epoch']},{r['loss']!r},{r['mean_dist']!r}" for r in result.loss_curve
    ]
    (out / "loss_curve.csv").write_text("\n".join(lines) + "\n")
    save_config(out / "config.json", result.config)
    all_params = dict(result.params)
    if result.refiner_params is not None:
        all_params.update(result.refiner_params)
    save_checkpoint(out / "checkpoint.bin", all_params, {"config": result.config.to_flat(), "config_hash": result.config.config_hash()})
    return out


def load_run(checkpoint: str | Path, config: RunConfig | None = None) -> tuple[RunConfig, Params, Params | None]:
    params, meta = load_checkpoint(checkpoint)
    stored = RunConfig.from_flat(meta["config"])
    config = stored if config is None else config
    expected = posenet.init_posenet_params(config.net, 0)
    for name, p in expected.items():
        if name not in params or params[name].shape != p.shape:
            raise CheckpointVersionError(f"checkpoint is incompatible with the config: parameter {name!r}")
    main = {k: v for k, v in params.items() if not k.startswith("ref.")}
    ref = {k: v for k, v in params.items() if k.startswith("ref.")} or None
    return config, main, ref
