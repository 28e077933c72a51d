"""Shape classification (sphere / box / cylinder) with and without PAM."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .. import tensor as T
from ..data import SHAPE_LABELS, gen_shape_sample
from ..optim import Adam, Params, count_params
from ..posenet import ClassifierConfig, classify_logits, init_classifier_params
from .train import DivergenceError

log = logging.getLogger(__name__)

# held-out accuracies of the full-scale classifier without and with PAM, quoted for comparison only
REFERENCE_ACCURACY = {"no_pam": 89.2, "pam": 91.1}


@dataclass(frozen=True)
class ClassifyConfig:
    seed: int = 42
    train_per_class: int = 100
    test_per_class: int = 50
    n_points: int = 128
    upright: bool = True
    epochs: int = 8
    learning_rate: float = 1e-3
    model: ClassifierConfig = field(default_factory=ClassifierConfig)

    def __post_init__(self):
        if min(self.train_per_class, self.test_per_class, self.n_points, self.epochs) < 1:
            raise ValueError("sample counts, n_points and epochs must be >= 1")


TRAIN, TEST = 0, 1


def shape_set(config: ClassifyConfig, split: int) -> list[tuple[np.ndarray, int]]:
    """Seeded, class-interleaved sample list; identical for every arm."""
    per_class = config.train_per_class if split == TRAIN else config.test_per_class
    out = []
    for i in range(per_class):
        for label in range(len(SHAPE_LABELS)):
            seed = int(np.random.default_rng([config.seed, split, i, label]).integers(2**31))
            out.append((gen_shape_sample(label, config.n_points, seed, upright=config.upright), label))
    return out


def train_classifier(config: ClassifyConfig, samples) -> tuple[Params, list[float]]:
    params = init_classifier_params(config.model, config.seed)
    opt = Adam(params, lr=config.learning_rate)
    curve = []
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, 7, epoch]).permutation(len(samples))
        total = 0.0
        for step, i in enumerate(order):
            pts, label = samples[i]
            opt.zero_grad()
            loss = T.neg(T.log_softmax(classify_logits(pts, params, config.model))[label])
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError("classifier", epoch, step, value)
            T.backward(loss)
            opt.step()
            total += value
        curve.append(total / len(samples))
        log.info("classifier epoch %d loss %.4f", epoch, curve[-1])
    return params, curve


def accuracy(params: Params, model: ClassifierConfig, samples) -> float:
    hits = sum(int(np.argmax(classify_logits(p, params, model).data)) == y for p, y in samples)
    return hits / len(samples)


@dataclass
class ArmOutcome:
    arm: str
    accuracy: float
    params: int
    final_loss: float
    seconds: float


@dataclass
class ClassifyReport:
    seed: int
    train_samples: int
    test_samples: int
    arms: list[ArmOutcome]
    reference: dict = field(default_factory=lambda: dict(REFERENCE_ACCURACY))

    def arm(self, name: str) -> ArmOutcome:
        return next(a for a in self.arms if a.arm == name)

    def to_dict(self) -> dict:
        d = asdict(self)
        for a in d["arms"]:
            a.pop("seconds")  # wall time would break bit-identical reports
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        rows = ["arm,accuracy,params,final_loss,reference_accuracy"]
        for a in self.arms:
            rows.append(f"{a.arm},{a.accuracy!r},{a.params},{a.final_loss!r},{self.reference.get(a.arm, '')}")
        return "\n".join(rows) + "\n"


def run_classification(config: ClassifyConfig = ClassifyConfig(), arms=("pam", "no_pam")) -> ClassifyReport:
    """Train and test each arm on the same seeded train/test shape sets."""
    train_set, test_set = shape_set(config, TRAIN), shape_set(config, TEST)
    outcomes = []
    for arm in arms:
        if arm not in ("pam", "no_pam"):
            raise ValueError(f"unknown classifier arm {arm!r}")
        cfg = config if arm == "pam" else replace(config, model=config.model.without_pam())
        t0 = time.perf_counter()
        params, curve = train_classifier(cfg, train_set)
        acc = accuracy(params, cfg.model, test_set)
        outcomes.append(ArmOutcome(arm, acc, count_params(params), curve[-1], time.perf_counter() - t0))
        log.info("classifier arm %s accuracy %.4f", arm, acc)
    return ClassifyReport(config.seed, len(train_set), len(test_set), outcomes)
