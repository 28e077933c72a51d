"""Pose accuracy metrics: ADD / ADD-S distances, AUC over 0-10 cm, accuracy below 2 cm."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import jsonschema
import numpy as np

from .geometry import Pose
from .losses import ObjectModel, add_loss, adds_loss

AUC_MAX_THRESHOLD = 0.10
ACCURACY_THRESHOLD = 0.02


def pose_error(model: ObjectModel, gt: Pose, pred: Pose) -> float:
    """ADD for asymmetric models, ADD-S for symmetric ones (meters)."""
    return adds_loss(model, gt, pred) if model.symmetric else add_loss(model, gt, pred)


def _check_errors(errors) -> np.ndarray:
    e = np.asarray(errors, dtype=np.float64).ravel()
    if e.size == 0:
        raise ValueError("metric needs at least one error value")
    if np.any(e < 0) or not np.all(np.isfinite(e)):
        raise ValueError("errors must be finite and non-negative")
    return e


def auc_curve(errors, max_threshold: float = AUC_MAX_THRESHOLD) -> tuple[float, np.ndarray]:
    """Exact area under ``acc(tau) = #{e < tau} / n`` on ``[0, max_threshold]``, normalized.

    Each error ``e`` contributes the interval ``(e, max_threshold]`` to the
    integral, so the area is ``mean(max(0, max_threshold - e))``; it is
    evaluated as ``1 - mean(min(e, max)) / max`` so that the extremes come out as exactly 0 and 1. The curve is
    returned as its breakpoints ``[(tau, acc(tau+)), ...]``.
    """
    e = _check_errors(errors)
    auc = min(1.0, max(0.0, 1.0 - float((np.minimum(e, max_threshold) / max_threshold).mean())))
    inside = np.sort(e[e < max_threshold])
    taus = np.concatenate([[0.0], inside, [max_threshold]])
    accs = np.array([np.count_nonzero(e <= t) / e.size for t in taus[:-1]] + [np.count_nonzero(e < max_threshold) / e.size])
    return auc, np.column_stack([taus, accs])


def accuracy_at_threshold(errors, threshold: float = ACCURACY_THRESHOLD) -> float:
    e = _check_errors(errors)
    return float(np.count_nonzero(e < threshold) / e.size)


# ---------------------------------------------------------------------------
# reports


@dataclass
class ObjectMetrics:
    object_id: str
    count: int
    diameter: float
    symmetric: bool
    add_auc: float
    adds_auc: float
    auc: float
    acc_at_2cm: float
    mean_error: float
    mean_error_rel: float

    @classmethod
    def from_errors(cls, model: ObjectModel, add_err, adds_err) -> "ObjectMetrics":
        add_err, adds_err = np.asarray(add_err), np.asarray(adds_err)
        err = adds_err if model.symmetric else add_err
        return cls(
            object_id=model.id,
            count=int(err.size),
            diameter=float(model.diameter),
            symmetric=bool(model.symmetric),
            add_auc=auc_curve(add_err)[0],
            adds_auc=auc_curve(adds_err)[0],
            auc=auc_curve(err)[0],
            acc_at_2cm=accuracy_at_threshold(err),
            mean_error=float(err.mean()),
            mean_error_rel=float(err.mean() / model.diameter),
        )


@dataclass
class MetricReport:
    """Per-object and aggregate metrics for one evaluation stage."""

    stage: str
    per_object: list[ObjectMetrics]
    aggregate: dict[str, float] = field(default_factory=dict)

    @classmethod
    def build(cls, stage: str, per_object: list[ObjectMetrics], errors_rel: list[float] | None = None) -> "MetricReport":
        counts = np.array([o.count for o in per_object], dtype=np.float64)
        wmean = lambda key: float(np.dot(counts, [getattr(o, key) for o in per_object]) / counts.sum())  # noqa: E731
        agg = {k: wmean(k) for k in ("add_auc", "adds_auc", "auc", "acc_at_2cm", "mean_error", "mean_error_rel")}
        agg["count"] = int(counts.sum())
        return cls(stage, per_object, agg)

    def to_dict(self) -> dict:
        return {"stage": self.stage, "per_object": [asdict(o) for o in self.per_object], "aggregate": self.aggregate}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(d["stage"], [ObjectMetrics(**o) for o in d["per_object"]], dict(d["aggregate"]))


_UNIT = {"type": "number", "minimum": 0, "maximum": 1}
_OBJECT_SCHEMA = {
    "type": "object",
    "required": [
        "object_id", "count", "diameter", "symmetric", "add_auc", "adds_auc", "auc",
        "acc_at_2cm", "mean_error", "mean_error_rel",
    ],
    "properties": {
        "object_id": {"type": "string"},
        "count": {"type": "integer", "minimum": 1},
        "diameter": {"type": "number", "exclusiveMinimum": 0},
        "symmetric": {"type": "boolean"},
        "add_auc": _UNIT,
        "adds_auc": _UNIT,
        "auc": _UNIT,
        "acc_at_2cm": _UNIT,
        "mean_error": {"type": "number", "minimum": 0},
        "mean_error_rel": {"type": "number", "minimum": 0},
    },
    "additionalProperties": False,
}
_STAGE_SCHEMA = {
    "type": "object",
    "required": ["stage", "per_object", "aggregate"],
    "properties": {
        "stage": {"type": "string"},
        "per_object": {"type": "array", "items": _OBJECT_SCHEMA, "minItems": 1},
        "aggregate": {
            "type": "object",
            "required": ["auc", "acc_at_2cm", "mean_error", "mean_error_rel", "count"],
            "properties": {k: _UNIT for k in ("add_auc", "adds_auc", "auc", "acc_at_2cm")},
        },
    },
}
REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "pampose evaluation report",
    "type": "object",
    "required": ["format", "metadata", "unrefined", "refined"],
    "properties": {
        "format": {"const": "pampose-report/1"},
        "metadata": {
            "type": "object",
            "required": ["seed", "config_hash", "param_counts"],
            "properties": {
                "seed": {"type": "integer"},
                "config_hash": {"type": "string"},
                "param_counts": {"type": "object", "additionalProperties": {"type": "integer"}},
            },
        },
        "unrefined": _STAGE_SCHEMA,
        "refined": _STAGE_SCHEMA,
    },
}


@dataclass
class EvalReport:
    """Unrefined and refined metrics on the same scene set, plus run metadata."""

    metadata: dict
    unrefined: MetricReport
    refined: MetricReport

    def to_dict(self) -> dict:
        return {
            "format": "pampose-report/1",
            "metadata": self.metadata,
            "unrefined": self.unrefined.to_dict(),
            "refined": self.refined.to_dict(),
        }

    def to_json(self) -> str:
        doc = self.to_dict()
        validate_report(doc)
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        doc = json.loads(text)
        validate_report(doc)
        return cls(doc["metadata"], MetricReport.from_dict(doc["unrefined"]), MetricReport.from_dict(doc["refined"]))

    def to_csv(self) -> str:
        """One row per object (AUC and <2 cm, without and with refinement), then a MEAN row."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["object_id", "auc", "lt_2cm", "refined_auc", "refined_lt_2cm"])
        refined = {o.object_id: o for o in self.refined.per_object}
        for o in self.unrefined.per_object:
            r = refined[o.object_id]
            w.writerow([o.object_id] + [f"{100 * v:.2f}" for v in (o.auc, o.acc_at_2cm, r.auc, r.acc_at_2cm)])
        a, b = self.unrefined.aggregate, self.refined.aggregate
        w.writerow(["MEAN"] + [f"{100 * v:.2f}" for v in (a["auc"], a["acc_at_2cm"], b["auc"], b["acc_at_2cm"])])
        return buf.getvalue()


def validate_report(doc: dict) -> None:
    jsonschema.validate(doc, REPORT_SCHEMA)
