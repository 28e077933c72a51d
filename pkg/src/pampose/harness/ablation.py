"""Paired ablation sweeps over a base run config.

Every arm shares the base seed, so all arms see the same objects, training
scenes and held-out scenes; only the overridden keys differ.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..pam import pam_param_count
from .config import ConfigError, RunConfig
from .train import train

log = logging.getLogger(__name__)

# full-scale ADD(S) AUC values, shown beside desk-scale results as citations only
REFERENCE_ADDS = {
    "base": 94.3,
    "r=4": 97.0,
    "r=8": 97.2,
    "r=16": 97.8,
    "r=32": 97.1,
    "r=64": 97.3,
    "CAP": 97.6,
    "GAP": 96.3,
    "CAP+GAP": 97.8,
}
# keys an arm may not override, or the comparison stops being paired
PAIRED_KEYS = ("seed", "objects", "scenes_per_epoch", "eval_scenes", "model_points")


@dataclass(frozen=True)
class Arm:
    name: str
    overrides: dict = field(default_factory=dict)


@dataclass(frozen=True)
class AblationSpec:
    name: str
    base: RunConfig
    arms: tuple[Arm, ...]

    def __post_init__(self):
        if len(self.arms) < 2:
            raise ConfigError("an ablation needs at least two arms")
        names = [a.name for a in self.arms]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate arm names in {names}")
        for arm in self.arms:
            shared = sorted(set(arm.overrides) & set(PAIRED_KEYS))
            if shared:
                raise ConfigError(f"arm {arm.name!r} overrides paired keys {shared}")

    def config(self, arm: Arm) -> RunConfig:
        return self.base.with_overrides({**arm.overrides, "output_dir": None})


def path_sweep(base: RunConfig) -> AblationSpec:
    """No PAM, channel path only, geometric path only, both paths."""
    arms = (
        Arm("base", {"pam.enable_cap": False, "pam.enable_gap": False}),
        Arm("CAP", {"pam.enable_cap": True, "pam.enable_gap": False}),
        Arm("GAP", {"pam.enable_cap": False, "pam.enable_gap": True}),
        Arm("CAP+GAP", {"pam.enable_cap": True, "pam.enable_gap": True}),
    )
    return AblationSpec("paths", base, arms)


def ratio_sweep(base: RunConfig, ratios=(4, 8, 16, 32, 64)) -> AblationSpec:
    arms = tuple(
        Arm(f"r={r}", {"pam.reduction_ratio": r, "pam.enable_cap": True, "pam.enable_gap": True}) for r in ratios
    )
    return AblationSpec("reduction_ratio", base, arms)


SWEEPS = {"paths": path_sweep, "ratio": ratio_sweep}


def pam_total(config: RunConfig) -> int:
    net = config.net
    return sum(pam_param_count(net.pam.at(net.layer_width(p))) for p in net.pam_points())


@dataclass
class ArmRow:
    arm: str
    status: str
    error: str = ""
    posenet_params: int = 0
    pam_params: int = 0
    delta_params: int = 0
    unrefined_auc: float = float("nan")
    unrefined_lt_2cm: float = float("nan")
    unrefined_mean_error_rel: float = float("nan")
    refined_auc: float = float("nan")
    refined_lt_2cm: float = float("nan")
    refined_mean_error_rel: float = float("nan")
    reference_adds: float | None = None


@dataclass
class SweepResult:
    name: str
    rows: list[ArmRow]

    @property
    def ok(self) -> bool:
        return all(r.status == "ok" for r in self.rows)

    def to_dict(self) -> dict:
        rows = []
        for r in self.rows:
            d = asdict(r)
            # NaN is not valid JSON; failed arms carry null metrics
            rows.append({k: (None if isinstance(v, float) and v != v else v) for k, v in d.items()})
        return {"sweep": self.name, "ok": self.ok, "arms": rows}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        names = list(ArmRow.__dataclass_fields__)
        writer = csv.DictWriter(buf, fieldnames=names, lineterminator="\n")
        writer.writeheader()
        for r in self.to_dict()["arms"]:
            writer.writerow({k: ("" if r[k] is None else r[k]) for k in names})
        return buf.getvalue()

    def write(self, out_dir: str | Path) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"ablation_{self.name}.json").write_text(self.to_json() + "\n")
        (out / f"ablation_{self.name}.csv").write_text(self.to_csv())
        return out


def _run_arm(spec: AblationSpec, arm: Arm) -> ArmRow:
    try:
        config = spec.config(arm)
        result = train(config)
    except Exception as exc:  # a failed arm is recorded and the sweep goes on
        log.error("arm %s failed: %s", arm.name, exc)
        return ArmRow(arm.name, "failed", error=f"{type(exc).__name__}: {exc}", reference_adds=REFERENCE_ADDS.get(arm.name))
    un, re = result.report.unrefined.aggregate, result.report.refined.aggregate
    counts = result.report.metadata["param_counts"]
    return ArmRow(
        arm.name,
        "ok",
        posenet_params=counts["posenet"],
        pam_params=pam_total(config),
        unrefined_auc=un["auc"],
        unrefined_lt_2cm=un["acc_at_2cm"],
        unrefined_mean_error_rel=un["mean_error_rel"],
        refined_auc=re["auc"],
        refined_lt_2cm=re["acc_at_2cm"],
        refined_mean_error_rel=re["mean_error_rel"],
        reference_adds=REFERENCE_ADDS.get(arm.name),
    )


def ablation_sweep(spec: AblationSpec, output_dir: str | Path | None = None, workers: int = 1) -> SweepResult:
    """Train and evaluate every arm; parameter deltas are relative to the first arm."""
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        rows = list(pool.map(lambda a: _run_arm(spec, a), spec.arms))
    first = rows[0]
    for r in rows:
        if r.status == "ok" and first.status == "ok":
            r.delta_params = r.posenet_params - first.posenet_params
    result = SweepResult(spec.name, rows)
    if output_dir is not None:
        result.write(output_dir)  # single writer, after every arm has finished
    return result
