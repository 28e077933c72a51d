"""Point Attention Module.

Two paths score a ``[C x N]`` feature map. The channel path pools over
points and runs a bottleneck MLP, giving one logit per channel. The
geometric path is a stack of pointwise convs ending in a single channel,
giving one logit per point. The logits are broadcast-summed and squashed
once by a sigmoid, and the resulting map re-weights the input residually:
``F' = F + F * A``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .optim import Params, init_layer
from .tensor import DimensionError, Tensor


@dataclass(frozen=True)
class PamConfig:
    channels: int = 64
    reduction_ratio: int = 16
    gap_conv_count: int = 3
    insertion_points: tuple[str, ...] = ("geo1", "app1")
    enable_cap: bool = True
    enable_gap: bool = True

    def __post_init__(self):
        if self.reduction_ratio < 1:
            raise ValueError(f"reduction_ratio must be >= 1, got {self.reduction_ratio}")
        if self.channels % self.reduction_ratio:
            raise ValueError(
                f"channels ({self.channels}) must be divisible by reduction_ratio ({self.reduction_ratio})"
            )
        if self.gap_conv_count < 2:
            raise ValueError("gap_conv_count must be >= 2 (reduce + output layers)")

    @property
    def hidden(self) -> int:
        return self.channels // self.reduction_ratio

    @property
    def enabled(self) -> bool:
        return self.enable_cap or self.enable_gap

    def at(self, channels: int) -> "PamConfig":
        """Same settings for a layer with a different width."""
        return PamConfig(
            channels, self.reduction_ratio, self.gap_conv_count, self.insertion_points, self.enable_cap, self.enable_gap
        )


@dataclass
class PamParams:
    """Weights of one module instance, keyed by layer name."""

    config: PamConfig
    cap: list[tuple[Tensor, Tensor]] = field(default_factory=list)
    gap: list[tuple[Tensor, Tensor]] = field(default_factory=list)

    def named(self, prefix: str) -> Params:
        out: Params = {}
        for i, (w, b) in enumerate(self.cap):
            out[f"{prefix}.cap{i}.weight"], out[f"{prefix}.cap{i}.bias"] = w, b
        for i, (w, b) in enumerate(self.gap):
            out[f"{prefix}.gap{i}.weight"], out[f"{prefix}.gap{i}.bias"] = w, b
        return out

    @classmethod
    def from_named(cls, params: Params, prefix: str, config: PamConfig) -> "PamParams":
        cap, gap = [], []
        i = 0
        while f"{prefix}.cap{i}.weight" in params:
            cap.append((params[f"{prefix}.cap{i}.weight"], params[f"{prefix}.cap{i}.bias"]))
            i += 1
        i = 0
        while f"{prefix}.gap{i}.weight" in params:
            gap.append((params[f"{prefix}.gap{i}.weight"], params[f"{prefix}.gap{i}.bias"]))
            i += 1
        return cls(config, cap, gap)


def _cap_shapes(cfg: PamConfig) -> list[tuple[int, int]]:
    return [(cfg.channels, cfg.hidden), (cfg.hidden, cfg.channels)]


def _gap_shapes(cfg: PamConfig) -> list[tuple[int, int]]:
    h = cfg.hidden
    return [(cfg.channels, h)] + [(h, h)] * (cfg.gap_conv_count - 2) + [(h, 1)]


def init_pam_params(config: PamConfig, seed: int, prefix: str = "pam") -> PamParams:
    params: Params = {}
    if config.enable_cap:
        for i, (fan_in, fan_out) in enumerate(_cap_shapes(config)):
            init_layer(params, f"{prefix}.cap{i}", fan_in, fan_out, seed)
    if config.enable_gap:
        for i, (fan_in, fan_out) in enumerate(_gap_shapes(config)):
            init_layer(params, f"{prefix}.gap{i}", fan_in, fan_out, seed)
    return PamParams.from_named(params, prefix, config)


def pam_param_count(config: PamConfig) -> int:
    """Exact weight + bias count of one module instance."""
    shapes = []
    if config.enable_cap:
        shapes += _cap_shapes(config)
    if config.enable_gap:
        shapes += _gap_shapes(config)
    return sum(fan_in * fan_out + fan_out for fan_in, fan_out in shapes)


def _check_channels(F: Tensor, layers: list[tuple[Tensor, Tensor]], path: str) -> None:
    if F.ndim != 2:
        raise DimensionError(f"{path} expects a [C x N] feature map, got {F.shape}")
    if not layers:
        raise ValueError(f"{path} has no parameters (path disabled)")
    expected = layers[0][0].shape[1]
    if F.shape[0] != expected:
        raise DimensionError(f"{path}: feature map has {F.shape[0]} channels, parameters expect {expected}")


def cap_forward(F: Tensor, params: PamParams) -> Tensor:
    """Channel logits ``[C]`` (pre-sigmoid)."""
    _check_channels(F, params.cap, "cap_forward")
    h = T.global_avg_pool(F)
    for i, (w, b) in enumerate(params.cap):
        h = T.dense(h, w, b)
        if i < len(params.cap) - 1:
            h = T.relu(h)
    return h


def gap_forward(F: Tensor, params: PamParams) -> Tensor:
    """Per-point logits ``[1 x N]`` (pre-sigmoid); no pooling, so points never mix.

    Uses the column-exact conv: permuting points permutes the logits bit for bit.
    """
    _check_channels(F, params.gap, "gap_forward")
    h = F
    for i, (w, b) in enumerate(params.gap):
        h = T.pointwise_conv(h, w, b, exact=True)
        if i < len(params.gap) - 1:
            h = T.relu(h)
    return h


def combine_paths(
    cap_logits: Tensor | None, gap_logits: Tensor | None, shape: tuple[int, int] | None = None
) -> Tensor:
    """``A[c, n] = sigmoid(cap[c] + gap[0, n])``.

    Either path may be ``None`` (ablated); the surviving logits are then
    broadcast to ``shape`` on their own.
    """
    if cap_logits is None and gap_logits is None:
        raise ValueError("combine_paths needs at least one path")
    if cap_logits is not None and gap_logits is not None:
        logits = T.elementwise(T.repeat_columns(cap_logits, gap_logits.shape[1]), gap_logits, "add", broadcast=True)
    elif shape is None:
        raise ValueError("shape is required when one path is absent")
    elif gap_logits is None:
        logits = T.repeat_columns(cap_logits, shape[1])
    else:
        logits = T.elementwise(Tensor(np.zeros(shape)), gap_logits, "add", broadcast=True)
    return T.sigmoid(logits)


def apply_attention(F: Tensor, A: Tensor) -> Tensor:
    """Residual re-weighting ``F + F * A``, computed as ``F * (1 + A)``."""
    if F.shape != A.shape:
        raise DimensionError(f"apply_attention shape mismatch: features {F.shape} vs attention {A.shape}")
    return T.mul(F, T.add(A, 1.0))


def attention_map(F: Tensor, params: PamParams) -> Tensor:
    cfg = params.config
    cap = cap_forward(F, params) if cfg.enable_cap else None
    gap = gap_forward(F, params) if cfg.enable_gap else None
    return combine_paths(cap, gap, shape=F.shape)


def pam_forward(F: Tensor, params: PamParams) -> Tensor:
    if not params.config.enabled:
        return F
    return apply_attention(F, attention_map(F, params))
