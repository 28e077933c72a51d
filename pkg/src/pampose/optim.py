"""Parameter initialization and the Adam optimizer."""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

Params = dict[str, Tensor]


def param_rng(seed: int, name: str) -> np.random.Generator:
    # one stream per parameter name, so adding a module never shifts another's init
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def init_layer(params: Params, name: str, fan_in: int, fan_out: int, seed: int) -> None:
    bound = np.sqrt(1.0 / fan_in)
    rng = param_rng(seed, name)
    params[f"{name}.weight"] = Tensor(rng.uniform(-bound, bound, (fan_out, fan_in)), requires_grad=True)
    params[f"{name}.bias"] = Tensor(rng.uniform(-bound, bound, fan_out), requires_grad=True)


def count_params(params: Params) -> int:
    return int(sum(p.data.size for p in params.values()))


@dataclass
class Adam:
    params: Params
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    _m: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    _v: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for name in sorted(self.params):
            p = self.params[name]
            if p.grad is None:
                continue
            g = p.grad
            m = self._m.get(name)
            v = self._v.get(name)
            m = (1 - self.beta1) * g if m is None else self.beta1 * m + (1 - self.beta1) * g
            v = (1 - self.beta2) * g * g if v is None else self.beta2 * v + (1 - self.beta2) * g * g
            self._m[name], self._v[name] = m, v
            if self.lr != 0.0:
                p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def scheduled_lr(base: float, step: int, total: int, schedule: str = "cosine", floor: float = 0.05) -> float:
    """Learning rate at ``step`` of ``total``: constant, or cosine decay from ``base`` to ``floor * base``."""
    if schedule == "constant" or total <= 1:
        return base
    if schedule != "cosine":
        raise ValueError(f"unknown learning-rate schedule {schedule!r}")
    frac = min(step, total - 1) / (total - 1)
    return base * (floor + (1.0 - floor) * 0.5 * (1.0 + math.cos(math.pi * frac)))
