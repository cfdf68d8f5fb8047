"""Adam with a linear-decay learning-rate schedule (no warmup)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, ContractError, ShapeError


@dataclass(frozen=True)
class OptimizerConfig:
    initial_lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    total_steps: int = 1
    schedule: str = "linear_decay"

    def __post_init__(self):
        problems = []
        # lr == 0 is allowed so that a frozen "training" run is expressible.
        if not self.initial_lr >= 0:
            problems.append(f"initial_lr must be >= 0, got {self.initial_lr}")
        for name in ("beta1", "beta2"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                problems.append(f"{name} must lie in [0, 1), got {v}")
        if not self.eps > 0:
            problems.append(f"eps must be positive, got {self.eps}")
        if int(self.total_steps) != self.total_steps or self.total_steps < 1:
            problems.append(f"total_steps must be a positive integer, got {self.total_steps}")
        if self.schedule != "linear_decay":
            problems.append(f"unknown schedule {self.schedule!r}")
        if problems:
            raise ConfigError("invalid optimizer config", problems)


def lr_at(cfg: OptimizerConfig, step_index: int) -> float:
    """Learning rate for 1-based ``step_index``: starts at the peak, decays linearly."""
    if not 1 <= step_index <= cfg.total_steps:
        raise ContractError(f"step {step_index} outside [1, {cfg.total_steps}]")
    return cfg.initial_lr * (1.0 - (step_index - 1) / cfg.total_steps)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    def copy(self) -> "AdamState":
        return AdamState({k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()}, self.step)


def adam_step(params: dict, grads: dict, state: AdamState, cfg: OptimizerConfig,
              step_index: int) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update of the tensors named in ``grads``.

    Returns fresh ``(params, state)``; inputs are left untouched. Parameters
    without a gradient entry are carried over unchanged (frozen).
    """
    lr = lr_at(cfg, step_index)
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** step_index
    c2 = 1.0 - b2 ** step_index
    new_params = dict(params)
    new_m, new_v = dict(state.m), dict(state.v)
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, param {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        elif m.shape != p.shape or v.shape != p.shape:
            raise ShapeError(f"optimizer state for {name} does not match its parameter")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_params[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(new_m, new_v, step_index)
