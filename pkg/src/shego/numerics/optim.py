"""Parameter groups and the AdamW optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class ParamGroup:
    name: str
    params: dict[str, Tensor]
    lr: float = 1e-3
    weight_decay: float = 0.0
    frozen: bool = False

    def __post_init__(self):
        for t in self.params.values():
            t.requires_grad = not self.frozen

    def freeze(self) -> None:
        self.frozen = True
        for t in self.params.values():
            t.requires_grad = False
            t.grad = None


def global_grad_norm(groups) -> float:
    total = 0.0
    for group in groups:
        if group.frozen:
            continue
        for t in group.params.values():
            if t.grad is not None:
                total += float(np.sum(np.square(t.grad, dtype=np.float64)))
    return float(np.sqrt(total))


def clip_grad_norm(groups, max_norm: float) -> float:
    """Rescale gradients in place so their global L2 norm is at most ``max_norm``."""
    norm = global_grad_norm(groups)
    if norm > max_norm > 0:
        scale = max_norm / (norm + 1e-12)
        for group in groups:
            if group.frozen:
                continue
            for t in group.params.values():
                if t.grad is not None:
                    t.grad = t.grad * np.asarray(scale, dtype=t.grad.dtype)
    return norm


@dataclass
class AdamW:
    """Adam with decoupled weight decay, one hyperparameter set per group.

    Frozen groups are skipped entirely and never get moment buffers.
    """

    groups: list[ParamGroup]
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step_count: int = 0
    state: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def zero_grad(self) -> None:
        for group in self.groups:
            for t in group.params.values():
                t.grad = None

    def step(self) -> None:
        b1, b2 = self.betas
        for group in self.groups:
            if group.frozen:
                continue
            for name, t in group.params.items():
                if t.grad is not None and not np.all(np.isfinite(t.grad)):
                    raise FloatingPointError(f"non-finite gradient in parameter {group.name}/{name}")
        self.step_count += 1
        k = self.step_count
        bc1 = 1.0 - b1 ** k
        bc2 = 1.0 - b2 ** k
        for group in self.groups:
            if group.frozen:
                continue
            for name, t in group.params.items():
                key = f"{group.name}/{name}"
                g = t.grad if t.grad is not None else np.zeros_like(t.data)
                if key not in self.state:
                    self.state[key] = (np.zeros_like(t.data), np.zeros_like(t.data))
                m, v = self.state[key]
                m *= b1
                m += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * g * g
                if group.weight_decay:
                    t.data *= 1.0 - group.lr * group.weight_decay
                t.data -= group.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
