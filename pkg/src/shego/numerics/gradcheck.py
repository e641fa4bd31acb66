"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    max_abs_error: float
    checked: int
    passed: bool


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-7) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero entries from dominating."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def finite_diff_check(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    epsilon: float = 1e-6,
    tolerance: float = 1e-4,
    max_coords: int | None = 64,
    seed: int = 0,
    analytic: Mapping[str, np.ndarray] | None = None,
) -> dict[str, GradCheckResult]:
    """Compare backprop gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` must rebuild the graph from the current parameter values on
    each call. Tensors larger than ``max_coords`` are checked on a random
    coordinate subset. Pass ``analytic`` to check externally supplied
    gradients instead of running backward.
    """
    if analytic is None:
        for t in params.values():
            t.grad = None
        loss_fn().backward()
        analytic = {name: (t.grad if t.grad is not None else np.zeros_like(t.data))
                    for name, t in params.items()}
    rng = np.random.default_rng(seed)
    report = {}
    for name, t in params.items():
        flat = t.data.reshape(-1)
        n = flat.size
        if max_coords is not None and n > max_coords:
            coords = np.sort(rng.choice(n, size=max_coords, replace=False))
        else:
            coords = np.arange(n)
        numeric = np.empty(len(coords))
        for k, i in enumerate(coords):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = float(loss_fn().data)
            flat[i] = orig - epsilon
            down = float(loss_fn().data)
            flat[i] = orig
            numeric[k] = (up - down) / (2 * epsilon)
        a = np.asarray(analytic[name], dtype=np.float64).reshape(-1)[coords]
        rel = relative_error(a, numeric)
        max_rel = float(rel.max()) if rel.size else 0.0
        max_abs = float(np.abs(a - numeric).max()) if rel.size else 0.0
        report[name] = GradCheckResult(name, max_rel, max_abs, len(coords), max_rel < tolerance)
    return report
