"""Two-group AdamW training with dev-set early stopping and frozen-weight enforcement."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .backbone import FrozenWeightError
from .data.dialogues import DialogueExample
from .evaluator import MetricsReport, report
from .model import ModelConfig, ShegoModel
from .numerics import AdamW, Tensor, clip_grad_norm

logger = logging.getLogger(__name__)

# (use_gnn, use_graph_prompts, use_active_mask)
ABLATIONS: dict[str, tuple[bool, bool, bool]] = {
    "w/o-Active&GP": (True, False, False),
    "w/o-GP": (True, False, True),
    "w/o-Active": (True, True, False),
    "w/o-SlotConnect": (False, True, True),
    "full": (True, True, True),
}
METRICS_COLUMNS = ("epoch", "train_loss", "dev_jga", "dev_aga", "dev_avg_jga", "seconds")


@dataclass
class TrainConfig:
    batch_size: int = 16
    graph_lr: float = 0.01
    graph_weight_decay: float = 5e-4
    prompt_lr: float = 0.5
    prompt_weight_decay: float = 0.0
    patience: int = 5
    max_epochs: int = 100
    seed: int = 0
    use_gnn: bool = True
    use_graph_prompts: bool = True
    use_active_mask: bool = True
    max_grad_norm: float | None = 1.0
    eval_batch_size: int = 64
    stop_at: float | None = None
    stop_metric: str = "dev_avg_jga"
    log_wall_time: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.stop_metric not in ("dev_avg_jga", "dev_jga"):
            raise ValueError("stop_metric must be dev_avg_jga or dev_jga")

    @property
    def flags(self) -> tuple[bool, bool, bool]:
        return (self.use_gnn, self.use_graph_prompts, self.use_active_mask)


def ablation_flags(name: str) -> tuple[bool, bool, bool]:
    try:
        return ABLATIONS[name]
    except KeyError:
        raise ValueError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}") from None


def with_ablation(config: TrainConfig, name: str) -> TrainConfig:
    gnn, gp, active = ablation_flags(name)
    return replace(config, use_gnn=gnn, use_graph_prompts=gp, use_active_mask=active)


def apply_ablation(flags, model_config: ModelConfig) -> ModelConfig:
    """Copy of ``model_config`` with the three ablation switches set from ``flags``.

    ``flags`` is an ablation name, a (gnn, gp, active) triple, or a TrainConfig.
    """
    if isinstance(flags, str):
        flags = ablation_flags(flags)
    elif isinstance(flags, TrainConfig):
        flags = flags.flags
    gnn, gp, active = flags
    return replace(model_config, use_gnn=bool(gnn), use_graph_prompts=bool(gp), use_active_mask=bool(active))


def compute_loss(batch: Sequence[DialogueExample], model: ShegoModel) -> Tensor:
    if len(batch) == 0:
        raise ValueError("compute_loss needs a nonempty batch")
    return model.loss(batch)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_jga: float
    dev_aga: float | None
    dev_avg_jga: float
    seconds: float | None

    def row(self) -> list[str]:
        return [str(self.epoch), f"{self.train_loss:.6f}", f"{self.dev_jga:.6f}",
                "" if self.dev_aga is None else f"{self.dev_aga:.6f}", f"{self.dev_avg_jga:.6f}",
                "" if self.seconds is None else f"{self.seconds:.3f}"]


@dataclass
class TrainState:
    epoch: int = 0
    best_metric: float = float("-inf")
    best_epoch: int = 0
    epochs_since_improvement: int = 0
    losses: list[float] = field(default_factory=list)
    best_params: dict[str, np.ndarray] | None = None
    checkpoint_path: str | None = None
    records: list[EpochRecord] = field(default_factory=list)
    stopped_early: bool = False


def metrics_csv(records: Sequence[EpochRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_COLUMNS)
    for r in records:
        w.writerow(r.row())
    return buf.getvalue()


def evaluate(model: ShegoModel, examples: Sequence[DialogueExample], batch_size: int = 64,
             domain_map=None) -> MetricsReport:
    return report(model.predict(examples, batch_size), domain_map)


def _snapshot(model: ShegoModel) -> dict[str, np.ndarray]:
    return {k: t.data.copy() for k, t in model.trainable().items()}


def _restore(model: ShegoModel, snap: dict[str, np.ndarray]) -> None:
    for k, t in model.trainable().items():
        t.data = snap[k].copy()


def check_frozen(model: ShegoModel) -> None:
    drift = model.backbone.drift()
    if drift:
        lines = [f"  {name}: expected {old[:12]} got {new[:12]}" for name, (old, new) in sorted(drift.items())]
        raise FrozenWeightError("frozen backbone tensors changed during training:\n" + "\n".join(lines))


def train(config: TrainConfig, model: ShegoModel, train_examples: Sequence[DialogueExample],
          dev_examples: Sequence[DialogueExample], out_dir=None, domain_map=None,
          check_every_step: bool = True) -> TrainState:
    """Optimise graph and prompt groups; early-stop on dev Avg. JGA and restore the best epoch."""
    if not train_examples or not dev_examples:
        raise ValueError("train and dev splits must be nonempty")
    if (model.config.use_gnn, model.config.use_graph_prompts, model.config.use_active_mask) != config.flags:
        raise ValueError("model ablation flags differ from the training config; build the model with apply_ablation")
    groups = model.param_groups(config.graph_lr, config.graph_weight_decay, config.prompt_lr, config.prompt_weight_decay)
    opt = AdamW(groups)
    trainable_groups = [g for g in groups if not g.frozen]
    rng = np.random.default_rng(config.seed)
    state = TrainState()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    train_examples = list(train_examples)
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_examples))
        epoch_losses = []
        for s in range(0, len(order), config.batch_size):
            batch = [train_examples[i] for i in order[s:s + config.batch_size]]
            loss = compute_loss(batch, model)
            opt.zero_grad()
            loss.backward()
            if config.max_grad_norm is not None:
                clip_grad_norm(trainable_groups, config.max_grad_norm)
            opt.step()
            value = float(loss.data)
            if not np.isfinite(value):
                raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
            epoch_losses.append(value)
            if check_every_step:
                check_frozen(model)
        check_frozen(model)
        rep = evaluate(model, dev_examples, config.eval_batch_size, domain_map)
        seconds = time.perf_counter() - t0 if config.log_wall_time else None
        rec = EpochRecord(epoch, float(np.mean(epoch_losses)), rep.overall_jga, rep.overall_aga, rep.avg_jga, seconds)
        state.records.append(rec)
        state.losses.append(rec.train_loss)
        state.epoch = epoch
        logger.info("epoch %d loss %.4f dev avg-jga %.4f", epoch, rec.train_loss, rec.dev_avg_jga)
        if rec.dev_avg_jga > state.best_metric:
            state.best_metric = rec.dev_avg_jga
            state.best_epoch = epoch
            state.epochs_since_improvement = 0
            state.best_params = _snapshot(model)
        else:
            state.epochs_since_improvement += 1
        if out is not None:
            (out / "metrics.csv").write_text(metrics_csv(state.records), encoding="utf-8")
        if config.stop_at is not None and getattr(rec, config.stop_metric) >= config.stop_at:
            state.stopped_early = True
            break
        if state.epochs_since_improvement >= config.patience:
            state.stopped_early = True
            break
    _restore(model, state.best_params)
    if out is not None:
        path = out / "model.ckpt"
        model.save(path, step=opt.step_count, extra_meta={"best_epoch": state.best_epoch,
                                                          "best_dev_avg_jga": state.best_metric})
        state.checkpoint_path = str(path)
    return state
