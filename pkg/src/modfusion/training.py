"""Adam, the validation-driven decay/early-stop schedule, training loop, ensembling."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .config import MAX_ENSEMBLE, ModelConfig
from .data import Dataset, Example, iterate_batches
from .fusion import MultimodalModel, probabilities
from .tensor import Tensor

log = logging.getLogger(__name__)

CONTINUE, DECAYED, STOP = "continue", "decayed", "stop"


class NonFiniteGradientError(ArithmeticError):
    """A parameter received a NaN/Inf gradient."""


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[tuple[str, Tensor]], state: AdamState) -> None:
    """One bias-corrected Adam update, in place. Parameters without a gradient are skipped."""
    for name, p in params:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            bad = int(np.count_nonzero(~np.isfinite(p.grad)))
            raise NonFiniteGradientError(
                f"parameter {name!r} {p.shape}: {bad} non-finite gradient entries at step {state.step + 1}"
            )
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.step
    corr2 = 1.0 - b2 ** state.step
    for name, p in params:
        g = p.grad
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)


def clip_grad_norm(params: Sequence[tuple[str, Tensor]], max_norm: float) -> float:
    """Scale gradients so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    total = float(np.sqrt(sum(float((p.grad * p.grad).sum()) for _, p in params if p.grad is not None)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for _, p in params:
            if p.grad is not None:
                p.grad *= scale
    return total


@dataclass
class ScheduleState:
    lr0: float = 1e-4
    factor: float = 0.5
    max_decays: int = 2
    patience: int = 10
    best: float = -np.inf
    since_improvement: int = 0
    decays_used: int = 0
    stopped: bool = False
    improved: bool = False

    @property
    def lr(self) -> float:
        return self.lr0 * self.factor ** self.decays_used


def schedule_step(state: ScheduleState, val_acc: float) -> str:
    """Advance the schedule by one epoch's validation accuracy.

    A strictly better accuracy resets the counter (``state.improved`` is set so
    the caller can snapshot). Otherwise the lr is decayed while decays remain;
    once they are spent, ``patience`` non-improving epochs in a row stop training.
    """
    if state.stopped:
        raise RuntimeError("schedule already stopped")
    state.improved = val_acc > state.best
    if state.improved:
        state.best = val_acc
        state.since_improvement = 0
        return CONTINUE
    if state.decays_used < state.max_decays:
        state.decays_used += 1
        return DECAYED
    state.since_improvement += 1
    if state.since_improvement >= state.patience:
        state.stopped = True
        return STOP
    return CONTINUE


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 200
    decay_factor: float = 0.5
    max_decays: int = 2
    patience: int = 10
    clip_norm: float = 5.0


@dataclass
class TrainResult:
    model: MultimodalModel
    history: list[dict]
    best_val_acc: float
    best_epoch: int


def history_lines(history: Sequence[dict]) -> str:
    return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in history)


def predict_proba(model: MultimodalModel, examples: Sequence[Example], batch_size: int = 64) -> np.ndarray:
    """Inference-mode class probabilities ``[len(examples), K]`` in input order."""
    out = []
    with T.no_grad():
        for batch in iterate_batches(examples, batch_size):
            out.append(probabilities(model(batch, training=False)))
    return np.concatenate(out, axis=0)


def accuracy(model: MultimodalModel, examples: Sequence[Example], batch_size: int = 64) -> float:
    labels = np.array([ex.label for ex in examples])
    return float((predict_proba(model, examples, batch_size).argmax(axis=1) == labels).mean())


def build_model(model_cfg: ModelConfig, vocab_size: int, seed: int,
                embeddings: np.ndarray | None = None) -> MultimodalModel:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    return MultimodalModel(model_cfg, vocab_size, rng, embeddings)


def train(model_cfg: ModelConfig, dataset: Dataset, seed: int, cfg: TrainConfig | None = None,
          embeddings: np.ndarray | None = None, loss_log: list | None = None) -> TrainResult:
    """Train with Adam + schedule; returns the best-on-validation snapshot and history.

    ``loss_log``, if given, receives every mini-batch loss in order.
    """
    cfg = cfg or TrainConfig()
    train_set, valid_set = dataset.split("train"), dataset.split("valid")
    if not train_set or not valid_set:
        raise ValueError("training needs non-empty train and valid splits")
    if model_cfg.num_classes != len(dataset.classes):
        raise ValueError(f"model has {model_cfg.num_classes} classes, dataset {len(dataset.classes)}")
    model = build_model(model_cfg, len(dataset.vocab), seed, embeddings)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    dropout_rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    params = model.trainable_parameters()
    adam = AdamState(lr=cfg.lr)
    sched = ScheduleState(lr0=cfg.lr, factor=cfg.decay_factor, max_decays=cfg.max_decays,
                          patience=cfg.patience)
    best_state = model.state_dict()
    best_epoch = 0
    history: list[dict] = []
    for epoch in range(1, cfg.max_epochs + 1):
        adam.lr = sched.lr
        losses = []
        for batch in iterate_batches(train_set, cfg.batch_size, shuffle_rng):
            model.zero_grad()
            loss = T.cross_entropy(model(batch, training=True, rng=dropout_rng), batch.labels)
            T.backward(loss)
            clip_grad_norm(params, cfg.clip_norm)
            adam_step(params, adam)
            losses.append(float(loss.data))
        if loss_log is not None:
            loss_log.extend(losses)
        val_acc = accuracy(model, valid_set)
        action = schedule_step(sched, val_acc)
        if sched.improved:
            best_state = model.state_dict()
            best_epoch = epoch
        record = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "val_acc": val_acc,
            "best_val_acc": sched.best,
            "lr": sched.lr,
            "action": action,
        }
        history.append(record)
        log.info("epoch %d loss %.4f val_acc %.4f lr %.2e %s", epoch, record["train_loss"],
                 val_acc, sched.lr, action)
        if action == STOP:
            break
    model.load_state_dict(best_state)
    model.zero_grad()
    return TrainResult(model, history, sched.best, best_epoch)


def ensemble_average(bag: Sequence[np.ndarray]) -> np.ndarray:
    """Arithmetic mean of per-member ``[N, K]`` probability matrices."""
    if not bag:
        raise ValueError("ensemble needs at least one member")
    if len(bag) > MAX_ENSEMBLE:
        raise ValueError(f"at most {MAX_ENSEMBLE} ensemble members")
    first = np.asarray(bag[0]).shape
    for i, member in enumerate(bag):
        if np.asarray(member).shape != first:
            raise ValueError(f"member {i} has shape {np.asarray(member).shape}, expected {first}")
    return np.mean(np.stack([np.asarray(m, dtype=np.float64) for m in bag]), axis=0)
