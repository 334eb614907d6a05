"""SGD training, evaluation, the variant grid and attention dumps."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .data import EncodedExample, Vocabulary, make_batches
from .reader import (
    VARIANTS,
    ReaderConfig,
    ReaderModel,
    build_model,
    count_parameters,
    loss as reader_loss,
    predict,
    predict_batch,
)
from .tensor import ConfigError

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 0.1
    batch_size: int = 32
    clip_norm: float = 10.0
    dropout: float = 0.2
    epochs: int = 30
    seed: int = 0
    patience: int | None = None

    def __post_init__(self):
        if self.lr < 0 or self.batch_size < 1 or self.clip_norm <= 0 or self.epochs < 0:
            raise ConfigError(f"invalid training configuration {self}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.patience is not None and self.patience < 1:
            raise ConfigError("patience must be positive")


@dataclass
class MetricsRecord:
    epoch: int
    train_loss: float
    dev_accuracy: float
    seconds: float
    grad_norm_mean: float
    grad_norm_max: float

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self))


def clip_global_norm(grads: Sequence[np.ndarray], max_norm: float):
    """Scale all gradients by max_norm/g when their joint L2 norm g exceeds max_norm.

    Returns (grads, g); the input arrays are not modified.
    """
    g = math.sqrt(sum(float(np.sum(x * x)) for x in grads))
    if g > max_norm:
        scale = max_norm / g
        return [x * scale for x in grads], g
    return list(grads), g


def sgd_step(model: ReaderModel, batch, config: TrainConfig, rng: np.random.Generator) -> dict:
    """One SGD update: forward with train-mode dropout, backward, clip, step."""
    params = model.parameters()
    for p in params:
        p.grad = None
    with T.Tape() as tape:
        value = reader_loss(model, batch, "train", rng, dropout=config.dropout)
        if not np.isfinite(value.data):
            tape.clear()
            raise TrainingAborted(f"non-finite loss {float(value.data)} on batch {batch.ids.tolist()}")
        tape.backward(value)
    grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    grads, norm = clip_global_norm(grads, config.clip_norm)
    if config.lr:
        for p, g in zip(params, grads):
            p.data = p.data - config.lr * g
    for p in params:
        p.grad = None
    return {"loss": float(value.data), "grad_norm": norm}


def evaluate_accuracy(model: ReaderModel, dataset: Sequence[EncodedExample], batch_size: int = 64):
    """Returns (accuracy, {example id: predicted entity})."""
    if not dataset:
        raise ValueError("cannot evaluate on an empty dataset")
    batches = make_batches(dataset, batch_size, 0, 0, model.config.max_entities, shuffle=False)
    gold = {e.id: e.answer for e in dataset}
    preds: dict[int, int] = {}
    hits = 0
    for batch in batches:
        for p in predict_batch(model, batch):
            preds[p.example_id] = p.entity
            hits += p.entity == gold[p.example_id]
    return hits / len(dataset), preds


@dataclass
class TrainResult:
    metrics: list[MetricsRecord]
    best_state: dict[str, np.ndarray]
    best_epoch: int
    best_dev_accuracy: float
    history: list[dict] = field(default_factory=list, repr=False)


def train(
    model: ReaderModel,
    train_set: Sequence[EncodedExample],
    dev_set: Sequence[EncodedExample],
    config: TrainConfig,
    on_epoch: Callable[[MetricsRecord], None] | None = None,
) -> TrainResult:
    """Train for ``config.epochs`` epochs, keeping the best-dev-accuracy state.

    Epoch 0 in the result refers to the initial parameters.  The model is
    left holding the best state.
    """
    if not train_set or not dev_set:
        raise ValueError("training needs non-empty train and dev sets")
    rng = np.random.default_rng([config.seed, 1])
    best_state, best_epoch, best_acc = model.state(), 0, -1.0
    if config.epochs == 0:
        return TrainResult([], best_state, 0, best_acc)
    metrics, history = [], []
    stale = 0
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        losses, norms = [], []
        for batch in make_batches(train_set, config.batch_size, config.seed, epoch, model.config.max_entities):
            step = sgd_step(model, batch, config, rng)
            losses.append(step["loss"] * len(batch))
            norms.append(step["grad_norm"])
            history.append(step)
        acc, _ = evaluate_accuracy(model, dev_set)
        rec = MetricsRecord(
            epoch=epoch,
            train_loss=sum(losses) / len(train_set),
            dev_accuracy=acc,
            seconds=time.perf_counter() - start,
            grad_norm_mean=float(np.mean(norms)),
            grad_norm_max=float(np.max(norms)),
        )
        metrics.append(rec)
        log.info("epoch %d loss %.4f dev %.4f (%.1fs)", epoch, rec.train_loss, acc, rec.seconds)
        if on_epoch is not None:
            on_epoch(rec)
        if acc > best_acc:
            best_state, best_epoch, best_acc, stale = model.state(), epoch, acc, 0
        else:
            stale += 1
            if config.patience is not None and stale >= config.patience:
                break
    model.load_state(best_state)
    return TrainResult(metrics, best_state, best_epoch, best_acc, history)


@dataclass
class GridRow:
    variant: str
    accuracy: float
    dev_accuracy: float
    parameters: int
    best_epoch: int
    seconds: float


def run_grid(
    base: ReaderConfig,
    train_set: Sequence[EncodedExample],
    dev_set: Sequence[EncodedExample],
    test_set: Sequence[EncodedExample],
    config: TrainConfig,
    variants: Sequence[str] = tuple(VARIANTS),
    embeddings: np.ndarray | None = None,
) -> list[GridRow]:
    """Train and test every variant with the same seed and data order."""
    rows = []
    for name in variants:
        cfg = ReaderConfig.for_variant(name, **{
            k: v for k, v in base.to_dict().items() if k not in ("scoring", "layers")
        })
        model = build_model(cfg, embeddings)
        start = time.perf_counter()
        result = train(model, train_set, dev_set, config)
        acc, _ = evaluate_accuracy(model, test_set)
        rows.append(GridRow(name, acc, result.best_dev_accuracy, count_parameters(cfg).total,
                            result.best_epoch, time.perf_counter() - start))
    return rows


def format_grid(rows: Sequence[GridRow]) -> str:
    lines = [f"{'model':<22}{'accuracy':>10}{'params':>14}"]
    lines += [f"{r.variant:<22}{r.accuracy:>10.1%}{r.parameters:>14,}" for r in rows]
    return "\n".join(lines)


def attention_record(model: ReaderModel, example: EncodedExample, vocab: Vocabulary | None = None) -> dict:
    pred = predict(model, example, trace=True)
    tr = pred.trace
    tokens = [vocab.token(int(i)) for i in example.passage] if vocab is not None else [int(i) for i in example.passage]
    rec = {
        "example_id": example.id,
        "variant": model.config.variant,
        "tokens": tokens,
        "alpha": tr.alpha.tolist(),
        "scores": tr.scores.tolist(),
        "prediction": pred.entity,
        "answer": example.answer,
    }
    if tr.gamma is not None:
        rec["gamma_sum"] = tr.gamma.sum(axis=-1).tolist()
        rec["gamma_norm"] = np.linalg.norm(tr.gamma, axis=-1).tolist()
        rec["eta_sum"] = tr.eta.sum(axis=-1).tolist()
    return rec


def dump_attention(model: ReaderModel, example: EncodedExample, path, vocab: Vocabulary | None = None) -> dict:
    """Write one JSON record pairing each passage token with its weight."""
    rec = attention_record(model, example, vocab)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(rec) + "\n")
    return rec
