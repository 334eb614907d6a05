"""Desk-scale synthetic experiments shared by the acceptance suite and scripts/."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import data as D
from .reader import ReaderConfig, build_model
from .training import TrainConfig, evaluate_accuracy, train


@dataclass(frozen=True)
class SyntheticRegime:
    """Data sizes, model scale and optimiser settings for one synthetic run.

    The embedding table starts from N(0, embed_std^2), standing in for
    pretrained vectors; small uniform embeddings leave the tiny training
    sets stuck at chance for many epochs.
    """

    rule: str = D.POSITIONAL
    num_entities: int = 4
    sizes: tuple[int, int, int] = (2000, 500, 500)
    data_seeds: tuple[int, int, int] = (1, 2, 3)
    embed_dim: int = 32
    hidden: int = 32
    vocab_size: int = 1000
    embed_std: float = 1.0
    lr: float = 0.5
    dropout: float = 0.2
    batch_size: int = 32
    clip_norm: float = 10.0
    epochs: int = 15
    patience: int | None = 4
    seed: int = 0


@dataclass
class SyntheticResult:
    variant: str
    test_accuracy: float
    best_dev_accuracy: float
    best_epoch: int
    dev_curve: list[float] = field(default_factory=list)
    loss_curve: list[float] = field(default_factory=list)
    seconds: float = 0.0

    def first_epoch_reaching(self, threshold: float) -> int | None:
        return next((k + 1 for k, a in enumerate(self.dev_curve) if a >= threshold), None)


@dataclass
class SyntheticData:
    vocab: D.Vocabulary
    max_entities: int
    train: list[D.EncodedExample]
    dev: list[D.EncodedExample]
    test: list[D.EncodedExample]
    raw_test: list[D.ClozeExample]


def synthetic_data(regime: SyntheticRegime) -> SyntheticData:
    splits = [
        D.generate_synthetic_task(
            D.SyntheticTaskSpec(rule=regime.rule, num_examples=n, num_entities=regime.num_entities, seed=s)
        )
        for n, s in zip(regime.sizes, regime.data_seeds)
    ]
    vocab = D.build_vocabulary(D.dataset_tokens(splits[0]), regime.vocab_size)
    # relabeling numbers entities 0..k-1, so k columns suffice
    e = regime.num_entities
    enc = [D.encode_dataset(s, vocab, e) for s in splits]
    return SyntheticData(vocab, e, enc[0], enc[1], enc[2], splits[2])


def run_variant(regime: SyntheticRegime, variant: str, data: SyntheticData | None = None, model_out: dict | None = None):
    """Train one variant under ``regime`` and score it on the test split."""
    data = data or synthetic_data(regime)
    cfg = ReaderConfig.for_variant(
        variant, vocab_size=len(data.vocab), embed_dim=regime.embed_dim, hidden=regime.hidden,
        max_entities=data.max_entities, dropout=regime.dropout, seed=regime.seed,
    )
    table = np.random.default_rng([regime.seed, 7]).normal(0.0, regime.embed_std, (len(data.vocab), regime.embed_dim))
    model = build_model(cfg, table)
    tcfg = TrainConfig(lr=regime.lr, batch_size=regime.batch_size, clip_norm=regime.clip_norm,
                       dropout=regime.dropout, epochs=regime.epochs, seed=regime.seed, patience=regime.patience)
    start = time.perf_counter()
    res = train(model, data.train, data.dev, tcfg)
    acc, _ = evaluate_accuracy(model, data.test)
    if model_out is not None:
        model_out[variant] = model
    return SyntheticResult(
        variant=variant,
        test_accuracy=acc,
        best_dev_accuracy=res.best_dev_accuracy,
        best_epoch=res.best_epoch,
        dev_curve=[m.dev_accuracy for m in res.metrics],
        loss_curve=[m.train_loss for m in res.metrics],
        seconds=time.perf_counter() - start,
    )
