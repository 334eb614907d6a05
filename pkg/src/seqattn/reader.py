"""The Stanford Reader / Sequential Attention model family."""

from __future__ import annotations

import dataclasses
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .attention import AttentionTrace, ScoringVariant, attend
from .data import Batch, EncodedExample, InvalidExampleError, Vocabulary, make_batch
from .encoder import BiGruLayer, GruDirectionParams, encode_question, stack_layers
from .tensor import ConfigError, Tensor

# name -> (scoring, encoder layers); listed in increasing parameter count
VARIANTS: dict[str, tuple[ScoringVariant, int]] = {
    "sr-dot": (ScoringVariant.DOT, 1),
    "sr-bilinear": (ScoringVariant.BILINEAR, 1),
    "sa-elementwise": (ScoringVariant.ELEMENTWISE_SA, 1),
    "sa-partial-bilinear": (ScoringVariant.PARTIAL_BILINEAR_SA, 1),
    "sr-2layer-dot": (ScoringVariant.DOT, 2),
    "sr-2layer-bilinear": (ScoringVariant.BILINEAR, 2),
}

# Published trainable-parameter counts (millions) for the six variants.
TABLE2_PARAMS = {
    "sr-dot": 5.44,
    "sr-bilinear": 5.50,
    "sr-2layer-dot": 5.83,
    "sr-2layer-bilinear": 5.90,
    "sa-elementwise": 5.73,
    "sa-partial-bilinear": 5.80,
}

# Entity-column count for the paper preset.  Not published; chosen so the
# 1-layer SR and both SA totals round to the published figures.
PAPER_MAX_ENTITIES = 336

GROUPS = ("embeddings", "passage_encoder", "question_encoder", "attention", "output")


@dataclass(frozen=True)
class ReaderConfig:
    scoring: ScoringVariant = ScoringVariant.BILINEAR
    layers: int = 1
    vocab_size: int = 1000
    embed_dim: int = 100
    hidden: int = 128
    attn_hidden: int | None = None
    max_entities: int = 10
    dropout: float = 0.2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scoring", ScoringVariant(self.scoring))
        if self.attn_hidden is None:
            object.__setattr__(self, "attn_hidden", self.hidden)
        if self.layers not in (1, 2):
            raise ConfigError(f"encoder depth must be 1 or 2, got {self.layers}")
        for name in ("vocab_size", "embed_dim", "hidden", "attn_hidden", "max_entities"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def variant(self) -> str:
        for name, key in VARIANTS.items():
            if key == (self.scoring, self.layers):
                return name
        return f"{self.scoring.value}-{self.layers}layer"

    @classmethod
    def for_variant(cls, name: str, **kw) -> "ReaderConfig":
        try:
            scoring, layers = VARIANTS[name]
        except KeyError:
            raise ConfigError(f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}") from None
        return cls(scoring=scoring, layers=layers, **kw)

    @classmethod
    def paper(cls, name: str, **kw) -> "ReaderConfig":
        base = dict(vocab_size=50_000, embed_dim=100, hidden=128, attn_hidden=128,
                    max_entities=PAPER_MAX_ENTITIES, dropout=0.2)
        base.update(kw)
        return cls.for_variant(name, **base)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["scoring"] = self.scoring.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ReaderConfig":
        return cls(**d)


def parameter_shapes(config: ReaderConfig) -> dict[str, tuple[tuple[int, ...], str, str]]:
    """name -> (shape, group, init) for every trainable tensor."""
    h, d, ha = config.hidden, config.embed_dim, config.attn_hidden
    out: dict[str, tuple[tuple[int, ...], str, str]] = {}
    out["embedding"] = ((config.vocab_size, d), "embeddings", "embedding")

    def gru(prefix, n_in, hid, group, init):
        for direction in ("fwd", "bwd"):
            out[f"{prefix}.{direction}.w_x"] = ((n_in, 3 * hid), group, init)
            out[f"{prefix}.{direction}.w_h"] = ((hid, 3 * hid), group, init)
            out[f"{prefix}.{direction}.b"] = ((3 * hid,), group, "zeros")

    for side in ("passage", "question"):
        for k in range(config.layers):
            gru(f"{side}.{k}", d if k == 0 else 2 * h, h, f"{side}_encoder", "normal")
    if config.scoring.has_matrix:
        out["attention.W"] = ((2 * h, 2 * h), "attention", "uniform")
    if config.scoring.sequential:
        gru("attention.rnn", 2 * h, ha, "attention", "uniform")
    out["output.M"] = ((2 * h, config.max_entities), "output", "uniform")
    return out


@dataclass
class ParameterCount:
    total: int
    groups: dict[str, int]

    def __str__(self) -> str:
        rows = [f"{g:<18}{n:>12,}" for g, n in self.groups.items()]
        return "\n".join(rows + [f"{'total':<18}{self.total:>12,}"])


def _count(shapes) -> ParameterCount:
    groups = dict.fromkeys(GROUPS, 0)
    for shape, group, _ in shapes:
        groups[group] += int(np.prod(shape))
    return ParameterCount(sum(groups.values()), groups)


@dataclass
class ReaderModel:
    config: ReaderConfig
    params: dict[str, Tensor]

    def __post_init__(self):
        p, c = self.params, self.config

        def layer(prefix):
            return BiGruLayer(
                GruDirectionParams(p[f"{prefix}.fwd.w_x"], p[f"{prefix}.fwd.w_h"], p[f"{prefix}.fwd.b"]),
                GruDirectionParams(p[f"{prefix}.bwd.w_x"], p[f"{prefix}.bwd.w_h"], p[f"{prefix}.bwd.b"]),
            )

        self.embedding = p["embedding"]
        self.passage_layers = [layer(f"passage.{k}") for k in range(c.layers)]
        self.question_layers = [layer(f"question.{k}") for k in range(c.layers)]
        self.attn_w = p.get("attention.W")
        self.attn_rnn = layer("attention.rnn") if c.scoring.sequential else None
        self.output = p["output.M"]

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, v in self.params.items():
            if state[k].shape != v.shape:
                raise ConfigError(f"parameter {k}: shape {state[k].shape} != {v.shape}")
            v.data = np.array(state[k], dtype=T.DTYPE)


def build_model(config: ReaderConfig, embeddings: np.ndarray | None = None) -> ReaderModel:
    """Initialise a model; deterministic in ``config.seed``.

    Attention and output weights ~ U(-0.01, 0.01); encoder GRU weights ~
    N(0, 0.1^2); biases zero; embeddings from ``embeddings`` when given,
    else U(-0.01, 0.01).
    """
    rng = np.random.default_rng(config.seed)
    params = {}
    for name, (shape, _, init) in parameter_shapes(config).items():
        if init == "embedding":
            if embeddings is not None:
                if embeddings.shape != shape:
                    raise ConfigError(f"embedding initialiser has shape {embeddings.shape}, expected {shape}")
                value = np.array(embeddings, dtype=T.DTYPE)
                rng.uniform(-0.01, 0.01, shape)  # keep later draws independent of the initialiser
            else:
                value = rng.uniform(-0.01, 0.01, shape)
        elif init == "normal":
            value = rng.normal(0.0, 0.1, shape)
        elif init == "uniform":
            value = rng.uniform(-0.01, 0.01, shape)
        else:
            value = np.zeros(shape)
        params[name] = Tensor(value, requires_grad=True, name=name)
    return ReaderModel(config, params)


def count_parameters(model_or_config) -> ParameterCount:
    if isinstance(model_or_config, ReaderModel):
        shapes = parameter_shapes(model_or_config.config)
        return _count((t.shape, shapes[k][1], None) for k, t in model_or_config.params.items())
    return _count(parameter_shapes(model_or_config).values())


# ---------------------------------------------------------------------------
# forward pass


def forward(model: ReaderModel, batch: Batch, mode: str = "eval", rng=None, trace: bool = False, dropout: float | None = None):
    """Entity logits M^T o for every example in ``batch``.

    Returns (logits (B, max_entities), trace or None).  Candidate masking
    is applied by :func:`loss` and :func:`predict_batch`.
    """
    if not batch.candidate_mask.any(axis=1).all():
        raise InvalidExampleError("every example needs at least one candidate entity")
    rate = model.config.dropout if dropout is None else dropout
    c = model.config
    passage = T.embed(model.embedding, batch.passage)
    question = T.embed(model.embedding, batch.question)
    H = stack_layers(model.passage_layers, passage, batch.passage_mask, rate, mode, rng)
    j = encode_question(model.question_layers, question, batch.question_mask, rate, mode, rng)
    o, tr = attend(
        c.scoring, j, H, batch.passage_mask,
        W=model.attn_w, rnn=model.attn_rnn, rate=rate, mode=mode, rng=rng, trace=trace,
    )
    return T.matmul(o, model.output), tr


def loss(model: ReaderModel, batch: Batch, mode: str = "eval", rng=None, dropout: float | None = None) -> Tensor:
    """Mean negative log-likelihood over the batch, restricted to candidates."""
    rows = np.arange(len(batch))
    if (batch.answers >= batch.candidate_mask.shape[1]).any() or not batch.candidate_mask[rows, batch.answers].all():
        raise InvalidExampleError("answer is not among the candidate entities")
    logits, _ = forward(model, batch, mode, rng, dropout=dropout)
    return T.nll_loss(logits, batch.answers, batch.candidate_mask)


@dataclass
class Prediction:
    example_id: int
    entity: int
    log_probs: dict[int, float]
    trace: AttentionTrace | None = None


def predict_batch(model: ReaderModel, batch: Batch, trace: bool = False) -> list[Prediction]:
    with T.no_grad():
        logits, tr = forward(model, batch, "eval", trace=trace)
    logp = T.masked_log_softmax(logits.data, batch.candidate_mask)
    # argmax returns the first maximum: ties go to the lowest entity id
    best = np.argmax(np.where(batch.candidate_mask, logits.data, -np.inf), axis=1)
    out = []
    for b in range(len(batch)):
        cands = np.flatnonzero(batch.candidate_mask[b])
        out.append(
            Prediction(
                int(batch.ids[b]),
                int(best[b]),
                {int(a): float(logp[b, a]) for a in cands},
                tr.row(b) if tr is not None else None,
            )
        )
    return out


def predict(model: ReaderModel, example: EncodedExample, trace: bool = True) -> Prediction:
    batch = make_batch([example], model.config.max_entities)
    return predict_batch(model, batch, trace=trace)[0]


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model: ReaderModel, vocab: Vocabulary | None = None, extra: dict | None = None) -> None:
    """Write config, vocabulary and named parameters to one ``.npz`` file."""
    meta = {
        "format": "seqattn-checkpoint/1",
        "config": model.config.to_dict(),
        "vocab_hash": vocab.digest() if vocab is not None else None,
        "vocab": vocab.to_dict() if vocab is not None else None,
        "shapes": {k: list(v.shape) for k, v in model.params.items()},
        "extra": extra or {},
    }
    arrays = {f"param/{k}": v.data for k, v in model.params.items()}
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.array(json.dumps(meta)), **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path):
    """Returns (model, vocabulary or None, metadata)."""
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        state = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
    config = ReaderConfig.from_dict(meta["config"])
    model = build_model(config)
    model.load_state(state)
    vocab = Vocabulary.from_dict(meta["vocab"]) if meta.get("vocab") else None
    if vocab is not None and vocab.digest() != meta["vocab_hash"]:
        raise ValueError(f"{path}: vocabulary hash mismatch")
    return model, vocab, meta
