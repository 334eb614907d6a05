"""Cloze datasets: ingestion, entity relabeling, validation, vocabularies,
pretrained vectors, batching and synthetic tasks."""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .tensor import ConfigError

PAD = "<pad>"
UNK = "<unk>"
BLANK = "@blank"
CNN_BLANK = "@placeholder"
RESERVED = (PAD, UNK, BLANK)
ENTITY_RE = re.compile(r"^@entity(\d+)$")


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, path=None):
        where = "" if path is None else f"{path}:"
        where += "" if line is None else f"line {line}: "
        super().__init__(f"{where}{message}")
        self.line = line


class InvalidExampleError(ValueError):
    pass


def is_entity(token: str) -> bool:
    return ENTITY_RE.match(token) is not None


def entity_index(token: str) -> int:
    m = ENTITY_RE.match(token)
    if m is None:
        raise InvalidExampleError(f"{token!r} is not an entity symbol")
    return int(m.group(1))


@dataclass
class ClozeExample:
    id: int
    passage: list[str]
    question: list[str]
    answer: str
    entities: dict[str, str] = field(default_factory=dict)
    url: str = ""

    @property
    def candidates(self) -> list[str]:
        """Entity symbols present in the passage, in first-occurrence order."""
        return list(dict.fromkeys(t for t in self.passage if is_entity(t)))

    def problems(self) -> list[str]:
        out = []
        if self.question.count(BLANK) != 1:
            out.append("blank-count")
        if self.answer not in self.passage:
            out.append("answer-not-in-passage")
        return out

    def to_record(self) -> dict:
        rec = {
            "id": self.id,
            "passage": " ".join(self.passage),
            "question": " ".join(self.question),
            "answer": self.answer,
        }
        if self.entities:
            rec["entities"] = self.entities
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "ClozeExample":
        try:
            return cls(
                id=int(rec["id"]),
                passage=rec["passage"].split(),
                question=rec["question"].split(),
                answer=rec["answer"],
                entities=dict(rec.get("entities", {})),
            )
        except KeyError as exc:
            raise ParseError(f"record missing field {exc.args[0]!r}") from None


# ---------------------------------------------------------------------------
# canonical line-delimited format


def write_dataset(examples: Iterable[ClozeExample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_record(), ensure_ascii=False) + "\n")


def read_dataset(path) -> list[ClozeExample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid record: {exc.msg}", lineno, path) from None
            try:
                out.append(ClozeExample.from_record(rec))
            except ParseError as exc:
                raise ParseError(str(exc), lineno, path) from None
    return out


# ---------------------------------------------------------------------------
# CNN question files

_CNN_SECTIONS = ("url", "passage", "question", "answer")


def parse_cnn(text: str, example_id: int = 0, path=None) -> ClozeExample:
    """Parse one CNN-layout question file.

    Layout: url, blank, passage, blank, question, blank, answer, blank,
    then ``@entityN:original string`` lines.
    """
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    values = {}
    for k, section in enumerate(_CNN_SECTIONS):
        at = 2 * k
        if at >= len(lines) or not lines[at].strip():
            raise ParseError(f"missing {section} section", at + 1, path)
        values[section] = lines[at].strip()
        if at + 1 < len(lines) and lines[at + 1].strip():
            raise ParseError(f"expected blank line after {section} section", at + 2, path)
    pos = 2 * len(_CNN_SECTIONS)

    entities: dict[str, str] = {}
    for lineno in range(pos, len(lines)):
        line = lines[lineno]
        if not line.strip():
            continue
        symbol, sep, name = line.partition(":")
        if not sep or not is_entity(symbol.strip()):
            raise ParseError(f"bad entity mapping {line!r}", lineno + 1, path)
        symbol = symbol.strip()
        if symbol in entities:
            raise ParseError(f"duplicate entity id {symbol}", lineno + 1, path)
        entities[symbol] = name

    question = [BLANK if t == CNN_BLANK else t for t in values["question"].split()]
    return ClozeExample(
        id=example_id,
        passage=values["passage"].split(),
        question=question,
        answer=values["answer"],
        entities=entities,
        url=values["url"],
    )


def import_cnn_format(path, example_id: int = 0) -> ClozeExample:
    return parse_cnn(Path(path).read_text(encoding="utf-8"), example_id, path)


def export_cnn_format(example: ClozeExample) -> str:
    question = " ".join(CNN_BLANK if t == BLANK else t for t in example.question)
    parts = [
        example.url or f"example:{example.id}",
        "",
        " ".join(example.passage),
        "",
        question,
        "",
        example.answer,
        "",
    ]
    parts += [f"{k}:{v}" for k, v in example.entities.items()]
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# relabeling and validation


def relabel_entities(example: ClozeExample) -> ClozeExample:
    """Renumber entities by first occurrence, scanning passage then question.

    Entities known only from the entity map follow, ordered by their
    original strings so the result does not depend on the input labels.
    """
    order = list(dict.fromkeys(t for t in example.passage + example.question if is_entity(t)))
    if example.answer not in order and example.answer not in example.entities:
        raise InvalidExampleError(f"example {example.id}: answer {example.answer} is not a known entity")
    rest = sorted((e for e in example.entities if e not in order), key=lambda e: (example.entities[e], e))
    mapping = {old: f"@entity{k}" for k, old in enumerate(order + rest)}
    sub = lambda toks: [mapping.get(t, t) for t in toks]  # noqa: E731
    return ClozeExample(
        id=example.id,
        passage=sub(example.passage),
        question=sub(example.question),
        answer=mapping[example.answer],
        entities={mapping[k]: v for k, v in sorted(example.entities.items(), key=lambda kv: entity_index(mapping[kv[0]]))},
        url=example.url,
    )


@dataclass
class ValidationReport:
    total: int
    kept: int
    dropped: list[tuple[int, str]]

    @property
    def n_dropped(self) -> int:
        return len(self.dropped)

    def by_reason(self) -> dict[str, int]:
        return dict(Counter(reason for _, reason in self.dropped))


def validate_examples(examples: Sequence[ClozeExample]) -> tuple[list[ClozeExample], ValidationReport]:
    """Drop unanswerable examples (answer absent from passage) or ones without exactly one blank."""
    kept, dropped = [], []
    for ex in examples:
        problems = ex.problems()
        if problems:
            dropped.append((ex.id, problems[0]))
        else:
            kept.append(ex)
    return kept, ValidationReport(len(examples), len(kept), dropped)


# ---------------------------------------------------------------------------
# vocabulary


@dataclass
class Vocabulary:
    tokens: list[str]
    counts: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")
        for t in RESERVED:
            if t not in self.index:
                raise ValueError(f"vocabulary is missing reserved token {t}")
        self.entity_flags = np.array([is_entity(t) for t in self.tokens], dtype=bool)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    @property
    def unk_id(self) -> int:
        return self.index[UNK]

    @property
    def blank_id(self) -> int:
        return self.index[BLANK]

    def id(self, token: str) -> int:
        return self.index.get(token, self.index[UNK])

    def ids(self, tokens: Iterable[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def token(self, i: int) -> str:
        return self.tokens[i]

    def is_entity(self, i: int) -> bool:
        return bool(self.entity_flags[i])

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()

    def to_dict(self) -> dict:
        return {"tokens": self.tokens, "counts": self.counts}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(list(d["tokens"]), dict(d.get("counts", {})))


def build_vocabulary(corpus: Iterable[Sequence[str]], size_limit: int, entity_count: int = 0) -> Vocabulary:
    """Reserved tokens and every entity symbol, then the most frequent words.

    ``size_limit`` caps the total size; entity symbols are always kept even
    if that exceeds it.  Frequency ties break lexicographically.
    """
    counts = Counter()
    for toks in corpus:
        counts.update(toks)
    entities = {t for t in counts if is_entity(t)}
    entities.update(f"@entity{k}" for k in range(entity_count))
    fixed = list(RESERVED) + sorted(entities, key=entity_index)
    words = sorted((t for t in counts if t not in entities and t not in RESERVED), key=lambda t: (-counts[t], t))
    room = max(0, size_limit - len(fixed))
    tokens = fixed + words[:room]
    return Vocabulary(tokens, {t: counts.get(t, 0) for t in tokens})


def dataset_tokens(examples: Iterable[ClozeExample]):
    for ex in examples:
        yield ex.passage
        yield ex.question


# ---------------------------------------------------------------------------
# pretrained vectors


@dataclass
class EmbeddingCoverage:
    found: int
    total: int

    @property
    def ratio(self) -> float:
        return self.found / self.total if self.total else 0.0


def random_embeddings(vocab_size: int, dim: int, rng: np.random.Generator, scale: float = 0.01) -> np.ndarray:
    return rng.uniform(-scale, scale, (vocab_size, dim))


def load_pretrained_embeddings(path, vocab: Vocabulary, dim: int, rng: np.random.Generator):
    """Initial embedding matrix from a whitespace-separated vector file.

    Rows for tokens missing from the file keep a uniform(-0.01, 0.01) draw.
    Returns (matrix, coverage).
    """
    table = random_embeddings(len(vocab), dim, rng)
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if len(parts) != dim + 1:
                raise ParseError(f"expected {dim} values, found {len(parts) - 1}", lineno, path)
            token = parts[0]
            i = vocab.index.get(token)
            if i is None or i in seen:
                continue
            try:
                table[i] = [float(v) for v in parts[1:]]
            except ValueError:
                raise ParseError("non-numeric vector component", lineno, path) from None
            seen.add(i)
    return table, EmbeddingCoverage(len(seen), len(vocab))


# ---------------------------------------------------------------------------
# encoding and batching


@dataclass
class EncodedExample:
    id: int
    passage: np.ndarray
    question: np.ndarray
    answer: int
    candidates: tuple[int, ...]


def encode_example(example: ClozeExample, vocab: Vocabulary, max_entities: int) -> EncodedExample:
    cands = sorted({entity_index(t) for t in example.passage if is_entity(t)})
    if not cands:
        raise InvalidExampleError(f"example {example.id} has no candidate entities")
    if cands[-1] >= max_entities:
        raise InvalidExampleError(f"example {example.id} uses entity {cands[-1]} >= max_entities {max_entities}")
    answer = entity_index(example.answer)
    if answer not in cands:
        raise InvalidExampleError(f"example {example.id}: answer {example.answer} is not a candidate")
    if not example.passage or not example.question:
        raise InvalidExampleError(f"example {example.id} has an empty passage or question")
    return EncodedExample(
        example.id,
        np.array(vocab.ids(example.passage), dtype=np.int64),
        np.array(vocab.ids(example.question), dtype=np.int64),
        answer,
        tuple(cands),
    )


def encode_dataset(examples: Iterable[ClozeExample], vocab: Vocabulary, max_entities: int) -> list[EncodedExample]:
    return [encode_example(ex, vocab, max_entities) for ex in examples]


@dataclass
class Batch:
    ids: np.ndarray
    passage: np.ndarray
    passage_mask: np.ndarray
    question: np.ndarray
    question_mask: np.ndarray
    answers: np.ndarray
    candidate_mask: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)


def _pad(seqs, pad_id, length=None):
    n = max(len(s) for s in seqs) if length is None else length
    out = np.full((len(seqs), n), pad_id, dtype=np.int64)
    mask = np.zeros((len(seqs), n), dtype=bool)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
        mask[i, : len(s)] = True
    return out, mask


def make_batch(examples: Sequence[EncodedExample], max_entities: int, pad_id: int = 0, passage_len=None, question_len=None) -> Batch:
    if not examples:
        raise ValueError("cannot batch zero examples")
    passage, pmask = _pad([e.passage for e in examples], pad_id, passage_len)
    question, qmask = _pad([e.question for e in examples], pad_id, question_len)
    cmask = np.zeros((len(examples), max_entities), dtype=bool)
    for i, e in enumerate(examples):
        cmask[i, list(e.candidates)] = True
    return Batch(
        ids=np.array([e.id for e in examples], dtype=np.int64),
        passage=passage,
        passage_mask=pmask,
        question=question,
        question_mask=qmask,
        answers=np.array([e.answer for e in examples], dtype=np.int64),
        candidate_mask=cmask,
    )


def make_batches(
    dataset: Sequence[EncodedExample],
    batch_size: int,
    seed: int,
    epoch: int,
    max_entities: int,
    shuffle: bool = True,
    pad_id: int = 0,
) -> list[Batch]:
    """Split into padded batches; shuffle order is a pure function of (seed, epoch)."""
    if batch_size < 1:
        raise ConfigError(f"batch size must be positive, got {batch_size}")
    order = np.arange(len(dataset))
    if shuffle:
        order = np.random.default_rng([seed, epoch]).permutation(len(dataset))
    return [
        make_batch([dataset[i] for i in order[k : k + batch_size]], max_entities, pad_id)
        for k in range(0, len(dataset), batch_size)
    ]


# ---------------------------------------------------------------------------
# synthetic tasks

POSITIONAL = "positional-easy"
TRIGGER = "context-trigger"


@dataclass
class SyntheticTaskSpec:
    """Generator settings.

    positional-easy: a single marker token sits directly before the answer
    entity and is copied next to the blank in the question.
    context-trigger: the answer follows a two-token phrase ``ta tb`` whose
    tokens appear apart in the question.  Distractor entities follow ``ta``
    alone, ``tb`` alone and a second phrase ``tc td``, so only the pair of
    neighbours identifies the answer.
    """

    rule: str = POSITIONAL
    num_examples: int = 100
    num_entities: int = 4
    passage_length: tuple[int, int] = (16, 24)
    question_length: tuple[int, int] = (6, 8)
    num_fillers: int = 40
    num_markers: int = 12
    entity_pool: int = 20
    seed: int = 0

    def _trigger_leads(self) -> list[int]:
        """Lengths of the lead-in before each distractor entity."""
        return [1, 1, 2][: self.num_entities - 1] + [1] * max(0, self.num_entities - 4)

    def segment_tokens(self) -> int:
        if self.rule == POSITIONAL:
            return 1 + self.num_entities
        return 3 + sum(self._trigger_leads()) + self.num_entities - 1

    def markers_needed(self) -> int:
        if self.rule == POSITIONAL:
            return 1
        return 2 + (2 if self.num_entities >= 4 else 0) + max(0, self.num_entities - 4)

    def check(self) -> None:
        if self.rule not in (POSITIONAL, TRIGGER):
            raise ConfigError(f"unknown synthetic rule {self.rule!r}")
        lo, hi = self.passage_length
        qlo, qhi = self.question_length
        if self.num_entities < 1 or self.num_examples < 0:
            raise ConfigError("need at least one entity and a non-negative example count")
        if self.rule == TRIGGER and self.num_entities < 2:
            raise ConfigError("context-trigger needs at least two entities")
        if not 0 < lo <= hi or not 0 < qlo <= qhi:
            raise ConfigError("length ranges must be positive and ordered")
        if lo < self.segment_tokens():
            raise ConfigError(
                f"passages of length {lo} cannot hold {self.num_entities} entities ({self.segment_tokens()} tokens)"
            )
        if qlo < (2 if self.rule == POSITIONAL else 5):
            raise ConfigError(f"questions of length {qlo} are too short for rule {self.rule}")
        if self.num_markers < self.markers_needed():
            raise ConfigError(f"{self.num_markers} marker tokens are too few")
        if self.entity_pool < self.num_entities or self.num_fillers < 1:
            raise ConfigError("entity pool or filler vocabulary too small")


def _layout(segments, length, fillers, rng):
    n_fill = length - sum(len(s) for s in segments)
    items = [list(s) for s in segments] + [[f] for f in rng.choice(fillers, n_fill)]
    order = rng.permutation(len(items))
    return [tok for k in order for tok in items[k]]


def _place(core, length, fillers, rng):
    n_fill = length - len(core)
    left = int(rng.integers(0, n_fill + 1))
    fill = list(rng.choice(fillers, n_fill))
    return fill[:left] + core + fill[left:]


def generate_synthetic_task(spec: SyntheticTaskSpec) -> list[ClozeExample]:
    """Deterministic synthetic cloze data; entities are relabeled by occurrence."""
    spec.check()
    rng = np.random.default_rng(spec.seed)
    fillers = [f"w{i}" for i in range(spec.num_fillers)]
    out = []
    for idx in range(spec.num_examples):
        labels = [f"@entity{k}" for k in rng.choice(spec.entity_pool, spec.num_entities, replace=False)]
        answer, rest = labels[0], labels[1:]
        length = int(rng.integers(spec.passage_length[0], spec.passage_length[1] + 1))
        qlen = int(rng.integers(spec.question_length[0], spec.question_length[1] + 1))
        if spec.rule == POSITIONAL:
            marker = f"m{int(rng.integers(spec.num_markers))}"
            segments = [[marker, answer]] + [[e] for e in rest]
            core = [marker, BLANK]
        else:
            pool = [f"t{k}" for k in rng.permutation(spec.num_markers)[: spec.markers_needed()]]
            ta, tb, others = pool[0], pool[1], pool[2:]
            segments = [[ta, tb, answer]]
            leads = [[ta], [tb], others[:2]] + [[t] for t in others[2:]]
            for lead, ent in zip(leads, rest):
                segments.append(lead + [ent])
            g1 = int(rng.integers(1, 3))
            g2 = int(rng.integers(1, 3))
            core = [ta] + list(rng.choice(fillers, g1)) + [BLANK] + list(rng.choice(fillers, g2)) + [tb]
            qlen = max(qlen, len(core))
        passage = _layout(segments, length, fillers, rng)
        question = _place(core, qlen, fillers, rng)
        out.append(relabel_entities(ClozeExample(idx, passage, question, answer)))
    return out


def oracle_answer(example: ClozeExample, rule: str) -> str | None:
    """Rule-based solver for the synthetic tasks."""
    p, q = example.passage, example.question
    if rule == POSITIONAL:
        markers = [t for t in q if t.startswith("m") and t[1:].isdigit()]
        for i in range(len(p) - 1):
            if markers and p[i] == markers[0]:
                return p[i + 1]
        return None
    triggers = [t for t in q if t.startswith("t") and t[1:].isdigit()]
    if len(triggers) != 2:
        return None
    ta, tb = triggers
    for i in range(len(p) - 2):
        if p[i] == ta and p[i + 1] == tb and is_entity(p[i + 2]):
            return p[i + 2]
    return None
