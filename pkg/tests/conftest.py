import numpy as np
import pytest

from seqattn.data import EncodedExample
from seqattn.reader import VARIANTS, ReaderConfig, build_model

VOCAB = 20
ENTITIES = 4  # token ids 3..6 stand for entities 0..3 in these random fixtures


def tiny_config(variant: str, **kw) -> ReaderConfig:
    base = dict(vocab_size=VOCAB, embed_dim=4, hidden=3, max_entities=ENTITIES, dropout=0.0, seed=0)
    base.update(kw)
    return ReaderConfig.for_variant(variant, **base)


def random_model(variant: str, seed: int = 0, scale: float = 0.5, **kw):
    """A model with every parameter (biases included) drawn at a visible scale."""
    model = build_model(tiny_config(variant, seed=seed, **kw))
    rng = np.random.default_rng([seed, 99])
    for t in model.parameters():
        t.data = rng.normal(0.0, scale, t.shape)
    return model


def random_example(rng: np.random.Generator, ex_id: int = 0, n: int = 6, q: int = 3, k: int = 3) -> EncodedExample:
    ents = np.sort(rng.choice(ENTITIES, size=k, replace=False))
    passage = rng.integers(7, VOCAB, size=n)
    slots = rng.choice(n, size=k, replace=False)
    passage[slots] = 3 + ents
    question = rng.integers(7, VOCAB, size=q)
    return EncodedExample(ex_id, passage, question, int(rng.choice(ents)), tuple(int(e) for e in ents))


@pytest.fixture(params=list(VARIANTS))
def variant(request):
    return request.param


# acceptance criteria report: test_acceptance.py fills this in, and the
# terminal summary prints one line per criterion
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
