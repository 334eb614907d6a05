from collections import Counter
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqattn import data as D
from seqattn.data import (
    BLANK,
    ClozeExample,
    EncodedExample,
    ParseError,
    SyntheticTaskSpec,
    build_vocabulary,
    export_cnn_format,
    generate_synthetic_task,
    import_cnn_format,
    load_pretrained_embeddings,
    make_batches,
    oracle_answer,
    parse_cnn,
    relabel_entities,
    validate_examples,
)
from seqattn.tensor import ConfigError

FIXTURES = Path(__file__).parent / "fixtures"


def semantic(ex: ClozeExample):
    return (ex.passage, ex.question, ex.answer, ex.entities)


# ---------------------------------------------------------------- CNN format


def test_import_minimal_fixture():
    ex = import_cnn_format(FIXTURES / "minimal.question")
    assert ex.passage == ["@entity7", "met", "@entity2", "."]
    assert ex.question == ["@entity7", "met", BLANK]
    assert ex.answer == "@entity2"
    assert ex.entities == {"@entity2": "Bob", "@entity7": "Ann"}


def test_cnn_round_trip():
    ex = import_cnn_format(FIXTURES / "minimal.question")
    text = export_cnn_format(ex)
    assert semantic(parse_cnn(text)) == semantic(ex)
    assert text == (FIXTURES / "minimal.question").read_text()


def test_missing_answer_section_names_section():
    with pytest.raises(ParseError, match=r"line 7: missing answer section"):
        import_cnn_format(FIXTURES / "malformed" / "missing_answer.question")


def test_duplicate_entity_id():
    with pytest.raises(ParseError, match=r"line 11: duplicate entity id @entity0"):
        import_cnn_format(FIXTURES / "malformed" / "duplicate_entity.question")


def test_missing_blank_separator():
    with pytest.raises(ParseError, match="expected blank line"):
        parse_cnn("url\npassage here\n")


def test_bad_entity_line():
    text = "u\n\n@entity0 x\n\n@placeholder\n\n@entity0\n\nnot-an-entity\n"
    with pytest.raises(ParseError, match="line 9: bad entity mapping"):
        parse_cnn(text)


def test_canonical_records_round_trip(tmp_path):
    exs = [import_cnn_format(p, k) for k, p in enumerate(sorted((FIXTURES / "cnn_mixed").glob("*.question")))]
    path = tmp_path / "d.jsonl"
    D.write_dataset(exs, path)
    back = D.read_dataset(path)
    assert [semantic(e) for e in back] == [semantic(e) for e in exs]
    assert [e.id for e in back] == list(range(10))


def test_read_dataset_reports_line(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text('{"id": 0, "passage": "a", "question": "@blank", "answer": "a"}\n{"id": 1}\n')
    with pytest.raises(ParseError, match=r"line 2: record missing field"):
        D.read_dataset(path)


# ------------------------------------------------------------------ relabel


def test_relabel_first_occurrence():
    ex = ClozeExample(0, "@entity7 met @entity2".split(), ["@blank"], "@entity2")
    out = relabel_entities(ex)
    assert out.passage == ["@entity0", "met", "@entity1"] and out.answer == "@entity1"


def test_relabel_scans_question_after_passage():
    ex = ClozeExample(0, "@entity3 x".split(), "@entity9 met @blank".split(), "@entity3", {"@entity3": "a", "@entity9": "b"})
    out = relabel_entities(ex)
    assert out.question == ["@entity1", "met", BLANK]
    assert out.entities == {"@entity0": "a", "@entity1": "b"}


def test_relabel_ordered_is_unchanged():
    ex = ClozeExample(0, "@entity0 met @entity1".split(), "@entity0 met @blank".split(), "@entity1")
    assert semantic(relabel_entities(ex)) == semantic(ex)


def test_relabel_unknown_answer():
    with pytest.raises(D.InvalidExampleError):
        relabel_entities(ClozeExample(0, ["@entity0"], [BLANK], "@entity5"))


def _permute_labels(ex, rng):
    syms = sorted({t for t in ex.passage + ex.question + [ex.answer] + list(ex.entities) if D.is_entity(t)})
    targets = [f"@entity{k}" for k in rng.permutation(len(syms) + 10)[: len(syms)]]
    m = dict(zip(syms, targets))
    sub = lambda toks: [m.get(t, t) for t in toks]  # noqa: E731
    return ClozeExample(ex.id, sub(ex.passage), sub(ex.question), m[ex.answer], {m[k]: v for k, v in ex.entities.items()})


def test_relabel_canonical_over_20_permutations():
    ex = import_cnn_format(FIXTURES / "cnn_mixed" / "story04.question")
    ref = semantic(relabel_entities(ex))
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert semantic(relabel_entities(_permute_labels(ex, rng))) == ref


@settings(max_examples=40)
@given(st.integers(0, 2**31))
def test_relabel_idempotent_and_canonical(seed):
    rng = np.random.default_rng(seed)
    toks = [f"@entity{int(rng.integers(0, 30))}" if rng.random() < 0.4 else f"w{int(rng.integers(5))}" for _ in range(12)]
    toks.append("@entity99")
    ex = ClozeExample(0, toks, ["@entity99", BLANK], "@entity99")
    once = relabel_entities(ex)
    assert semantic(relabel_entities(once)) == semantic(once)
    assert semantic(relabel_entities(_permute_labels(ex, rng))) == semantic(once)
    firsts = [D.entity_index(t) for t in dict.fromkeys(t for t in once.passage if D.is_entity(t))]
    assert firsts == list(range(len(firsts)))


# ---------------------------------------------------------------- validation


def test_validate_mixed_fixture():
    exs = [import_cnn_format(p, k) for k, p in enumerate(sorted((FIXTURES / "cnn_mixed").glob("*.question")))]
    kept, report = validate_examples(exs)
    assert (report.total, report.kept, report.n_dropped) == (10, 7, 3)
    assert [i for i, _ in report.dropped] == [7, 8, 9]
    assert report.by_reason() == {"answer-not-in-passage": 3}


def test_validate_answer_only_in_question():
    ex = ClozeExample(0, ["@entity0", "x"], ["@entity1", BLANK], "@entity1")
    kept, report = validate_examples([ex])
    assert kept == [] and report.dropped == [(0, "answer-not-in-passage")]


def test_validate_blank_count():
    ex = ClozeExample(0, ["@entity0"], [BLANK, BLANK], "@entity0")
    assert validate_examples([ex])[1].by_reason() == {"blank-count": 1}


# ---------------------------------------------------------------- vocabulary


def test_vocab_frequency_limit():
    v = build_vocabulary([["a", "a", "b"]], size_limit=len(D.RESERVED) + 1)
    assert "a" in v and "b" not in v
    assert v.id("b") == v.unk_id


def test_vocab_tie_break():
    v = build_vocabulary([["z", "y", "y", "z", "x"]], size_limit=len(D.RESERVED) + 2)
    assert v.tokens[len(D.RESERVED):] == ["y", "z"]


def test_vocab_counts_match_hash_oracle():
    rng = np.random.default_rng(0)
    corpus = [[f"t{int(k)}" for k in rng.zipf(1.5, 100) % 200] for _ in range(10)]
    v = build_vocabulary(corpus, size_limit=10_000)
    oracle = {}
    for sent in corpus:
        for t in sent:
            oracle[t] = oracle.get(t, 0) + 1
    assert {t: c for t, c in v.counts.items() if t not in D.RESERVED} == oracle


def test_vocab_keeps_entities_and_reserved():
    v = build_vocabulary([["a", "@entity3"]], size_limit=1, entity_count=2)
    assert v.tokens[:3] == list(D.RESERVED)
    assert {"@entity0", "@entity1", "@entity3"} <= set(v.tokens)
    assert v.is_entity(v.id("@entity3")) and not v.is_entity(v.id("a") if "a" in v else v.unk_id)
    assert len({v.pad_id, v.unk_id, v.blank_id}) == 3
    assert D.Vocabulary.from_dict(v.to_dict()).digest() == v.digest()


# ---------------------------------------------------------------- embeddings


def test_embeddings_direct_read_and_fallback(tmp_path):
    vocab = D.Vocabulary(list(D.RESERVED) + ["the", "cat"])
    f = tmp_path / "vec.txt"
    f.write_text("the 0.1 0.2\n")
    table, cov = load_pretrained_embeddings(f, vocab, 2, np.random.default_rng(0))
    assert table[vocab.id("the")].tolist() == [0.1, 0.2]
    assert np.all(np.abs(table[vocab.id("cat")]) <= 0.01)
    assert np.isfinite(table).all()
    assert (cov.found, cov.total) == (1, 5)


def test_embeddings_coverage_three_of_five(tmp_path):
    vocab = D.Vocabulary(list(D.RESERVED) + ["a", "b"])
    f = tmp_path / "vec.txt"
    f.write_text("a 1 1\n<unk> 2 2\nb 3 3\nzzz 4 4\n")
    _, cov = load_pretrained_embeddings(f, vocab, 2, np.random.default_rng(0))
    assert (cov.found, cov.total) == (3, 5) and cov.ratio == pytest.approx(0.6)


def test_embeddings_dimension_mismatch(tmp_path):
    vocab = D.Vocabulary(list(D.RESERVED))
    f = tmp_path / "vec.txt"
    f.write_text("a 1 1\nb 1 1 1\n")
    with pytest.raises(ParseError, match="line 2"):
        load_pretrained_embeddings(f, vocab, 2, np.random.default_rng(0))


# ------------------------------------------------------------------ batches


def _encoded(n):
    rng = np.random.default_rng(n)
    return [EncodedExample(i, rng.integers(3, 9, int(rng.integers(2, 7))), rng.integers(3, 9, 2), 0, (0, 1)) for i in range(n)]


def test_batch_sizes():
    assert [len(b) for b in make_batches(_encoded(5), 2, 0, 0, 3)] == [2, 2, 1]


def test_batch_order_deterministic():
    a = [b.ids.tolist() for b in make_batches(_encoded(9), 4, 3, 1, 3)]
    b = [b.ids.tolist() for b in make_batches(_encoded(9), 4, 3, 1, 3)]
    c = [b.ids.tolist() for b in make_batches(_encoded(9), 4, 3, 2, 3)]
    assert a == b and a != c


@given(st.integers(1, 40), st.integers(1, 12), st.integers(0, 100))
def test_batches_cover_dataset_once(n, size, epoch):
    ds = _encoded(n)
    batches = make_batches(ds, size, 0, epoch, 3)
    assert Counter(i for b in batches for i in b.ids.tolist()) == Counter(range(n))
    for b in batches:
        assert b.passage.shape[1] == b.passage_mask.sum(axis=1).max()
        for row, i in enumerate(b.ids):
            assert np.array_equal(b.passage[row, b.passage_mask[row]], ds[i].passage)


def test_batch_size_error():
    with pytest.raises(ConfigError):
        make_batches(_encoded(3), 0, 0, 0, 3)


def test_encode_example_candidates():
    vocab = build_vocabulary([["@entity0", "x", "@entity2"]], 100, entity_count=3)
    ex = ClozeExample(0, "@entity2 x @entity0 @entity2".split(), ["x", BLANK], "@entity0")
    enc = D.encode_example(ex, vocab, 3)
    assert enc.candidates == (0, 2) and enc.answer == 0
    with pytest.raises(D.InvalidExampleError):
        D.encode_example(ex, vocab, 2)


# ---------------------------------------------------------------- synthetic


@pytest.mark.parametrize("rule", [D.POSITIONAL, D.TRIGGER])
def test_synthetic_two_entities_deterministic_and_solvable(rule):
    spec = SyntheticTaskSpec(rule=rule, num_examples=200, num_entities=2, seed=5)
    a, b = generate_synthetic_task(spec), generate_synthetic_task(spec)
    assert [semantic(x) for x in a] == [semantic(x) for x in b]
    assert all(oracle_answer(ex, rule) == ex.answer for ex in a)


@pytest.mark.parametrize("rule", [D.POSITIONAL, D.TRIGGER])
@pytest.mark.parametrize("entities", [2, 3, 4, 5])
def test_synthetic_invariants(rule, entities):
    exs = generate_synthetic_task(SyntheticTaskSpec(rule=rule, num_examples=100, num_entities=entities, seed=entities))
    kept, report = validate_examples(exs)
    assert report.n_dropped == 0
    for ex in exs:
        assert ex.question.count(BLANK) == 1
        assert len(ex.candidates) == entities
        assert oracle_answer(ex, rule) == ex.answer
        assert semantic(relabel_entities(ex)) == semantic(ex)


@pytest.mark.parametrize("rule", [D.POSITIONAL, D.TRIGGER])
def test_filler_shuffle_leaves_oracle_unchanged(rule):
    rng = np.random.default_rng(0)
    for ex in generate_synthetic_task(SyntheticTaskSpec(rule=rule, num_examples=50, seed=9)):
        slots = [i for i, t in enumerate(ex.passage) if t.startswith("w")]
        toks = list(ex.passage)
        fill = [toks[i] for i in slots]
        for i, t in zip(slots, rng.permutation(fill)):
            toks[i] = str(t)
        moved = ClozeExample(ex.id, toks, ex.question, ex.answer)
        assert oracle_answer(moved, rule) == ex.answer


def test_trigger_needs_both_neighbours():
    # every distractor shares one trigger with the answer, so a single trigger is never enough
    for ex in generate_synthetic_task(SyntheticTaskSpec(rule=D.TRIGGER, num_examples=50, seed=1)):
        ta, tb = [t for t in ex.question if t.startswith("t")]
        after_ta = [ex.passage[i + 1] for i, t in enumerate(ex.passage[:-1]) if t == ta]
        assert any(D.is_entity(t) and t != ex.answer for t in after_ta)


@pytest.mark.parametrize(
    "kw",
    [
        dict(passage_length=(3, 5)),
        dict(num_entities=0),
        dict(rule="nope"),
        dict(rule=D.TRIGGER, num_entities=1),
        dict(question_length=(1, 2)),
        dict(entity_pool=2),
        dict(rule=D.TRIGGER, num_markers=2),
    ],
)
def test_infeasible_specs(kw):
    with pytest.raises(ConfigError):
        generate_synthetic_task(SyntheticTaskSpec(**kw))
