from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from layoutlm_desk import synthcorpus as sc
from layoutlm_desk.errors import ContractError
from layoutlm_desk.ingest import EntitySpan, RawWord
from layoutlm_desk.model import TokenSequence


def test_lexicon_shape():
    assert len(sc.LEXICON) == len(set(sc.LEXICON)) == 60
    assert [len(p) for p in sc.PHRASES] == [1] * 10 + [2] * 10 + [3] * 10
    assert sorted(w for p in sc.PHRASES for w in p) == sorted(sc.LEXICON)
    assert len(sc.TOPICS) == 10 and all(len(t) == 3 for t in sc.TOPICS)
    assert sorted(p for t in sc.TOPICS for p in t) == sorted(sc.PHRASES)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2 ** 32 - 1))
def test_form_entity_count_and_self_check(n_pairs, seed):
    spec = sc.FormSpec(n_pairs=n_pairs)
    d = sc.gen_form(spec, np.random.default_rng(seed))
    assert len(d.entities) == 2 * n_pairs
    assert Counter(e.label for e in d.entities) == {"question": n_pairs, "answer": n_pairs}
    assert sc.self_check(d)
    sc.check_boxes(d)
    again = sc.gen_form(spec, np.random.default_rng(seed))
    assert again == d


def test_form_spec_overflow():
    with pytest.raises(ContractError):
        sc.gen_form(sc.FormSpec(n_pairs=13), np.random.default_rng(0))
    with pytest.raises(ContractError):
        sc.gen_form(sc.FormSpec(page_sizes=((800, 1000),)), np.random.default_rng(0))


def test_shared_lexicon_carries_no_role_signal():
    docs = sc.form_dataset(400, 3)
    counts = {"question": Counter(), "answer": Counter()}
    first = Counter()
    for d in docs:
        for e in d.entities:
            counts[e.label][" ".join(w.text for w in d.words[e.start:e.end + 1])] += 1
        first[d.entities[0].label] += 1
    q, a = counts["question"], counts["answer"]
    assert set(q) == set(a) == {" ".join(p) for p in sc.PHRASES}
    # each phrase roughly equally often in either role, and reading order is no cue
    for ph in q:
        share = q[ph] / (q[ph] + a[ph])
        assert 0.3 < share < 0.7, ph
    assert abs(first["question"] / len(docs) - 0.5) < 0.08


def test_shuffle_words_keeps_labels_shuffle_boxes_breaks_them():
    rng = np.random.default_rng(1)
    d = sc.gen_form(sc.FormSpec(n_pairs=6), rng)
    texts = [w.text for w in d.words]
    perm = rng.permutation(len(texts))
    d.words = [RawWord(texts[j], w.box, w.style) for j, w in zip(perm, d.words)]
    assert sc.self_check(d)
    boxes = [w.box for w in d.words]
    broken = 0
    for k in range(20):
        perm = np.random.default_rng(k).permutation(len(boxes))
        d2 = sc.gen_form(sc.FormSpec(n_pairs=6), np.random.default_rng(1))
        d2.words = [RawWord(w.text, boxes[j], w.style) for j, w in zip(perm, d2.words)]
        broken += not sc.self_check(d2)
    assert broken >= 19


def test_unshared_lexicon_variant():
    d = sc.gen_form(sc.FormSpec(n_pairs=6, shared_lexicon=False), np.random.default_rng(0))
    topic = next(t for t in sc.TOPICS if d.words[0].text in {w for p in t for w in p})
    for e in d.entities:
        ph = tuple(w.text for w in d.words[e.start:e.end + 1])
        assert ph in (topic[0::2] if e.label == "question" else topic[1::2])


def test_label_noise_flips_roles():
    d = sc.gen_form(sc.FormSpec(n_pairs=8, label_noise=1.0), np.random.default_rng(0))
    assert not sc.self_check(d)
    assert sc.layout_entities(d) == {EntitySpan(e.start, e.end,
                                                "answer" if e.label == "question" else "question")
                                     for e in d.entities}


def test_classdocs():
    docs = sc.classdoc_dataset(400, 0)
    assert Counter(d.label for d in docs) == {c: 100 for c in sc.CLASS_NAMES}
    for d in docs[:40]:
        sc.check_boxes(d)
    same = sc.gen_classdoc(2, np.random.default_rng(5), doc_id="x")
    assert same == sc.gen_classdoc(2, np.random.default_rng(5), doc_id="x")
    # word content is drawn the same way for every class
    lens = {c: np.mean([len(d.words) for d in docs if d.label == c]) for c in sc.CLASS_NAMES}
    assert max(lens.values()) - min(lens.values()) < 2.0
    with pytest.raises(ContractError):
        sc.gen_classdoc(4, np.random.default_rng(0))


def test_receipts():
    for d in sc.receipt_dataset(20, 0):
        assert set(d.slots) == set(sc.RECEIPT_SLOTS)
        got = {e.label: " ".join(w.text for w in d.words[e.start:e.end + 1]) for e in d.entities}
        assert got == d.slots
        sc.check_boxes(d)


def test_pretrain_corpus():
    ex, vocab = sc.gen_pretrain_corpus(1000, np.random.default_rng(0), max_len=128)
    assert len(ex) == 1000
    tags = np.stack([e.mdc_tags for e in ex])
    assert tags.shape == (1000, len(sc.MDC_TAGS)) and len(sc.MDC_TAGS) >= 4
    assert abs(tags[:, 0].mean() - 0.5) < 0.05
    assert (tags[:, 0] + tags[:, 1] == 1).all()
    for e in ex[:50]:
        assert isinstance(e.sequence, TokenSequence)
        TokenSequence(**{k: getattr(e.sequence, k) for k in e.sequence.__dataclass_fields__})
    ex2, _ = sc.gen_pretrain_corpus(1000, np.random.default_rng(0), max_len=128)
    assert all(np.array_equal(a.sequence.ids, b.sequence.ids) for a, b in zip(ex, ex2))
    with pytest.raises(ContractError):
        sc.pretrain_documents(0, np.random.default_rng(0))
