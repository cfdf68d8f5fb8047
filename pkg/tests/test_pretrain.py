import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from layoutlm_desk import numkernel as nk
from layoutlm_desk import synthcorpus as sc
from layoutlm_desk.errors import ContractError, DataError
from layoutlm_desk.model import Checkpoint, ModelConfig, checkpoints_equal, init_params
from layoutlm_desk.pretrain import (
    MaskingPolicy,
    PretrainExample,
    apply_masking,
    batch_schedule,
    heldout_mvlm_loss,
    mdc_loss,
    mvlm_loss,
    read_loss_curve,
    run_pretrain,
    warning_counts,
    write_loss_curve,
)
from layoutlm_desk.textproc import Vocabulary

from gradcheck import random_sequence

CFG = ModelConfig(layers=1, hidden=16, heads=2, ffn_dim=32, max_len=24, vocab_size=50,
                  num_mdc_tags=5)
SPECIALS = sorted(Vocabulary.special_ids)


@pytest.fixture(scope="module")
def corpus():
    docs = sc.pretrain_documents(24, np.random.default_rng(0))
    vocab = sc.corpus_vocab(docs, 200)
    cfg = CFG.replace(vocab_size=len(vocab))
    return sc.encode_pretrain(docs, vocab, cfg.max_len), cfg


def test_masking_policy_validation():
    with pytest.raises(ContractError):
        MaskingPolicy(p_mask=0.5)
    with pytest.raises(ContractError):
        MaskingPolicy(select_rate=1.0)


def test_select_rate_zero_is_identity():
    s = random_sequence(CFG, 20, np.random.default_rng(0))
    m, targets = apply_masking(s, MaskingPolicy(select_rate=0.0), np.random.default_rng(1), 50)
    assert targets == [] and np.array_equal(m.ids, s.ids)


@settings(max_examples=50, deadline=None)
@given(st.integers(3, 24), st.integers(0, 2 ** 32 - 1), st.floats(0.0, 0.9))
def test_masking_touches_only_selected_ids(n_real, seed, rate):
    s = random_sequence(CFG, n_real, np.random.default_rng(seed))
    m, targets = apply_masking(s, MaskingPolicy(select_rate=rate), np.random.default_rng(seed), 50)
    for name in ("bboxes", "positions", "segments", "mask", "word_index"):
        assert np.array_equal(getattr(m, name), getattr(s, name))
    pos = {p for p, _ in targets}
    changed = set(np.flatnonzero(m.ids != s.ids).tolist())
    assert changed <= pos
    for p, orig in targets:
        assert s.mask[p] == 1 and s.ids[p] not in SPECIALS and orig == s.ids[p]
    assert all(m.ids[p] != Vocabulary.pad_id for p in pos)


def test_mvlm_loss_uniform_at_init():
    cfg = CFG.replace(vocab_size=500)
    p = init_params(cfg, 0)
    for k in p:
        if not k.endswith((".g", ".b")):
            p[k] = p[k] * 1e-3
    s = random_sequence(cfg, 20, np.random.default_rng(0))
    m, t = apply_masking(s, MaskingPolicy(select_rate=0.5), np.random.default_rng(0), 500)
    loss = mvlm_loss(p, cfg, m, t).item()
    assert abs(loss - math.log(500)) < 0.05 * math.log(500)


def test_mvlm_loss_support():
    p = init_params(CFG, 1)
    s = random_sequence(CFG, 20, np.random.default_rng(2))
    m, t = apply_masking(s, MaskingPolicy(select_rate=0.3), np.random.default_rng(3), 50)
    base = mvlm_loss(p, CFG, m, t).item()
    # target ids changed -> loss changes; bookkeeping of non-targets is irrelevant
    t2 = [(q, (o + 1) % 50) for q, o in t]
    assert mvlm_loss(p, CFG, m, t2).item() != base
    assert mvlm_loss(p, CFG, m, list(t)).item() == base


def test_mvlm_loss_one_hot_logits():
    p = init_params(CFG, 0)
    s = random_sequence(CFG, 10, np.random.default_rng(4))
    m, t = apply_masking(s, MaskingPolicy(select_rate=0.5), np.random.default_rng(5), 50)
    # a dominant output bias makes the head one-hot at a single id
    q = dict(p)
    q["head.mvlm.b"] = np.full(50, -1e3)
    only = t[0][1]
    q["head.mvlm.b"][only] = 1e3
    same = [(pos, only) for pos, _ in t]
    assert mvlm_loss(q, CFG, m, same).item() < 1e-9


def test_mvlm_loss_empty_targets_counts_warning():
    p = init_params(CFG, 0)
    s = random_sequence(CFG, 10, np.random.default_rng(4))
    before = warning_counts["empty_mvlm_targets"]
    assert mvlm_loss(p, CFG, s, []).item() == 0.0
    assert warning_counts["empty_mvlm_targets"] == before + 1


def test_mdc_loss_examples():
    p = init_params(CFG, 0)
    p["head.mdc.w"][:] = 0
    assert abs(mdc_loss(p, np.ones(16), [1, 0, 1, 1, 0]).item() - math.log(2)) < 1e-15
    p["head.mdc.b"] = np.array([50.0, -50.0, 50.0, 50.0, -50.0])
    assert mdc_loss(p, np.ones(16), [1, 0, 1, 1, 0]).item() < 1e-6
    p["head.mdc.b"] = np.full(5, -40.0)
    assert mdc_loss(p, np.ones(16), [0, 0, 0, 0, 0]).item() < 1e-6


def test_batch_schedule_covers_epoch():
    got = np.concatenate([batch_schedule(10, 4, 0, s) for s in range(3)])
    assert sorted(got.tolist()) == list(range(10))
    assert len(batch_schedule(10, 4, 0, 2)) == 2
    assert not np.array_equal(batch_schedule(10, 4, 0, 0), batch_schedule(10, 4, 0, 3))


def test_zero_steps_returns_initial_params(corpus):
    ex, cfg = corpus
    ck, rec = run_pretrain(ex, cfg, nk.OptimizerConfig(initial_lr=1e-3, total_steps=10), seed=5, steps=0)
    assert rec == []
    init = init_params(cfg, 5)
    assert all(np.array_equal(ck.params[k], init[k]) for k in init)


def test_pretrain_deterministic_and_resumable(corpus):
    ex, cfg = corpus
    opt = nk.OptimizerConfig(initial_lr=1e-3, total_steps=6)
    a, ra = run_pretrain(ex, cfg, opt, ("mvlm", "mdc"), seed=3, batch_size=4)
    b, rb = run_pretrain(ex, cfg, opt, ("mvlm", "mdc"), seed=3, batch_size=4)
    assert checkpoints_equal(a, b) and ra == rb
    half, _ = run_pretrain(ex, cfg, opt, ("mvlm", "mdc"), seed=3, steps=3, batch_size=4)
    rest, rr = run_pretrain(ex, cfg, opt, ("mvlm", "mdc"), seed=3, batch_size=4, init=half)
    assert checkpoints_equal(rest, a)
    assert rr == ra[3:]


def test_mdc_off_leaves_mdc_head_untouched(corpus):
    ex, cfg = corpus
    ck, rec = run_pretrain(ex, cfg, nk.OptimizerConfig(initial_lr=1e-2, total_steps=3), ("mvlm",), seed=0, batch_size=4)
    init = init_params(cfg, 0)
    for k in ("head.mdc.w", "head.mdc.b", "head.seqlabel.w", "head.docclass.w", "img.proj.w"):
        assert np.array_equal(ck.params[k], init[k])
    assert not np.array_equal(ck.params["emb.word"], init["emb.word"])
    assert all(math.isnan(r.mdc) for r in rec)


def test_mdc_requires_tags(corpus):
    ex, cfg = corpus
    bad = list(ex[:3]) + [PretrainExample(ex[3].sequence, None)]
    with pytest.raises(DataError) as err:
        run_pretrain(bad, cfg, nk.OptimizerConfig(initial_lr=1e-3, total_steps=1), ("mvlm", "mdc"))
    assert ex[3].sequence.doc_id in str(err.value)
    with pytest.raises(ContractError):
        run_pretrain(ex, cfg, nk.OptimizerConfig(initial_lr=1e-3, total_steps=1), ("mdc",))


def test_loss_curve_file(tmp_path, corpus):
    ex, cfg = corpus
    _, rec = run_pretrain(ex, cfg, nk.OptimizerConfig(initial_lr=1e-3, total_steps=2), seed=0, batch_size=4)
    write_loss_curve(rec, tmp_path / "c.tsv")
    lines = (tmp_path / "c.tsv").read_text().splitlines()
    assert len(lines) == 2 and lines[0].split("\t")[0] == "1" and lines[0].endswith("\tnan")
    back = read_loss_curve(tmp_path / "c.tsv")
    assert [r.mvlm for r in back] == [r.mvlm for r in rec]


def test_heldout_loss_is_deterministic(corpus):
    ex, cfg = corpus
    p = init_params(cfg, 0)
    a = heldout_mvlm_loss(p, cfg, ex[:8])
    assert a == heldout_mvlm_loss(p, cfg, ex[:8])
    assert abs(a - math.log(cfg.vocab_size)) < 1.0
