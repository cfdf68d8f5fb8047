import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from layoutlm_desk import numkernel as nk
from layoutlm_desk.errors import (
    CompatibilityError,
    ConfigError,
    ContractError,
    CorruptCheckpointError,
    ShapeError,
    TruncatedCheckpointError,
    UnsupportedVersionError,
)
from layoutlm_desk.model import (
    BBox,
    Checkpoint,
    ModelConfig,
    adapt_params,
    bieso_tagset,
    checkpoints_equal,
    cls_vectors,
    collate,
    docclass_logits,
    embed,
    encode,
    forward,
    from_bytes,
    fuse_image,
    init_from_text_checkpoint,
    init_params,
    load_checkpoint,
    mdc_logits,
    mvlm_logits,
    param_shapes,
    save_checkpoint,
    seqlabel_logits,
    to_bytes,
    trainable_names,
)
from layoutlm_desk.model.network import as_leaves

from gradcheck import numeric_grad, random_sequence, rel_error

CFG = ModelConfig(layers=2, hidden=16, heads=2, ffn_dim=32, max_len=12, vocab_size=40,
                  img_feat_dim=3, num_mdc_tags=3, num_doc_classes=4)
GOLDEN_CFG = ModelConfig(layers=1, hidden=4, heads=2, ffn_dim=8, max_len=6, vocab_size=8,
                         img_feat_dim=2, num_doc_classes=2, num_mdc_tags=2,
                         tagset=bieso_tagset(("x",)))


def seq(n_real=9, seed=0, cfg=CFG):
    return random_sequence(cfg, n_real, np.random.default_rng(seed))


def zeroed(p, keep=()):
    q = p.copy()
    for k in ("emb.word", "emb.pos1d", "emb.segment", "emb.x", "emb.y"):
        if k not in keep:
            q[k] = np.zeros_like(q[k])
    return q


# -- types -------------------------------------------------------------------------

def test_bbox_invariants():
    BBox(0, 0, 1000, 1000)
    for bad in ((-1, 0, 5, 5), (0, 0, 1001, 5), (5, 0, 4, 5), (0, 5, 5, 4), (0.5, 0, 1, 1)):
        with pytest.raises(ContractError):
            BBox(*bad)


def test_model_config_validation():
    with pytest.raises(ConfigError) as err:
        ModelConfig(hidden=10, heads=3)
    assert "divisible" in str(err.value)
    with pytest.raises(ConfigError):
        ModelConfig(coord_vocab=500)
    assert len(ModelConfig().tagset) == 13  # O + BIES x {question, answer, header}
    assert ModelConfig.from_dict(CFG.to_dict()) == CFG


# -- embedding -----------------------------------------------------------------------

def test_embed_word_only():
    p = zeroed(init_params(CFG, 0), keep=("emb.word",))
    s = seq()
    h = embed(p, s, CFG).data[0]
    np.testing.assert_array_equal(h, p["emb.word"][s.ids])


def test_embed_additive_decomposition():
    p, s = init_params(CFG, 1), seq()
    full = embed(p, s, CFG).data[0]
    lookups = {
        "emb.word": p["emb.word"][s.ids],
        "emb.pos1d": p["emb.pos1d"][s.positions],
        "emb.segment": p["emb.segment"][s.segments],
        "emb.x": p["emb.x"][s.bboxes[:, 0]] + p["emb.x"][s.bboxes[:, 2]],
        "emb.y": p["emb.y"][s.bboxes[:, 1]] + p["emb.y"][s.bboxes[:, 3]],
    }
    for name, contrib in lookups.items():
        q = p.copy()
        q[name] = np.zeros_like(q[name])
        np.testing.assert_allclose(full - embed(q, s, CFG).data[0], contrib, atol=1e-15)


def test_embed_bbox_difference():
    p, s = init_params(CFG, 2), seq()
    t = s.copy()
    t.bboxes[1] = (100, 200, 300, 400)
    d = embed(p, t, CFG).data[0] - embed(p, s, CFG).data[0]
    X, Y = p["emb.x"], p["emb.y"]
    a, b = t.bboxes[1], s.bboxes[1]
    expect = X[a[0]] + X[a[2]] + Y[a[1]] + Y[a[3]] - (X[b[0]] + X[b[2]] + Y[b[1]] + Y[b[3]])
    np.testing.assert_allclose(d[1], expect, atol=1e-15)
    assert np.all(d[np.arange(len(d)) != 1] == 0)


def test_table_x_row_perturbation_sweep():
    p = init_params(CFG, 3)
    seqs = [seq(12, k) for k in range(6)]
    b = collate(seqs)
    base = embed(p, b, CFG).data
    for k in np.unique(b.bboxes[..., [0, 2]])[:15]:
        q = p.copy()
        q["emb.x"][k] += 1.0
        changed = np.any(embed(q, b, CFG).data != base, axis=-1)
        hit = (b.bboxes[..., 0] == k) | (b.bboxes[..., 2] == k)
        np.testing.assert_array_equal(changed, hit)


def test_embed_range_checks():
    p, s = init_params(CFG, 0), seq()
    bad = s.copy()
    bad.ids[1] = CFG.vocab_size
    with pytest.raises(ContractError):
        embed(p, bad, CFG)
    bad = s.copy()
    bad.bboxes[1, 2] = 1001
    with pytest.raises(ContractError):
        embed(p, bad, CFG)


def test_shared_table_gradient_is_sum_of_contributions():
    cfg = CFG.replace(layers=1)
    p = init_params(cfg, 4)
    s = seq()
    s.bboxes[1] = (7, 9, 7, 9)       # x0 == x1 == 7, y0 == y1 == 9
    s.bboxes[2] = (3, 9, 7, 11)      # x1 == 7, y0 == 9
    w = np.random.default_rng(0).normal(size=(1, cfg.max_len, cfg.hidden))

    def loss_of(params):
        leaves = as_leaves(params, ["emb.x"])
        return leaves, nk.sum_(embed(leaves, s, cfg) * w)

    leaves, loss = loss_of(p)
    (g,) = nk.backward(loss, [leaves["emb.x"]])
    expect = w[0, 1] * 2 + w[0, 2]  # row 7: twice from token 1, once from token 2
    np.testing.assert_allclose(g[7], expect, atol=1e-14)
    row = p["emb.x"][7]
    num = numeric_grad(lambda: loss_of(p)[1].item(), row)
    assert rel_error(g[7], num) < 1e-7


# -- encoder ---------------------------------------------------------------------------

def test_zero_layer_encoder_is_identity():
    cfg = CFG.replace(layers=0)
    p, s = init_params(cfg, 0), seq()
    h0 = embed(p, s, cfg)
    np.testing.assert_array_equal(encode(p, h0, s.mask, cfg).data, h0.data)


def test_attention_rows_sum_to_one_and_ignore_padding():
    p, s = init_params(CFG, 5), seq(7)
    _, att = encode(p, embed(p, s, CFG), s.mask, CFG, return_attention=True)
    for a in att:
        np.testing.assert_allclose(a.sum(-1), 1.0, atol=1e-10)
        assert np.all(a[..., s.mask == 0] == 0.0)


def test_padding_isolation():
    p, s = init_params(CFG, 6), seq(7)
    out = forward(p, s, CFG)[0].data[0]
    t = s.copy()
    t.bboxes[9] = (1, 2, 3, 4)
    t.segments[8:] = 1
    t.positions[10] = 3
    out2 = forward(p, t, CFG)[0].data[0]
    real = s.mask == 1
    np.testing.assert_allclose(out2[real], out[real], atol=1e-12)
    assert not np.allclose(out2[~real], out[~real])


# -- image fusion --------------------------------------------------------------------

def test_fuse_image_switches():
    cfg = CFG.replace(use_image=True)
    p, s = init_params(cfg, 7), seq()
    h = forward(p, s, cfg)[0]
    b = collate(s)
    wm = b.word_index >= 0
    q = p.copy()
    q["img.proj.b"] = np.zeros_like(q["img.proj.b"])
    out, cls_img = fuse_image(q, h, cfg, np.zeros((1, cfg.max_len, 3)), np.zeros((1, 3)), wm)
    np.testing.assert_array_equal(out.data, h.data)
    out, cls_img = fuse_image(p, h, CFG)  # text-only: identity, zero page embedding
    assert out is h or np.array_equal(out.data, h.data)
    np.testing.assert_array_equal(cls_img.data, np.zeros((1, cfg.hidden)))
    feats = np.zeros((1, cfg.max_len, 3))
    feats[0, 4] = (1.0, -2.0, 0.5)
    out, _ = fuse_image(q, h, cfg, feats, np.zeros((1, 3)), wm)
    rows = np.flatnonzero(np.any(out.data[0] != h.data[0], axis=-1))
    assert rows.tolist() == [4]
    with pytest.raises(ShapeError):
        fuse_image(q, h, cfg, np.zeros((1, cfg.max_len, 2)), np.zeros((1, 2)), wm)


# -- heads -----------------------------------------------------------------------------

def test_mvlm_head():
    p = init_params(CFG, 8)
    p["head.mvlm.b"] = np.zeros(CFG.vocab_size)
    z = mvlm_logits(p, np.zeros((CFG.max_len, CFG.hidden)), [1, 2])
    np.testing.assert_array_equal(z.data, np.zeros((2, CFG.vocab_size)))
    assert mvlm_logits(p, np.zeros((CFG.max_len, CFG.hidden)), []).shape == (0, CFG.vocab_size)
    h = np.random.default_rng(0).normal(size=(CFG.max_len, CFG.hidden))
    base = mvlm_logits(p, h, [0, 3, 5]).data
    q = p.copy()
    q["emb.word"][9] += 0.5
    diff = mvlm_logits(q, h, [0, 3, 5]).data != base
    assert diff[:, 9].all() and not np.delete(diff, 9, axis=1).any()
    with pytest.raises(ContractError):
        mvlm_logits(p, h, [CFG.max_len])


def test_mdc_head():
    p = init_params(CFG, 0)
    p["head.mdc.w"][:] = 0
    z = mdc_logits(p, np.ones((2, CFG.hidden)))
    np.testing.assert_array_equal(z.data, 0)
    assert abs(nk.bce_with_logits(z, [[1, 0, 1], [0, 0, 1]]).item() - np.log(2)) < 1e-15
    one = CFG.replace(num_mdc_tags=1)
    assert mdc_logits(init_params(one, 0), np.ones((1, 16))).shape == (1, 1)


def test_seqlabel_and_docclass_heads():
    p = init_params(CFG, 0)
    for k in ("head.seqlabel.w", "head.docclass.w"):
        p[k][:] = 0
    logits = seqlabel_logits(p, np.ones((1, CFG.max_len, CFG.hidden))).data
    assert (np.argmax(logits, -1) == 0).all()  # ties -> lowest index
    h = forward(p, seq(), CFG)
    cls_img = h[2].data
    np.testing.assert_array_equal(cls_img, 0)
    probs = nk.softmax(docclass_logits(p, cls_vectors(h[0]), h[2])).data
    np.testing.assert_allclose(probs, 0.25)
    assert param_shapes(CFG.replace(num_doc_classes=16))["head.docclass.w"] == (32, 16)


# -- init ------------------------------------------------------------------------------

def test_init_params():
    a, b, c = init_params(CFG, 0), init_params(CFG, 0), init_params(CFG, 1)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not np.array_equal(a["emb.word"], c["emb.word"])
    assert set(a) == set(param_shapes(CFG))
    for k, v in a.items():
        assert v.shape == param_shapes(CFG)[k]
        if k.endswith((".ln1.g", ".ln2.g")):
            assert (v == 1).all()
        elif k.endswith(".b"):
            assert (v == 0).all()
        else:
            assert np.abs(v).max() <= 0.04 and v.std() > 0.01


def test_text_only_mode_zeroes_and_freezes_layout():
    cfg = CFG.replace(use_layout=False)
    p = init_params(cfg, 0)
    assert not p["emb.x"].any() and not p["emb.y"].any()
    names = trainable_names(cfg)
    assert "emb.x" not in names and "emb.y" not in names
    full = init_params(CFG, 0)
    same = [k for k in p if k not in ("emb.x", "emb.y")]
    assert all(np.array_equal(p[k], full[k]) for k in same)
    assert {k: v.shape for k, v in p.items()} == {k: v.shape for k, v in full.items()}


def test_init_from_text_checkpoint():
    text_cfg = CFG.replace(use_layout=False)
    src = Checkpoint(init_params(text_cfg, 11), text_cfg)
    for k in src.params:
        src.params[k] = src.params[k] + 0.001 * (hash(k) % 7)
    p = init_from_text_checkpoint(CFG, src, seed=3)
    for k in p:
        if k.startswith(("emb.word", "emb.pos1d", "emb.segment", "layer")):
            assert np.array_equal(p[k], src.params[k]), k
    for k in ("emb.x", "emb.y"):
        assert not any(np.array_equal(p[k], v) for v in src.params.values() if v.shape == p[k].shape)
    with pytest.raises(CompatibilityError) as err:
        init_from_text_checkpoint(CFG.replace(hidden=32, max_len=16), src, 0)
    text = str(err.value)
    assert "hidden" in text and "max_len" in text


def test_adapt_params_resizes_heads():
    p = init_params(CFG, 0)
    target = CFG.replace(tagset=bieso_tagset(("a",)), use_layout=False)
    q = adapt_params(p, CFG, target, seed=1)
    assert q["head.seqlabel.w"].shape == (16, 5)
    assert np.array_equal(q["layer1.ffn.in.w"], p["layer1.ffn.in.w"])
    assert not q["emb.x"].any()
    with pytest.raises(CompatibilityError):
        adapt_params(p, CFG, CFG.replace(vocab_size=41), 0)


# -- checkpoints -------------------------------------------------------------------------

def _golden_ckpt():
    p = init_params(GOLDEN_CFG, 123)
    st_ = nk.AdamState({"emb.word": np.full((8, 4), 0.25)}, {"emb.word": np.full((8, 4), 0.5)}, 3)
    return Checkpoint(p, GOLDEN_CFG, st_, {"step": 3, "note": "golden"})


def test_checkpoint_golden_bytes(data_dir):
    golden = (data_dir / "golden_tiny.ckpt").read_bytes()
    assert to_bytes(_golden_ckpt()) == golden
    assert golden[:8] == b"LYLMCKPT"
    assert int.from_bytes(golden[8:12], "little") == 1
    assert int.from_bytes(golden[12:20], "little") == len(golden) - 20 - 32


def test_checkpoint_round_trip(tmp_path):
    ck = _golden_ckpt()
    save_checkpoint(ck, tmp_path / "a.ckpt")
    back = load_checkpoint(tmp_path / "a.ckpt")
    assert checkpoints_equal(ck, back)
    save_checkpoint(back, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert back.opt_state.step == 3
    assert not list(tmp_path.glob("*.tmp"))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31), st.booleans())
def test_checkpoint_round_trip_random(seed, with_opt):
    p = init_params(GOLDEN_CFG, seed)
    opt = nk.AdamState({k: v * 2 for k, v in p.items()}, {k: v * v for k, v in p.items()}, 5) \
        if with_opt else None
    ck = Checkpoint(p, GOLDEN_CFG, opt, {"seed": seed})
    assert checkpoints_equal(from_bytes(to_bytes(ck)), ck)


def test_checkpoint_errors():
    data = bytearray(to_bytes(_golden_ckpt()))
    flipped = bytearray(data)
    flipped[200] ^= 0x01
    with pytest.raises(CorruptCheckpointError):
        from_bytes(bytes(flipped))
    v999 = bytearray(data)
    v999[8:12] = (999).to_bytes(4, "little")
    with pytest.raises(UnsupportedVersionError):
        from_bytes(bytes(v999))
    with pytest.raises(TruncatedCheckpointError):
        from_bytes(bytes(data[:len(data) // 2]))
    with pytest.raises(CorruptCheckpointError):
        from_bytes(b"NOTACKPT" + bytes(data[8:]))
    with pytest.raises(CorruptCheckpointError):
        from_bytes(bytes(data) + b"\0")
