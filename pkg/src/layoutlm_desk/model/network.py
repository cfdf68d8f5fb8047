"""Forward pass: embedding sum, post-LN transformer encoder, image fusion, heads.

All functions accept either a single :class:`TokenSequence` or a collated
:class:`Batch`; parameters may be numpy arrays or :class:`Tensor` leaves (the
latter when gradients are wanted).
"""

from __future__ import annotations

import math

import numpy as np

from .. import numkernel as nk
from ..errors import ContractError, ShapeError
from .types import GRID_MAX, Batch, ModelConfig, TokenSequence, collate

NEG_INF = -1e9  # finite stand-in for -inf; exp() of it underflows to exactly 0


def _batch(s) -> Batch:
    return s if isinstance(s, Batch) else collate(s)


def _t(p, name) -> nk.Tensor:
    return nk.as_tensor(p[name])


def embed(p, s, cfg: ModelConfig) -> nk.Tensor:
    """Seven-term sum: word + 1-D position + segment + X[x0] + X[x1] + Y[y0] + Y[y1]."""
    b = _batch(s)
    if b.ids.min() < 0 or b.ids.max() >= cfg.vocab_size:
        raise ContractError("token id outside the vocabulary")
    if b.bboxes.min() < 0 or b.bboxes.max() > GRID_MAX:
        raise ContractError(f"bbox coordinate outside [0, {GRID_MAX}]")
    if b.positions.max() >= cfg.max_len:
        raise ContractError("1-D position beyond max_len")
    table_x, table_y = _t(p, "emb.x"), _t(p, "emb.y")
    h = nk.embedding(_t(p, "emb.word"), b.ids)
    h = h + nk.embedding(_t(p, "emb.pos1d"), b.positions)
    h = h + nk.embedding(_t(p, "emb.segment"), b.segments)
    h = h + nk.embedding(table_x, b.bboxes[..., 0])
    h = h + nk.embedding(table_x, b.bboxes[..., 2])
    h = h + nk.embedding(table_y, b.bboxes[..., 1])
    h = h + nk.embedding(table_y, b.bboxes[..., 3])
    return h


def _linear(p, x, prefix) -> nk.Tensor:
    return x @ _t(p, prefix + ".w") + _t(p, prefix + ".b")


def _attention(p, x, add_mask, cfg: ModelConfig, pre: str, keep: list | None):
    bsz, n, h = x.shape
    nh, dh = cfg.heads, h // cfg.heads

    def split(t):
        return t.reshape(bsz, n, nh, dh).transpose(0, 2, 1, 3)

    q = split(_linear(p, x, pre + "attn.q"))
    k = split(_linear(p, x, pre + "attn.k"))
    v = split(_linear(p, x, pre + "attn.v"))
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh)) + add_mask
    probs = nk.softmax(scores, axis=-1)
    if keep is not None:
        keep.append(probs.data)
    ctx = (probs @ v).transpose(0, 2, 1, 3).reshape(bsz, n, h)
    return _linear(p, ctx, pre + "attn.o")


def encode(p, h0, mask, cfg: ModelConfig, return_attention: bool = False):
    """Post-layer-norm encoder stack; padded keys get a ``NEG_INF`` logit."""
    x = nk.as_tensor(h0)
    if x.ndim == 2:
        x = x.reshape(1, *x.shape)
    mask = np.asarray(mask)
    if mask.ndim == 1:
        mask = mask[None, :]
    add_mask = np.where(mask[:, None, None, :] > 0, 0.0, NEG_INF)
    keep = [] if return_attention else None
    for i in range(cfg.layers):
        pre = f"layer{i}."
        a = _attention(p, x, add_mask, cfg, pre, keep)
        x = nk.layer_norm(x + a, _t(p, pre + "ln1.g"), _t(p, pre + "ln1.b"), cfg.ln_eps)
        f = nk.gelu(_linear(p, x, pre + "ffn.in"))
        f = _linear(p, f, pre + "ffn.out")
        x = nk.layer_norm(x + f, _t(p, pre + "ln2.g"), _t(p, pre + "ln2.b"), cfg.ln_eps)
    if return_attention:
        return x, keep
    return x


def fuse_image(p, h, cfg: ModelConfig, token_feats=None, page_feats=None, word_mask=None):
    """Add projected region features to word-token states; project the page feature.

    Returns ``(H', cls_image_embedding)``. With ``use_image`` off or no
    features supplied this is the identity and the page embedding is zero.
    """
    h = nk.as_tensor(h)
    bsz = h.shape[0]
    if not cfg.use_image or token_feats is None:
        return h, nk.Tensor(np.zeros((bsz, cfg.hidden)))
    token_feats = np.asarray(token_feats, dtype=np.float64)
    page_feats = np.asarray(page_feats, dtype=np.float64)
    if token_feats.shape != (*h.shape[:2], cfg.img_feat_dim):
        raise ShapeError(f"token features {token_feats.shape} do not match "
                         f"{(*h.shape[:2], cfg.img_feat_dim)}")
    if page_feats.shape != (bsz, cfg.img_feat_dim):
        raise ShapeError(f"page features {page_feats.shape} do not match "
                         f"{(bsz, cfg.img_feat_dim)}")
    w, bias = _t(p, "img.proj.w"), _t(p, "img.proj.b")
    proj = nk.as_tensor(token_feats) @ w + bias
    sel = np.asarray(word_mask, dtype=np.float64)[..., None]
    fused = h + proj * sel
    cls_img = nk.as_tensor(page_feats) @ w + bias
    return fused, cls_img


def mvlm_logits(p, h, positions) -> nk.Tensor:
    """Tied output projection: ``H[pos] @ word_table.T + bias``.

    ``positions`` is a list of token indices for an unbatched ``[L, hidden]``
    state, or a ``(batch_idx, token_idx)`` pair of arrays for ``[B, L, hidden]``.
    """
    h = nk.as_tensor(h)
    word = _t(p, "emb.word")
    if h.ndim == 2:
        index = (np.asarray(positions, dtype=np.int64),)
    else:
        index = tuple(np.asarray(a, dtype=np.int64) for a in positions)
    for axis, idx in enumerate(index):
        if idx.size and (idx.min() < 0 or idx.max() >= h.shape[axis]):
            raise ContractError("masked position out of range")
    rows = nk.gather(h, index)
    return rows @ word.transpose() + _t(p, "head.mvlm.b")


def cls_vectors(h) -> nk.Tensor:
    return nk.gather(nk.as_tensor(h), (slice(None), 0))


def mdc_logits(p, cls_vector) -> nk.Tensor:
    return _linear(p, nk.as_tensor(cls_vector), "head.mdc")


def seqlabel_logits(p, h) -> nk.Tensor:
    return _linear(p, nk.as_tensor(h), "head.seqlabel")


def docclass_logits(p, cls_vector, cls_image_embedding) -> nk.Tensor:
    both = nk.concat([nk.as_tensor(cls_vector), nk.as_tensor(cls_image_embedding)], axis=-1)
    return _linear(p, both, "head.docclass")


def forward(p, s, cfg: ModelConfig, token_feats=None, page_feats=None):
    """embed -> encode -> fuse_image. Returns ``(H, H', cls_image_embedding)``."""
    b = _batch(s)
    h = encode(p, embed(p, b, cfg), b.mask, cfg)
    word_mask = b.word_index >= 0
    fused, cls_img = fuse_image(p, h, cfg, token_feats, page_feats, word_mask)
    return h, fused, cls_img


def argmax_lowest(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """``np.argmax`` already returns the first maximal index; named for intent."""
    return np.argmax(x, axis=axis)


def as_leaves(params, names) -> dict:
    """Wrap arrays as tensors; ``names`` get ``requires_grad``."""
    names = set(names)
    return {k: nk.Tensor(v, requires_grad=k in names, check=False) for k, v in params.items()}
