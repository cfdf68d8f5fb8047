"""Masked visual-language modelling, multi-label document classification and
the pre-training loop.

Random streams (all derived from the run seed, see :func:`stream_rng`):

* ``STREAM_ORDER`` + epoch: shuffled example order for that epoch
* ``STREAM_MASK`` + step: token selection / replacement for that step
* parameter init uses the bare seed (``init_params(cfg, seed)``)
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numkernel as nk
from .errors import ContractError, DataError
from .model import (
    Checkpoint,
    ModelConfig,
    TokenSequence,
    cls_vectors,
    collate,
    embed,
    encode,
    init_params,
    mdc_logits,
    mvlm_logits,
    trainable_names,
)
from .model.network import as_leaves
from .textproc import Vocabulary

log = logging.getLogger(__name__)

STREAM_ORDER = 1
STREAM_MASK = 2
STREAM_EVAL = 3

warning_counts: Counter = Counter()

_SPECIAL_IDS = np.array(sorted(Vocabulary.special_ids), dtype=np.int64)
_PRETRAIN_FROZEN = ("head.seqlabel.w", "head.seqlabel.b", "head.docclass.w",
                    "head.docclass.b", "img.proj.w", "img.proj.b")


def stream_rng(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), stream, int(index)])


@dataclass(frozen=True)
class MaskingPolicy:
    select_rate: float = 0.15
    p_mask: float = 0.8
    p_random: float = 0.1
    p_keep: float = 0.1

    def __post_init__(self):
        if not 0 <= self.select_rate < 1:
            raise ContractError(f"select_rate must lie in [0, 1), got {self.select_rate}")
        probs = (self.p_mask, self.p_random, self.p_keep)
        if min(probs) < 0 or not math.isclose(sum(probs), 1.0, abs_tol=1e-12):
            raise ContractError(f"replacement probabilities must be >= 0 and sum to 1, got {probs}")


@dataclass
class PretrainExample:
    sequence: TokenSequence
    mdc_tags: np.ndarray | None = None


def apply_masking(s: TokenSequence, policy: MaskingPolicy, rng: np.random.Generator,
                  vocab_size: int):
    """Select real, non-special tokens i.i.d. with ``select_rate``; rewrite each to
    [MASK] / a random non-special id / itself with probabilities 0.8/0.1/0.1.

    Only ``ids`` change. Returns ``(masked_sequence, [(position, original_id)])``.
    """
    n = len(s)
    # Fixed number of draws per call keeps the stream independent of content.
    u_select = rng.random(n)
    u_kind = rng.random(n)
    random_ids = rng.integers(len(_SPECIAL_IDS), vocab_size, size=n)
    maskable = (s.mask == 1) & ~np.isin(s.ids, _SPECIAL_IDS)
    selected = maskable & (u_select < policy.select_rate)
    new_ids = s.ids.copy()
    to_mask = selected & (u_kind < policy.p_mask)
    to_random = selected & (u_kind >= policy.p_mask) & (u_kind < policy.p_mask + policy.p_random)
    new_ids[to_mask] = Vocabulary.mask_id
    new_ids[to_random] = random_ids[to_random]
    positions = np.flatnonzero(selected)
    targets = [(int(i), int(s.ids[i])) for i in positions]
    return s.replace(ids=new_ids), targets


def _mvlm_from_states(p, h, b_idx, t_idx, target_ids):
    if len(target_ids) == 0:
        warning_counts["empty_mvlm_targets"] += 1
        return nk.Tensor(0.0)
    logits = mvlm_logits(p, h, (b_idx, t_idx))
    return nk.cross_entropy(logits, target_ids)


def mvlm_loss(p, cfg: ModelConfig, masked: TokenSequence, targets) -> nk.Tensor:
    """Mean cross-entropy at the target positions; 0 (and a warning) if none."""
    h = encode(p, embed(p, masked, cfg), masked.mask, cfg)
    pos = np.array([t[0] for t in targets], dtype=np.int64)
    ids = np.array([t[1] for t in targets], dtype=np.int64)
    if not len(ids):
        log.warning("mvlm_loss called with no targets; returning 0")
    return _mvlm_from_states(p, h, np.zeros_like(pos), pos, ids)


def mdc_loss(p, cls_vector, tags) -> nk.Tensor:
    """Mean per-tag sigmoid binary cross-entropy on the [CLS] state."""
    cls_vector = nk.as_tensor(cls_vector)
    if cls_vector.ndim == 1:
        cls_vector = cls_vector.reshape(1, -1)
    logits = mdc_logits(p, cls_vector)
    tags = np.asarray(tags, dtype=np.float64).reshape(logits.shape)
    return nk.bce_with_logits(logits, tags)


def _masked_batch(examples: Sequence[PretrainExample], policy, rng, vocab_size):
    seqs, b_idx, t_idx, tgt = [], [], [], []
    for bi, ex in enumerate(examples):
        m, targets = apply_masking(ex.sequence, policy, rng, vocab_size)
        seqs.append(m)
        for pos, orig in targets:
            b_idx.append(bi)
            t_idx.append(pos)
            tgt.append(orig)
    as_arr = lambda xs: np.asarray(xs, dtype=np.int64)  # noqa: E731
    return collate(seqs), as_arr(b_idx), as_arr(t_idx), as_arr(tgt)


def pretrain_losses(p, cfg, batch, b_idx, t_idx, tgt, tags=None):
    h = encode(p, embed(p, batch, cfg), batch.mask, cfg)
    mv = _mvlm_from_states(p, h, b_idx, t_idx, tgt)
    md = None
    if tags is not None:
        md = nk.bce_with_logits(mdc_logits(p, cls_vectors(h)), tags)
    return mv, md


def batch_schedule(n_examples: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Example indices for 0-based ``step``: per-epoch shuffles, last partial batch kept."""
    per_epoch = -(-n_examples // batch_size)
    epoch, j = divmod(step, per_epoch)
    order = stream_rng(seed, STREAM_ORDER, epoch).permutation(n_examples)
    return order[j * batch_size:(j + 1) * batch_size]


@dataclass
class LossRecord:
    step: int
    lr: float
    mvlm: float
    mdc: float


def write_loss_curve(records, path) -> None:
    """One line per step: ``step<TAB>lr<TAB>mvlm_loss<TAB>mdc_loss`` (``nan`` if off)."""
    lines = [f"{r.step}\t{r.lr!r}\t{r.mvlm!r}\t{r.mdc!r}\n" for r in records]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_loss_curve(path) -> list[LossRecord]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        s, lr, mv, md = line.split("\t")
        out.append(LossRecord(int(s), float(lr), float(mv), float(md)))
    return out


def run_pretrain(corpus: Sequence[PretrainExample], cfg: ModelConfig, opt_cfg: nk.OptimizerConfig,
                 objectives=("mvlm",), seed: int = 0, steps: int | None = None,
                 batch_size: int = 8, policy: MaskingPolicy = MaskingPolicy(),
                 init: Checkpoint | None = None, callback=None):
    """Train until global step ``steps`` (default ``opt_cfg.total_steps``).

    ``init`` may be a fresh checkpoint or one saved mid-run (it carries the
    optimizer state and ``meta["step"]``), in which case training resumes
    and reproduces the uninterrupted trajectory exactly.
    Returns ``(checkpoint, [LossRecord, ...])`` for the steps run here.
    """
    objectives = tuple(sorted(set(objectives)))
    if "mvlm" not in objectives or not set(objectives) <= {"mvlm", "mdc"}:
        raise ContractError(f"objectives must be {{mvlm}} or {{mvlm, mdc}}, got {objectives}")
    use_mdc = "mdc" in objectives
    if not corpus:
        raise ContractError("pre-training corpus is empty")
    if use_mdc:
        for i, ex in enumerate(corpus):
            if ex.mdc_tags is None:
                raise DataError(f"example {i} (doc {ex.sequence.doc_id!r}) has no MDC tags "
                                "but the MDC objective is enabled")
            if len(ex.mdc_tags) != cfg.num_mdc_tags:
                raise DataError(f"example {i} (doc {ex.sequence.doc_id!r}) has "
                                f"{len(ex.mdc_tags)} tags, config expects {cfg.num_mdc_tags}")
    steps = opt_cfg.total_steps if steps is None else int(steps)
    if init is None:
        params, state, start = init_params(cfg, seed), nk.AdamState(), 0
    else:
        if init.config != cfg:
            raise ContractError("initial checkpoint config differs from the run config")
        params = init.params.copy()
        state = init.opt_state.copy() if init.opt_state is not None else nk.AdamState()
        start = int(init.meta.get("step", 0))
    if not 0 <= start <= steps <= opt_cfg.total_steps:
        raise ContractError(f"cannot run from step {start} to {steps} "
                            f"with total_steps={opt_cfg.total_steps}")
    names = [n for n in trainable_names(cfg) if n not in _PRETRAIN_FROZEN]
    if not use_mdc:
        names = [n for n in names if not n.startswith("head.mdc")]
    records = []
    for step in range(start, steps):
        idx = batch_schedule(len(corpus), batch_size, seed, step)
        examples = [corpus[i] for i in idx]
        batch, b_idx, t_idx, tgt = _masked_batch(examples, policy,
                                                 stream_rng(seed, STREAM_MASK, step),
                                                 cfg.vocab_size)
        tags = np.stack([ex.mdc_tags for ex in examples]).astype(np.float64) if use_mdc else None
        leaves = as_leaves(params, names)
        mv, md = pretrain_losses(leaves, cfg, batch, b_idx, t_idx, tgt, tags)
        total = mv if md is None else mv + md
        grads = nk.backward(total, [leaves[n] for n in names])
        lr = nk.lr_at(opt_cfg, step + 1)
        params, state = nk.adam_step(params, dict(zip(names, grads)), state, opt_cfg, step + 1)
        rec = LossRecord(step + 1, lr, mv.item(), md.item() if md is not None else float("nan"))
        records.append(rec)
        if callback is not None:
            callback(rec)
    meta = {"step": steps, "seed": int(seed), "objectives": list(objectives),
            "batch_size": int(batch_size)}
    return Checkpoint(params, cfg, state, meta), records


def heldout_mvlm_loss(params, cfg: ModelConfig, examples: Sequence[PretrainExample],
                      policy: MaskingPolicy = MaskingPolicy(), seed: int = 0,
                      batch_size: int = 16) -> float:
    """Token-weighted mean masked-token cross-entropy on a fixed masking draw."""
    rng = stream_rng(seed, STREAM_EVAL)
    total, count = 0.0, 0
    for i in range(0, len(examples), batch_size):
        chunk = examples[i:i + batch_size]
        batch, b_idx, t_idx, tgt = _masked_batch(chunk, policy, rng, cfg.vocab_size)
        if not len(tgt):
            continue
        mv, _ = pretrain_losses(params, cfg, batch, b_idx, t_idx, tgt)
        total += mv.item() * len(tgt)
        count += len(tgt)
    if count == 0:
        raise ContractError("held-out set produced no masked tokens")
    return total / count
