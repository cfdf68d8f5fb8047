"""Fine-tuning loops and evaluation for sequence labeling and classification.

Word-level labels: each word's tag sits on its first sub-word piece; the
other pieces, the special tokens and padding carry no label and never enter
the loss. Predictions are read back at the same first-piece positions, so
entities are spans of word indices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .. import numkernel as nk
from ..errors import ConfigError, DataError
from ..ingest.document import RawDocument
from ..ingest.features import features_for_sequence, pseudo_features
from ..model import (
    Checkpoint,
    ModelConfig,
    cls_vectors,
    collate,
    docclass_logits,
    forward,
    seqlabel_logits,
    trainable_names,
)
from ..model.network import as_leaves
from ..pretrain import STREAM_ORDER, stream_rng
from ..textproc import Vocabulary, encode_document
from .bieso import decode_bieso, tags_from_entities
from .metrics import entity_counts_by_label, prf, slot_exact_match_f1

IGNORE = -1
TASKS = ("seqlabel", "docclass")


@dataclass
class LabeledDoc:
    sequence: object
    words: list
    tagset: tuple = ()
    token_labels: np.ndarray | None = None
    entities: frozenset = frozenset()
    gold_class: int | None = None
    slots: dict | None = None
    token_feats: np.ndarray | None = None
    page_feat: np.ndarray | None = None


@dataclass(frozen=True)
class FinetuneHP:
    epochs: int = 30
    batch_size: int = 8
    lr: float = 5e-5
    seed: int = 0


SEQLABEL_DEFAULTS = FinetuneHP(epochs=30, batch_size=8, lr=5e-5)
DOCCLASS_DEFAULTS = FinetuneHP(epochs=10, batch_size=8, lr=2e-5)


@dataclass
class FinetuneResult:
    checkpoint: Checkpoint
    metrics: dict
    history: list = field(default_factory=list)
    best_epoch: int = 0


def first_piece_mask(word_index: np.ndarray) -> np.ndarray:
    prev = np.concatenate([[-1], word_index[:-1]])
    return (word_index >= 0) & (word_index != prev)


def prepare_docs(raw_docs: Sequence[RawDocument], vocab: Vocabulary, cfg: ModelConfig,
                 task: str, class_names: Sequence[str] | None = None,
                 feature_factory: Callable | None = None) -> list[LabeledDoc]:
    """Tokenize, encode and attach labels (and image features when ``use_image``)."""
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}", [f"expected one of {TASKS}"])
    if feature_factory is None:
        def feature_factory(doc):
            return pseudo_features(doc, cfg.img_feat_dim)
    tag_ids = {t: i for i, t in enumerate(cfg.tagset)}
    out = []
    for doc in raw_docs:
        words = doc.normalized_words()
        seq = encode_document(vocab, words, cfg.max_len, doc.doc_id)
        ld = LabeledDoc(sequence=seq, words=[w.text for w in doc.words], tagset=cfg.tagset)
        if task == "seqlabel":
            if doc.entities is None:
                raise DataError(f"doc {doc.doc_id!r} has no entity annotations")
            word_tags = tags_from_entities(len(words), doc.entities)
            unknown = sorted({t for t in word_tags if t not in tag_ids})
            if unknown:
                raise ConfigError(f"doc {doc.doc_id!r} uses tags outside the model tagset", unknown)
            labels = np.full(len(seq), IGNORE, dtype=np.int64)
            first = first_piece_mask(seq.word_index)
            for t in np.flatnonzero(first):
                labels[t] = tag_ids[word_tags[seq.word_index[t]]]
            ld.token_labels = labels
            ld.entities = frozenset(doc.entities)
            ld.slots = dict(doc.slots) if doc.slots is not None else None
        else:
            if class_names is None:
                raise ConfigError("classification needs class_names")
            if doc.label not in class_names:
                raise DataError(f"doc {doc.doc_id!r} has unknown class {doc.label!r}")
            ld.gold_class = list(class_names).index(doc.label)
        if cfg.use_image:
            ld.token_feats, ld.page_feat = features_for_sequence(
                feature_factory(doc), seq, cfg.img_feat_dim)
        out.append(ld)
    return out


def _stack_features(docs, cfg):
    if not cfg.use_image:
        return None, None
    missing = [d.sequence.doc_id for d in docs if d.token_feats is None]
    if missing:
        raise DataError(f"image mode is on but docs lack features: {missing[:5]}")
    return np.stack([d.token_feats for d in docs]), np.stack([d.page_feat for d in docs])


def _check_data(ckpt: Checkpoint, docs, task: str, class_names=None):
    if not docs:
        raise DataError("empty dataset")
    cfg = ckpt.config
    if task == "seqlabel":
        bad = [d.sequence.doc_id for d in docs if tuple(d.tagset) != cfg.tagset or d.token_labels is None]
        if bad:
            raise ConfigError("checkpoint tagset does not match the data", bad[:5])
    elif task == "docclass":
        bad = [d.sequence.doc_id for d in docs
               if d.gold_class is None or not 0 <= d.gold_class < cfg.num_doc_classes]
        if bad:
            raise ConfigError(f"class labels do not fit the model's {cfg.num_doc_classes} classes",
                              bad[:5])
    else:
        raise ConfigError(f"unknown task {task!r}", [f"expected one of {TASKS}"])


def _task_loss(p, cfg, docs, task):
    b = collate([d.sequence for d in docs])
    tf, pf = _stack_features(docs, cfg)
    h, fused, cls_img = forward(p, b, cfg, tf, pf)
    if task == "seqlabel":
        labels = np.stack([d.token_labels for d in docs])
        bi, ti = np.nonzero((labels != IGNORE) & (b.mask == 1))
        if not len(bi):
            return nk.Tensor(0.0)
        logits = seqlabel_logits(p, nk.gather(fused, (bi, ti)))
        return nk.cross_entropy(logits, labels[bi, ti])
    logits = docclass_logits(p, cls_vectors(h), cls_img)
    return nk.cross_entropy(logits, [d.gold_class for d in docs])


_HEADS = {
    "seqlabel": ("head.seqlabel.",),
    "docclass": ("head.docclass.",),
}


def _finetune_names(cfg: ModelConfig, task: str) -> list[str]:
    names = []
    for n in trainable_names(cfg):
        if n.startswith("head.") and not n.startswith(_HEADS[task]):
            continue
        if n.startswith("img.") and not cfg.use_image:
            continue
        names.append(n)
    return names


def _train(ckpt: Checkpoint, train, dev, hp: FinetuneHP, task: str, score_key: str,
           class_names=None, callback=None) -> FinetuneResult:
    _check_data(ckpt, train, task)
    _check_data(ckpt, dev, task)
    cfg = ckpt.config
    params = ckpt.params.copy()
    names = _finetune_names(cfg, task)
    per_epoch = -(-len(train) // hp.batch_size)
    opt = nk.OptimizerConfig(initial_lr=hp.lr, total_steps=max(1, hp.epochs * per_epoch))
    state = nk.AdamState()
    best, best_epoch, best_params, history = None, 0, params, []
    step = 0
    for epoch in range(1, hp.epochs + 1):
        order = stream_rng(hp.seed, STREAM_ORDER, epoch).permutation(len(train))
        for j in range(per_epoch):
            chunk = [train[i] for i in order[j * hp.batch_size:(j + 1) * hp.batch_size]]
            leaves = as_leaves(params, names)
            loss = _task_loss(leaves, cfg, chunk, task)
            grads = nk.backward(loss, [leaves[n] for n in names])
            step += 1
            params, state = nk.adam_step(params, dict(zip(names, grads)), state, opt, step)
        ev = evaluate(Checkpoint(params, cfg), dev, task, class_names)
        history.append(ev)
        if callback is not None:
            callback(epoch, ev)
        if best is None or ev[score_key] > best[score_key]:
            best, best_epoch, best_params = ev, epoch, params
    if hp.epochs == 0:
        best = evaluate(ckpt, dev, task, class_names)
    meta = dict(ckpt.meta)
    meta.update({"task": task, "best_epoch": best_epoch, "finetune_seed": int(hp.seed)})
    return FinetuneResult(Checkpoint(best_params.copy(), cfg, None, meta), best, history, best_epoch)


def finetune_seqlabel(ckpt: Checkpoint, train, dev, hp: FinetuneHP = SEQLABEL_DEFAULTS,
                      callback=None) -> FinetuneResult:
    """End-to-end fine-tuning; returns the checkpoint with the best dev F1
    (earliest epoch on ties) and its dev metrics."""
    return _train(ckpt, train, dev, hp, "seqlabel", "f1", callback=callback)


def finetune_docclass(ckpt: Checkpoint, train, dev, hp: FinetuneHP = DOCCLASS_DEFAULTS,
                      class_names=None, callback=None) -> FinetuneResult:
    return _train(ckpt, train, dev, hp, "docclass", "accuracy", class_names, callback)


def predict_word_tags(ckpt: Checkpoint, docs, batch_size: int = 32) -> list[list[str]]:
    cfg = ckpt.config
    out = []
    for i in range(0, len(docs), batch_size):
        chunk = docs[i:i + batch_size]
        tf, pf = _stack_features(chunk, cfg)
        _, fused, _ = forward(ckpt.params, collate([d.sequence for d in chunk]), cfg, tf, pf)
        logits = seqlabel_logits(ckpt.params, fused).data
        for d, lg in zip(chunk, logits):
            first = first_piece_mask(d.sequence.word_index)
            out.append([cfg.tagset[k] for k in np.argmax(lg[first], axis=-1)])
    return out


def predict_classes(ckpt: Checkpoint, docs, batch_size: int = 32) -> np.ndarray:
    cfg = ckpt.config
    preds = []
    for i in range(0, len(docs), batch_size):
        chunk = docs[i:i + batch_size]
        tf, pf = _stack_features(chunk, cfg)
        h, _, cls_img = forward(ckpt.params, collate([d.sequence for d in chunk]), cfg, tf, pf)
        preds.append(np.argmax(docclass_logits(ckpt.params, cls_vectors(h), cls_img).data, axis=-1))
    return np.concatenate(preds)


def slots_from_entities(entities, words) -> dict[str, str]:
    """First span per label, its words joined by single spaces."""
    out = {}
    for e in sorted(entities, key=lambda e: (e.start, e.end, e.label)):
        if e.label not in out:
            out[e.label] = " ".join(words[e.start:e.end + 1])
    return out


def evaluate(ckpt: Checkpoint, data, task: str, class_names=None) -> dict:
    """Pure inference; returns a flat metrics record (see :func:`write_metrics`)."""
    _check_data(ckpt, data, task)
    rec: dict = {"task": task, "documents": len(data)}
    if task == "seqlabel":
        preds = predict_word_tags(ckpt, data)
        totals = [0, 0, 0]
        by_label: dict = {}
        correct_words = n_words = 0
        pred_slots, gold_slots = [], []
        for d, tags in zip(data, preds):
            ents = decode_bieso(tags, ckpt.config.tagset)
            for lab, c in entity_counts_by_label(ents, d.entities).items():
                acc = by_label.setdefault(lab, [0, 0, 0])
                for k in range(3):
                    acc[k] += c[k]
                    totals[k] += c[k]
            gold_tags = tags_from_entities(len(d.words), d.entities)[:len(tags)]
            correct_words += sum(a == b for a, b in zip(tags, gold_tags))
            n_words += len(tags)
            if d.slots is not None:
                pred_slots.append(slots_from_entities(ents, d.words))
                gold_slots.append(d.slots)
        p, r, f = prf(*totals)
        rec.update({"precision": p, "recall": r, "f1": f, "tp": totals[0],
                    "pred_entities": totals[1], "gold_entities": totals[2],
                    "word_accuracy": correct_words / n_words if n_words else 0.0})
        for lab in sorted(by_label):
            tp, npred, ngold = by_label[lab]
            lp, lr, lf = prf(tp, npred, ngold)
            rec.update({f"label.{lab}.precision": lp, f"label.{lab}.recall": lr,
                        f"label.{lab}.f1": lf, f"label.{lab}.tp": tp,
                        f"label.{lab}.pred": npred, f"label.{lab}.gold": ngold})
        if gold_slots:
            sp, sr, sf = slot_exact_match_f1(pred_slots, gold_slots)
            rec.update({"slot_precision": sp, "slot_recall": sr, "slot_f1": sf})
    else:
        preds = predict_classes(ckpt, data)
        gold = np.array([d.gold_class for d in data])
        rec["accuracy"] = float(np.mean(preds == gold))
        for c in sorted(set(gold.tolist())):
            name = class_names[c] if class_names is not None else str(c)
            sel = gold == c
            rec[f"class.{name}.count"] = int(sel.sum())
            rec[f"class.{name}.accuracy"] = float(np.mean(preds[sel] == c))
    return rec
