from __future__ import annotations

from collections import defaultdict
from pathlib import Path
from typing import Mapping


def prf(tp: int, n_pred: int, n_gold: int) -> tuple[float, float, float]:
    """Precision, recall, F1; any empty denominator yields 0."""
    p = tp / n_pred if n_pred else 0.0
    r = tp / n_gold if n_gold else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def entity_f1(pred, gold) -> tuple[float, float, float]:
    """Exact match on (start, end, label)."""
    pred, gold = set(pred), set(gold)
    return prf(len(pred & gold), len(pred), len(gold))


def entity_counts_by_label(pred, gold) -> dict[str, list[int]]:
    """``label -> [tp, n_pred, n_gold]``; summing over labels gives the micro counts."""
    counts = defaultdict(lambda: [0, 0, 0])
    pred, gold = set(pred), set(gold)
    for e in pred:
        counts[e.label][1] += 1
        if e in gold:
            counts[e.label][0] += 1
    for e in gold:
        counts[e.label][2] += 1
    return dict(counts)


def slot_counts(pred_slots: Mapping[str, str], gold_slots: Mapping[str, str]) -> tuple[int, int, int]:
    tp = sum(1 for k, v in pred_slots.items() if k in gold_slots and gold_slots[k] == v)
    return tp, len(pred_slots), len(gold_slots)


def slot_exact_match_f1(pred_slots, gold_slots) -> tuple[float, float, float]:
    """Exact string match per slot key.

    Accepts one ``{key: value}`` pair of maps, or two equal-length sequences of
    maps (one per document) which are micro-averaged.
    """
    if isinstance(pred_slots, Mapping):
        return prf(*slot_counts(pred_slots, gold_slots))
    if len(pred_slots) != len(gold_slots):
        raise ValueError("prediction and gold lists differ in length")
    tp = n_pred = n_gold = 0
    for p, g in zip(pred_slots, gold_slots):
        a, b, c = slot_counts(p, g)
        tp, n_pred, n_gold = tp + a, n_pred + b, n_gold + c
    return prf(tp, n_pred, n_gold)


METRICS_FORMAT_VERSION = 1


def format_metrics(record: Mapping) -> str:
    """``key=value`` lines sorted by key; floats use ``repr`` so files are exact."""
    lines = []
    for k in sorted(record):
        v = record[k]
        if isinstance(v, float):
            v = repr(v)
        lines.append(f"{k}={v}")
    return "\n".join(lines) + "\n"


def write_metrics(path, record: Mapping) -> None:
    rec = {"metrics_format": METRICS_FORMAT_VERSION, **record}
    Path(path).write_text(format_metrics(rec), encoding="utf-8")


def read_metrics(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        k, _, v = line.partition("=")
        out[k] = v
    return out
