"""Vocabulary building, WordPiece-style tokenization and input encoding."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, DataError
from .model.types import CLS_BOX, EMPTY_BOX, BBox, TokenSequence

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK)
CONTINUATION = "##"
MAX_PIECE_LEN = 16
MAX_WORD_CHARS = 100


@dataclass(frozen=True)
class Word:
    text: str
    bbox: BBox
    style: tuple = ()

    def __post_init__(self):
        if not self.text:
            raise ContractError("word text must be non-empty")
        object.__setattr__(self, "style", tuple(self.style))


def normalize_text(s: str) -> str:
    return s.casefold()


class Vocabulary:
    """Token list where line number == id; the five specials occupy ids 0..4."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ContractError(f"vocabulary must start with {SPECIAL_TOKENS}")
        if len(set(tokens)) != len(tokens):
            raise ContractError("vocabulary contains duplicate tokens")
        for t in tokens:
            if not t or "\n" in t or "\r" in t:
                raise ContractError(f"invalid vocabulary entry {t!r}")
        self.tokens = tokens
        self.id_of = {t: i for i, t in enumerate(tokens)}

    pad_id = 0
    unk_id = 1
    cls_id = 2
    sep_id = 3
    mask_id = 4
    special_ids = frozenset(range(len(SPECIAL_TOKENS)))

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.id_of

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def token(self, i: int) -> str:
        return self.tokens[i]

    @property
    def non_special_ids(self) -> np.ndarray:
        return np.arange(len(SPECIAL_TOKENS), len(self.tokens), dtype=np.int64)

    def save(self, path) -> None:
        data = "".join(t + "\n" for t in self.tokens).encode("utf-8")
        Path(path).write_bytes(data)

    @classmethod
    def load(cls, path) -> "Vocabulary":
        raw = Path(path).read_bytes()
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DataError(f"{path}: vocabulary is not valid UTF-8") from exc
        if text and not text.endswith("\n"):
            raise DataError(f"{path}: vocabulary must end with a newline")
        return cls(text.split("\n")[:-1])


def _char_pieces(words: Iterable[str]) -> list[str]:
    chars, cont = set(), set()
    for w in words:
        chars.add(w[0])
        cont.update(CONTINUATION + c for c in w[1:])
    return sorted(chars) + sorted(cont)


def build_vocab(corpus: Iterable[str], target_size: int = 512) -> Vocabulary:
    """Frequency-ranked subword vocabulary.

    Layout: specials, every single-character piece seen in the corpus (word
    initial ``c`` and word-internal ``##c``), then multi-character substrings
    ranked by corpus frequency (ties broken lexicographically) until
    ``target_size`` entries are reached or candidates run out.
    """
    word_freq = Counter(normalize_text(w) for w in corpus if w and w.strip())
    if not word_freq:
        raise ContractError("cannot build a vocabulary from an empty corpus")
    base = _char_pieces(word_freq)
    minimum = len(SPECIAL_TOKENS) + len(base)
    if target_size <= minimum:
        raise ContractError(f"target_size {target_size} must exceed {minimum} "
                            "(specials + single-character pieces)")
    counts: Counter = Counter()
    for w, f in word_freq.items():
        n = len(w)
        for i in range(n):
            for j in range(i + 2, min(n, i + MAX_PIECE_LEN) + 1):
                piece = w[i:j] if i == 0 else CONTINUATION + w[i:j]
                counts[piece] += f
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    room = target_size - minimum
    merged = [p for p, _ in ranked[:room]]
    return Vocabulary(list(SPECIAL_TOKENS) + base + merged)


def tokenize_word(v: Vocabulary, w: str) -> list[int]:
    """Greedy longest-match-first segmentation; any failure yields ``[UNK]``."""
    if not w:
        raise ContractError("cannot tokenize an empty word")
    w = normalize_text(w)
    if len(w) > MAX_WORD_CHARS:
        return [v.unk_id]
    ids = []
    start = 0
    while start < len(w):
        end = len(w)
        found = None
        while end > start:
            piece = w[start:end] if start == 0 else CONTINUATION + w[start:end]
            i = v.id_of.get(piece)
            if i is not None and i not in v.special_ids:
                found = i
                break
            end -= 1
        if found is None:
            return [v.unk_id]
        ids.append(found)
        start = end
    return ids


def detokenize(v: Vocabulary, ids: Sequence[int]) -> str:
    out = []
    for i in ids:
        t = v.token(i)
        out.append(t[len(CONTINUATION):] if t.startswith(CONTINUATION) else t)
    return "".join(out)


def encode_document(v: Vocabulary, words: Sequence[Word], max_len: int,
                    doc_id: str = "") -> TokenSequence:
    """``[CLS] pieces... [SEP]`` then ``[PAD]`` up to ``max_len``.

    Pieces of one word share its box; overlong documents keep the first
    ``max_len - 2`` pieces and still end in ``[SEP]``.
    """
    if max_len < 2:
        raise ContractError(f"max_len must be >= 2, got {max_len}")
    ids = [v.cls_id]
    boxes = [CLS_BOX.as_tuple()]
    widx = [-1]
    budget = max_len - 2
    for k, word in enumerate(words):
        if len(ids) - 1 >= budget:
            break
        box = word.bbox.as_tuple()
        for piece in tokenize_word(v, word.text):
            if len(ids) - 1 >= budget:
                break
            ids.append(piece)
            boxes.append(box)
            widx.append(k)
    ids.append(v.sep_id)
    boxes.append(EMPTY_BOX.as_tuple())
    widx.append(-1)
    n_real = len(ids)
    pad = max_len - n_real
    ids.extend([v.pad_id] * pad)
    boxes.extend([EMPTY_BOX.as_tuple()] * pad)
    widx.extend([-1] * pad)
    mask = np.zeros(max_len, dtype=np.int64)
    mask[:n_real] = 1
    return TokenSequence(
        ids=np.asarray(ids, dtype=np.int64),
        positions=np.arange(max_len, dtype=np.int64),
        segments=np.zeros(max_len, dtype=np.int64),
        bboxes=np.asarray(boxes, dtype=np.int64),
        mask=mask,
        word_index=np.asarray(widx, dtype=np.int64),
        doc_id=doc_id,
        pad_id=v.pad_id,
    )
