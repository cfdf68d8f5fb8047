"""Deterministic synthetic documents whose labels live in the layout.

Text comes from a fixed artificial language: 60 pseudo-words grouped into 30
phrases (10 of one word, 10 of two, 10 of three), every word belonging to
exactly one phrase, and the phrases split into 10 topics of 3. Each document
draws all its phrases from one topic. Topic and phrase membership make masked
tokens predictable from context, so MVLM pre-training has something to learn.

Forms draw keys *and* values from the same phrase list and emit each
key/value pair in random reading order, so the role of a span cannot be
read off the words or their order; only geometry (key column on the left,
value column on the right / one row below) tells them apart.

Geometry is snapped to a coarse virtual grid (cells 100 wide, rows 40 tall)
and scaled to pixel pages of at least 1000 px per side, so normalisation
maps every box back onto the grid exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .ingest.document import EntitySpan, RawDocument, RawWord, normalize_bbox
from .model.types import GRID_MAX
from .pretrain import PretrainExample
from .textproc import Vocabulary, build_vocab, encode_document

_LEXICON_SEED = 7
_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


def _make_lexicon():
    rng = np.random.default_rng(_LEXICON_SEED)
    words: list[str] = []
    seen = set()
    while len(words) < 60:
        n_syl = int(rng.integers(2, 4))
        w = "".join(_CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
                    for _ in range(n_syl))
        if w not in seen:
            seen.add(w)
            words.append(w)
    phrases = []
    k = 0
    for length in (1, 2, 3):
        for _ in range(10):
            phrases.append(tuple(words[k:k + length]))
            k += length
    # topic t: one phrase of each length
    topics = tuple(tuple(phrases[10 * length + t] for length in range(3)) for t in range(10))
    return tuple(words), tuple(phrases), topics


LEXICON, PHRASES, TOPICS = _make_lexicon()

PAGE_SIZES = ((1000, 1000), (1240, 1754), (1700, 2200), (2480, 3508))
CLASS_NAMES = ("one_column", "two_column", "header_block", "scattered")
FORM_TYPES = ("question", "answer")
RECEIPT_SLOTS = ("company", "date", "address", "total")
MDC_TAGS = ("form", "layout_doc", "has_bold", "multi_column", "long_doc")

CELL_W, WORD_W = 100, 80
ROW_H, WORD_H = 40, 24
MARGIN = 40
N_COLS = 9
N_ROWS = (GRID_MAX - MARGIN) // ROW_H


def cell_box(col: int, row: int) -> tuple[int, int, int, int]:
    x0 = MARGIN + CELL_W * col
    y0 = MARGIN + ROW_H * row
    return (x0, y0, x0 + WORD_W, y0 + WORD_H)


def _to_pixels(vbox, page_w, page_h):
    # ceil(v * W / 1000) floors back to v whenever W >= 1000
    sx = lambda v: -(-v * page_w // GRID_MAX)  # noqa: E731
    sy = lambda v: -(-v * page_h // GRID_MAX)  # noqa: E731
    x0, y0, x1, y1 = vbox
    return (sx(x0), sy(y0), sx(x1), sy(y1))


def _page(rng):
    return PAGE_SIZES[int(rng.integers(len(PAGE_SIZES)))]


def _phrase(rng, pool=PHRASES):
    return pool[int(rng.integers(len(pool)))]


def _topic(rng):
    return TOPICS[int(rng.integers(len(TOPICS)))]


@dataclass(frozen=True)
class FormSpec:
    n_pairs: int = 6
    page_sizes: tuple = PAGE_SIZES
    key_col: int = 0
    value_col: int = 4
    below_rate: float = 0.3
    label_noise: float = 0.0
    style_rate: float = 0.5
    shared_lexicon: bool = True

    def validate(self):
        problems = []
        if self.n_pairs < 1:
            problems.append("n_pairs must be >= 1")
        if 2 * self.n_pairs > N_ROWS:
            problems.append(f"{self.n_pairs} pairs may need {2 * self.n_pairs} rows; page has {N_ROWS}")
        if not self.key_col + 3 <= self.value_col <= N_COLS - 3:
            problems.append("value column must leave room for 3-word keys and values")
        for name in ("below_rate", "label_noise", "style_rate"):
            if not 0 <= getattr(self, name) <= 1:
                problems.append(f"{name} must lie in [0, 1]")
        if any(w < GRID_MAX or h < GRID_MAX for w, h in self.page_sizes):
            problems.append("page sizes must be at least 1000 px per side")
        if problems:
            raise ContractError("invalid form spec: " + "; ".join(problems))


def gen_form(spec: FormSpec, rng: np.random.Generator, doc_id: str = "form") -> RawDocument:
    """Key/value form with gold ``question`` / ``answer`` entities over word indices."""
    spec.validate()
    page_w, page_h = spec.page_sizes[int(rng.integers(len(spec.page_sizes)))]
    topic = _topic(rng)
    # unshared variant: keys use the even phrases of the topic, values the odd ones
    key_pool = topic if spec.shared_lexicon else topic[0::2]
    val_pool = topic if spec.shared_lexicon else topic[1::2]
    words, entities = [], []
    row = 0
    for _ in range(spec.n_pairs):
        key, val = _phrase(rng, key_pool), _phrase(rng, val_pool)
        below = rng.random() < spec.below_rate
        key_first = rng.random() < 0.5
        noisy = rng.random() < spec.label_noise
        bold_key = rng.random() < spec.style_rate
        key_cells = [(spec.key_col + i, row) for i in range(len(key))]
        val_row = row + 1 if below else row
        val_cells = [(spec.value_col + i, val_row) for i in range(len(val))]
        row = val_row + 1
        roles = ("question", "answer") if not noisy else ("answer", "question")
        parts = [(key, key_cells, roles[0], ("bold",) if bold_key else ()),
                 (val, val_cells, roles[1], ())]
        if not key_first:
            parts.reverse()
        for text, cells, label, style in parts:
            start = len(words)
            for w, (c, r) in zip(text, cells):
                words.append(RawWord(w, _to_pixels(cell_box(c, r), page_w, page_h), style))
            entities.append(EntitySpan(start, len(words) - 1, label))
    return RawDocument(doc_id, page_w, page_h, words, entities=entities)


def layout_entities(doc: RawDocument, value_col: int = FormSpec.value_col) -> set[EntitySpan]:
    """Recover form entities from boxes alone: side of the column split gives
    the role, runs of consecutive words on one row and side give the spans."""
    split = cell_box(value_col, 0)[0]
    out = set()
    start = None
    prev_key = None
    for i, w in enumerate(doc.normalized_words()):
        key = (w.bbox.y0, w.bbox.x0 >= split)
        contiguous = prev_key == key and w.bbox.x0 == prev_x + CELL_W
        if not contiguous:
            if start is not None:
                out.add(EntitySpan(start, i - 1, "answer" if prev_key[1] else "question"))
            start = i
        prev_key, prev_x = key, w.bbox.x0
    if start is not None:
        out.add(EntitySpan(start, len(doc.words) - 1, "answer" if prev_key[1] else "question"))
    return out


def self_check(doc: RawDocument) -> bool:
    """True when the gold entities are exactly what the geometry implies."""
    return layout_entities(doc) == set(doc.entities or ())


def _flow(phrases, cells):
    words = []
    it = iter(cells)
    for ph in phrases:
        for w in ph:
            words.append((w, next(it)))
    return words


_CLASS_BOLD = (0.05, 0.3, 0.1, 0.6)


def gen_classdoc(class_id: int, rng: np.random.Generator, dims=None,
                 doc_id: str = "doc") -> RawDocument:
    """One of four global layouts; words drawn the same way for every class."""
    if not 0 <= class_id < len(CLASS_NAMES):
        raise ContractError(f"class_id must lie in [0, {len(CLASS_NAMES)})")
    page_w, page_h = dims if dims is not None else _page(rng)
    phrases, n = [], 0
    topic = _topic(rng)
    target = int(rng.integers(16, 29))
    while n < target:
        ph = _phrase(rng, topic)
        phrases.append(ph)
        n += len(ph)
    name = CLASS_NAMES[class_id]
    if name == "one_column":
        cells = [(c, r) for r in range(N_ROWS) for c in range(N_COLS)]
    elif name == "two_column":
        cells = ([(c, r) for r in range(N_ROWS) for c in range(0, 4)]
                 + [(c, r) for r in range(N_ROWS) for c in range(5, 9)])
    elif name == "header_block":
        header = [(c, r) for r in range(2) for c in range(2, 7)]
        body = [(c, r) for r in range(4, N_ROWS) for c in range(N_COLS)]
        cells = header[:len(phrases[0])] + body
    else:
        all_cells = [(c, r) for r in range(N_ROWS) for c in range(N_COLS)]
        pick = rng.choice(len(all_cells), size=n, replace=False)
        cells = [all_cells[i] for i in sorted(pick, key=lambda i: (all_cells[i][1], all_cells[i][0]))]
    bold_rate = _CLASS_BOLD[class_id]
    words = []
    for k, (w, (c, r)) in enumerate(_flow(phrases, cells)):
        in_header = name == "header_block" and k < len(phrases[0])
        bold = in_header or rng.random() < bold_rate
        words.append(RawWord(w, _to_pixels(cell_box(c, r), page_w, page_h),
                             ("bold",) if bold else ()))
    return RawDocument(doc_id, page_w, page_h, words, label=name)


def _money(rng) -> str:
    return f"{int(rng.integers(1, 100))}.{int(rng.integers(0, 100)):02d}"


def gen_receipt(rng: np.random.Generator, doc_id: str = "receipt") -> RawDocument:
    """Receipt with company/address at the top, items, then date and total.

    The total reuses the item price format, so only its place on the page
    identifies it.
    """
    page_w, page_h = _page(rng)
    words, entities = [], []

    def put(tokens, col, row, label=None, style=()):
        start = len(words)
        for i, t in enumerate(tokens):
            words.append(RawWord(t, _to_pixels(cell_box(col + i, row), page_w, page_h), style))
        if label:
            entities.append(EntitySpan(start, len(words) - 1, label))

    company = _phrase(rng, PHRASES[10:])
    address = _phrase(rng, PHRASES[10:]) + (str(int(rng.integers(1, 99))),)
    date = f"{int(rng.integers(1, 29)):02d}/{int(rng.integers(1, 13)):02d}/20{int(rng.integers(10, 30))}"
    total = _money(rng)
    put(company, 3, 0, "company", ("bold",))
    put(address, 2, 1, "address")
    n_items = int(rng.integers(2, 6))
    for k in range(n_items):
        put(_phrase(rng, PHRASES[:10]), 0, 3 + k)
        put([_money(rng)], 7, 3 + k)
    put([date], 0, 4 + n_items, "date")
    put([total], 7, 4 + n_items, "total", ("bold",))
    slots = {"company": " ".join(company), "address": " ".join(address),
             "date": date, "total": total}
    return RawDocument(doc_id, page_w, page_h, words, entities=entities, slots=slots)


def mdc_tags(doc: RawDocument, kind: str) -> tuple[int, ...]:
    bold = any("bold" in w.style for w in doc.words)
    if kind == "form":
        split = cell_box(FormSpec.value_col, 0)[0]
        rows = {}
        for w in doc.normalized_words():
            rows.setdefault(w.bbox.y0, set()).add(w.bbox.x0 >= split)
        multi = any(len(s) == 2 for s in rows.values())
    else:
        multi = doc.label == "two_column"
    return (int(kind == "form"), int(kind != "form"), int(bold), int(multi),
            int(len(doc.words) >= 24))


def doc_rng(seed: int, kind: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(kind), int(index)])


_KIND_FORM, _KIND_CLASS, _KIND_RECEIPT, _KIND_PRETRAIN = 11, 12, 13, 14


def form_dataset(n: int, seed: int, n_pairs=(3, 8), prefix="form", **spec_kw) -> list[RawDocument]:
    docs = []
    for i in range(n):
        rng = doc_rng(seed, _KIND_FORM, i)
        spec = FormSpec(n_pairs=int(rng.integers(n_pairs[0], n_pairs[1] + 1)), **spec_kw)
        docs.append(gen_form(spec, rng, f"{prefix}-{seed}-{i:05d}"))
    return docs


def classdoc_dataset(n: int, seed: int, prefix="cls") -> list[RawDocument]:
    """``n`` documents cycling through the classes (equal counts when n % 4 == 0)."""
    return [gen_classdoc(i % len(CLASS_NAMES), doc_rng(seed, _KIND_CLASS, i),
                         doc_id=f"{prefix}-{seed}-{i:05d}") for i in range(n)]


def receipt_dataset(n: int, seed: int, prefix="rcpt") -> list[RawDocument]:
    return [gen_receipt(doc_rng(seed, _KIND_RECEIPT, i), f"{prefix}-{seed}-{i:05d}")
            for i in range(n)]


def pretrain_documents(n: int, rng: np.random.Generator, form_fraction: float = 0.5):
    """Mixture of forms and class documents, each carrying its MDC tag bitset."""
    if n < 1:
        raise ContractError("n must be >= 1")
    base = int(rng.integers(2 ** 31))
    docs = []
    for i in range(n):
        r = doc_rng(base, _KIND_PRETRAIN, i)
        if r.random() < form_fraction:
            spec = FormSpec(n_pairs=int(r.integers(3, 9)))
            doc, kind = gen_form(spec, r, f"pt-{base}-{i:05d}"), "form"
        else:
            doc = gen_classdoc(int(r.integers(len(CLASS_NAMES))), r, doc_id=f"pt-{base}-{i:05d}")
            doc.entities = []
            kind = "layout_doc"
        doc.tags = mdc_tags(doc, kind)
        docs.append(doc)
    return docs


def corpus_vocab(docs, target_size: int = 512) -> Vocabulary:
    return build_vocab((w.text for d in docs for w in d.words), target_size)


def encode_pretrain(docs, vocab: Vocabulary, max_len: int) -> list[PretrainExample]:
    out = []
    for d in docs:
        seq = encode_document(vocab, d.normalized_words(), max_len, d.doc_id)
        tags = np.asarray(d.tags, dtype=np.int64) if d.tags is not None else None
        out.append(PretrainExample(seq, tags))
    return out


def gen_pretrain_corpus(n: int, rng: np.random.Generator, vocab: Vocabulary | None = None,
                        max_len: int = 128, form_fraction: float = 0.5):
    """Encoded pre-training examples; builds a vocabulary when none is given.

    Returns ``(examples, vocab)``.
    """
    docs = pretrain_documents(n, rng, form_fraction)
    if vocab is None:
        vocab = corpus_vocab(docs)
    return encode_pretrain(docs, vocab, max_len), vocab


@dataclass
class SynthBundle:
    """Every synthetic split the CLI writes, plus a vocabulary covering them."""

    pretrain: list = field(default_factory=list)
    forms_train: list = field(default_factory=list)
    forms_dev: list = field(default_factory=list)
    classes_train: list = field(default_factory=list)
    classes_dev: list = field(default_factory=list)
    receipts_train: list = field(default_factory=list)
    receipts_dev: list = field(default_factory=list)

    def all_docs(self):
        return [d for name in self.__dataclass_fields__ for d in getattr(self, name)]


def make_bundle(seed: int, n_pretrain=1000, n_forms=(200, 50), n_classes=(200, 100),
                n_receipts=(100, 40)) -> SynthBundle:
    return SynthBundle(
        pretrain=pretrain_documents(n_pretrain, np.random.default_rng([seed, 0])),
        forms_train=form_dataset(n_forms[0], seed, prefix="form-train"),
        forms_dev=form_dataset(n_forms[1], seed + 1, prefix="form-dev"),
        classes_train=classdoc_dataset(n_classes[0], seed, prefix="cls-train"),
        classes_dev=classdoc_dataset(n_classes[1], seed + 1, prefix="cls-dev"),
        receipts_train=receipt_dataset(n_receipts[0], seed, prefix="rcpt-train"),
        receipts_dev=receipt_dataset(n_receipts[1], seed + 1, prefix="rcpt-dev"),
    )


def check_boxes(doc: RawDocument) -> None:
    for w in doc.words:
        normalize_bbox(w.box, doc.page_width, doc.page_height)
