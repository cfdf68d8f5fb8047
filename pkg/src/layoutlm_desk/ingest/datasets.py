"""Line-delimited JSON dataset containers.

One document per line, UTF-8. Common fields::

    {"doc_id": "f0001", "page_width": 1240, "page_height": 1754,
     "words": [{"text": "Name", "box": [x0, y0, x1, y1], "style": ["bold"]}, ...],
     "tags": [0, 1, 0, 0, 1]}                   # optional MDC bitset

Per format:

* ``funsd_like``  -- ``"entities": [{"start": 0, "end": 1, "label": "question"}]``
  (word-index spans, inclusive)
* ``slots_like``  -- ``"slots": {"company": "...", ...}``; optional ``entities``
  whose labels are slot keys
* ``classes_like`` -- ``"label": "two_column"``

Boxes are pixel coordinates; boxes that leave the page are clipped and
counted in ``RawDocument.clipped``. A path may be a single ``.jsonl`` file or a
directory, in which case its ``*.jsonl`` files are read in sorted name order.
"""

from __future__ import annotations

import json
from pathlib import Path

from ..errors import DataError
from .document import EntitySpan, RawDocument, RawWord, clip_box

FORMATS = ("funsd_like", "slots_like", "classes_like")
SROIE_SLOTS = ("company", "date", "address", "total")
DEFAULT_CLASSES = ("one_column", "two_column", "header_block", "scattered")


def _fail(doc_id, field, msg):
    raise DataError(f"doc {doc_id!r}, field {field!r}: {msg}")


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _parse_record(rec, fmt, slot_keys, classes, entity_types, where) -> RawDocument:
    if not isinstance(rec, dict):
        raise DataError(f"{where}: record is not a JSON object")
    doc_id = rec.get("doc_id")
    if not isinstance(doc_id, str) or not doc_id:
        raise DataError(f"{where}: missing or empty 'doc_id'")
    pw, ph = rec.get("page_width"), rec.get("page_height")
    for name, v in (("page_width", pw), ("page_height", ph)):
        if not _is_int(v) or v <= 0:
            _fail(doc_id, name, f"must be a positive integer, got {v!r}")
    words_in = rec.get("words")
    if not isinstance(words_in, list):
        _fail(doc_id, "words", "must be a list")
    words, clipped = [], 0
    for i, w in enumerate(words_in):
        if not isinstance(w, dict):
            _fail(doc_id, f"words[{i}]", "must be an object")
        text, box, style = w.get("text"), w.get("box"), w.get("style", [])
        if not isinstance(text, str) or not text.strip():
            _fail(doc_id, f"words[{i}].text", "must be a non-empty string")
        if (not isinstance(box, list) or len(box) != 4 or not all(_is_int(c) for c in box)):
            _fail(doc_id, f"words[{i}].box", f"must be 4 integers, got {box!r}")
        if box[0] > box[2] or box[1] > box[3]:
            _fail(doc_id, f"words[{i}].box", f"corners out of order {box}")
        if not isinstance(style, list) or not all(isinstance(s, str) for s in style):
            _fail(doc_id, f"words[{i}].style", "must be a list of strings")
        cbox, changed = clip_box(tuple(box), pw, ph)
        clipped += changed
        words.append(RawWord(text.strip(), cbox, tuple(sorted(set(style)))))

    tags = rec.get("tags")
    if tags is not None:
        if not isinstance(tags, list) or not all(t in (0, 1) and _is_int(t) for t in tags):
            _fail(doc_id, "tags", "must be a list of 0/1 integers")
        tags = tuple(tags)

    entities = None
    if "entities" in rec or fmt == "funsd_like":
        ents = rec.get("entities")
        if not isinstance(ents, list):
            _fail(doc_id, "entities", "must be a list")
        entities = []
        allowed = slot_keys if fmt == "slots_like" else entity_types
        for j, e in enumerate(ents):
            if not isinstance(e, dict):
                _fail(doc_id, f"entities[{j}]", "must be an object")
            s, t, lab = e.get("start"), e.get("end"), e.get("label")
            if not (_is_int(s) and _is_int(t)):
                _fail(doc_id, f"entities[{j}]", "start/end must be integers")
            if not 0 <= s <= t < len(words):
                _fail(doc_id, f"entities[{j}]",
                      f"span [{s}, {t}] out of range for {len(words)} words")
            if not isinstance(lab, str) or not lab:
                _fail(doc_id, f"entities[{j}].label", "must be a non-empty string")
            if allowed is not None and lab not in allowed:
                _fail(doc_id, f"entities[{j}].label", f"unknown label {lab!r}")
            entities.append(EntitySpan(s, t, lab))
        spans = sorted((e.start, e.end) for e in entities)
        for (s0, e0), (s1, _) in zip(spans, spans[1:]):
            if s1 <= e0:
                _fail(doc_id, "entities", f"overlapping spans starting at {s0} and {s1}")

    slots = None
    if fmt == "slots_like":
        slots = rec.get("slots")
        if not isinstance(slots, dict):
            _fail(doc_id, "slots", "must be an object")
        for k, v in slots.items():
            if k not in slot_keys:
                _fail(doc_id, "slots", f"unknown slot key {k!r}")
            if not isinstance(v, str):
                _fail(doc_id, f"slots.{k}", "value must be a string")

    label = None
    if fmt == "classes_like":
        label = rec.get("label")
        if not isinstance(label, str) or label not in classes:
            _fail(doc_id, "label", f"unknown class {label!r}")

    return RawDocument(doc_id, pw, ph, words, label=label, tags=tags, entities=entities,
                       slots=slots, clipped=clipped)


def _files(path: Path) -> list[Path]:
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix == ".jsonl" and p.is_file())
        if not files:
            raise DataError(f"{path}: directory contains no .jsonl files")
        return files
    if path.is_file():
        return [path]
    raise DataError(f"{path}: no such file or directory")


def load_labeled_dataset(path, fmt: str, slot_keys=SROIE_SLOTS, classes=DEFAULT_CLASSES,
                         entity_types=None) -> list[RawDocument]:
    """Read and validate a dataset; any problem raises :class:`DataError`."""
    if fmt not in FORMATS:
        raise DataError(f"unknown dataset format {fmt!r}; expected one of {FORMATS}")
    docs, seen = [], set()
    for f in _files(Path(path)):
        try:
            lines = f.read_text(encoding="utf-8").splitlines()
        except UnicodeDecodeError as exc:
            raise DataError(f"{f}: not valid UTF-8") from exc
        for lineno, line in enumerate(lines, 1):
            if not line.strip():
                continue
            where = f"{f.name}:{lineno}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{where}: invalid JSON ({exc.msg})") from None
            doc = _parse_record(rec, fmt, slot_keys, classes, entity_types, where)
            if doc.doc_id in seen:
                raise DataError(f"{where}: duplicate doc_id {doc.doc_id!r}")
            seen.add(doc.doc_id)
            docs.append(doc)
    if not docs:
        raise DataError(f"{path}: dataset contains no documents")
    return docs


def doc_to_record(doc: RawDocument, fmt: str) -> dict:
    rec = {
        "doc_id": doc.doc_id,
        "page_width": doc.page_width,
        "page_height": doc.page_height,
        "words": [{"text": w.text, "box": list(w.box), **({"style": list(w.style)} if w.style else {})}
                  for w in doc.words],
    }
    if doc.tags is not None:
        rec["tags"] = list(doc.tags)
    if doc.entities is not None:
        rec["entities"] = [{"start": e.start, "end": e.end, "label": e.label} for e in doc.entities]
    if fmt == "slots_like":
        rec["slots"] = dict(doc.slots or {})
    if fmt == "classes_like":
        rec["label"] = doc.label
    return rec


def dump_dataset(docs, path, fmt: str) -> None:
    """Write docs as canonical JSON lines (sorted keys) so output is byte-stable."""
    if fmt not in FORMATS:
        raise DataError(f"unknown dataset format {fmt!r}")
    lines = [json.dumps(doc_to_record(d, fmt), sort_keys=True, ensure_ascii=False,
                        separators=(",", ":")) for d in docs]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def dataset_summary(docs) -> dict:
    return {
        "documents": len(docs),
        "words": sum(len(d.words) for d in docs),
        "entities": sum(len(d.entities or ()) for d in docs),
        "slots": sum(len(d.slots or {}) for d in docs),
        "clipped_boxes": sum(d.clipped for d in docs),
    }
