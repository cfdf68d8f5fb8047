"""hOCR subset reader and canonical writer.

Consumed: one ``ocr_page`` (its ``bbox`` gives the page size) and the
``ocrx_word`` elements inside it. Line/area containers are walked through
and otherwise ignored. ``<strong>/<b>``, ``<em>/<i>`` and ``<u>`` inside a
word become its style attributes.
"""

from __future__ import annotations

import html
from html.parser import HTMLParser

from ..errors import ParseError
from .document import RawDocument, RawWord, clip_box

_VOID = {"area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta",
         "param", "source", "track", "wbr"}
_STYLE_TAGS = {"strong": "bold", "b": "bold", "em": "italic", "i": "italic", "u": "underline"}
_STYLE_ORDER = (("bold", "strong"), ("italic", "em"), ("underline", "u"))


def _parse_bbox(title: str | None, what: str, line: int):
    if title is None:
        return None
    for prop in title.split(";"):
        parts = prop.split()
        if parts and parts[0] == "bbox":
            if len(parts) != 5:
                raise ParseError(f"{what}: bbox needs 4 coordinates, got {prop.strip()!r}", line)
            try:
                coords = tuple(int(p) for p in parts[1:])
            except ValueError:
                raise ParseError(f"{what}: non-integer bbox coordinates {prop.strip()!r}",
                                 line) from None
            return coords
    return None


class _HocrParser(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.stack: list[tuple[str, str | None]] = []
        self.page = None
        self.words: list[RawWord] = []
        self.clipped = 0
        self._word = None  # (box, text_parts, styles, name)

    def _describe(self, tag, attrs):
        ident = attrs.get("id")
        return f"<{tag} id={ident!r}>" if ident else f"<{tag}>"

    def handle_starttag(self, tag, attrs_list):
        attrs = dict(attrs_list)
        classes = (attrs.get("class") or "").split()
        line = self.getpos()[0]
        kind = None
        if "ocr_page" in classes:
            if self.page is not None:
                raise ParseError("more than one ocr_page element", line)
            box = _parse_bbox(attrs.get("title"), "ocr_page", line)
            if box is None:
                raise ParseError("ocr_page without a bbox in its title", line)
            w, h = box[2] - box[0], box[3] - box[1]
            if w <= 0 or h <= 0:
                raise ParseError(f"ocr_page bbox has non-positive size {w}x{h}", line)
            self.page = (attrs.get("id") or "", w, h)
            kind = "page"
        elif "ocrx_word" in classes:
            what = self._describe(tag, attrs)
            if self.page is None:
                raise ParseError(f"{what} appears outside an ocr_page", line)
            if self._word is not None:
                raise ParseError(f"{what} nested inside another word", line)
            box = _parse_bbox(attrs.get("title"), what, line)
            if box is None:
                raise ParseError(f"{what} has no bbox in its title", line)
            if box[0] > box[2] or box[1] > box[3]:
                raise ParseError(f"{what}: bbox corners out of order {box}", line)
            self._word = (box, [], set(), what)
            kind = "word"
        elif self._word is not None and tag in _STYLE_TAGS:
            kind = "style:" + _STYLE_TAGS[tag]
        if tag in _VOID:
            if kind == "word":
                self._finish_word()
            return
        self.stack.append((tag, kind))

    def handle_startendtag(self, tag, attrs):
        self.handle_starttag(tag, attrs)
        if tag not in _VOID and self.stack and self.stack[-1][0] == tag:
            self._pop_to(len(self.stack) - 1)

    def handle_endtag(self, tag):
        for i in range(len(self.stack) - 1, -1, -1):
            if self.stack[i][0] == tag:
                self._pop_to(i)
                return

    def _pop_to(self, i):
        while len(self.stack) > i:
            _, kind = self.stack.pop()
            if kind == "word":
                self._finish_word()

    def handle_data(self, data):
        if self._word is not None:
            self._word[1].append(data)
            for _, kind in self.stack:
                if kind and kind.startswith("style:"):
                    self._word[2].add(kind[6:])

    def _finish_word(self):
        box, parts, styles, _ = self._word
        self._word = None
        text = "".join(parts).strip()
        if not text:
            return
        _, pw, ph = self.page
        box, changed = clip_box(box, pw, ph)
        self.clipped += changed
        self.words.append(RawWord(text, box, tuple(sorted(styles))))


def parse_hocr(text, doc_id: str | None = None) -> RawDocument:
    """Parse hOCR markup into a :class:`RawDocument`; raises :class:`ParseError`."""
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"input is not valid UTF-8 ({exc.reason} at byte {exc.start})") from None
    p = _HocrParser()
    try:
        p.feed(text)
        p.close()
        if p._word is not None:
            p._finish_word()
    except ParseError:
        raise
    except Exception as exc:  # html.parser can trip over pathological markup
        raise ParseError(f"malformed markup: {exc}", p.getpos()[0]) from None
    if p.page is None:
        raise ParseError("no ocr_page element with a bbox found")
    page_id, w, h = p.page
    return RawDocument(doc_id=doc_id if doc_id is not None else (page_id or "page"),
                       page_width=w, page_height=h, words=p.words, clipped=p.clipped)


def _q(s: str) -> str:
    return html.escape(s, quote=True)


def write_hocr(doc: RawDocument) -> str:
    """Canonical serialisation; ``parse_hocr(write_hocr(d))`` reproduces ``d``'s words."""
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        "<html>",
        "<head>",
        '<meta http-equiv="Content-Type" content="text/html; charset=utf-8"/>',
        "<meta name='ocr-system' content='layoutlm_desk'/>",
        "</head>",
        "<body>",
        f"<div class='ocr_page' id='{_q(doc.doc_id)}' "
        f"title='bbox 0 0 {doc.page_width} {doc.page_height}'>",
    ]
    for i, w in enumerate(doc.words):
        inner = _q(w.text)
        for style, tag in reversed(_STYLE_ORDER):
            if style in w.style:
                inner = f"<{tag}>{inner}</{tag}>"
        x0, y0, x1, y1 = w.box
        out.append(f"<span class='ocrx_word' id='word_{i + 1}' "
                   f"title='bbox {x0} {y0} {x1} {y1}'>{inner}</span>")
    out += ["</div>", "</body>", "</html>", ""]
    return "\n".join(out)
