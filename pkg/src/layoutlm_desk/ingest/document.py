from __future__ import annotations

import math
from dataclasses import dataclass, field

from ..errors import ContractError
from ..model.types import GRID_MAX, BBox
from ..textproc import Word


@dataclass(frozen=True)
class RawWord:
    text: str
    box: tuple  # pixel coordinates (x0, y0, x1, y1)
    style: tuple = ()


@dataclass(frozen=True)
class EntitySpan:
    """Word-index span, inclusive on both ends."""

    start: int
    end: int
    label: str


@dataclass
class RawDocument:
    doc_id: str
    page_width: int
    page_height: int
    words: list = field(default_factory=list)
    label: str | None = None
    tags: tuple | None = None
    entities: list | None = None
    slots: dict | None = None
    clipped: int = 0

    def normalized_words(self) -> list[Word]:
        return [Word(w.text, normalize_bbox(w.box, self.page_width, self.page_height), w.style)
                for w in self.words]


def _scale(v, size: int) -> int:
    if isinstance(v, int):
        q = (GRID_MAX * v) // size
    else:
        q = math.floor(GRID_MAX * float(v) / size)
    return min(max(q, 0), GRID_MAX)


def normalize_bbox(raw, page_w: int, page_h: int) -> BBox:
    """Scale a pixel box onto the 0..1000 grid (floor), clamping out-of-page values."""
    if not page_w > 0 or not page_h > 0:
        raise ContractError(f"page size must be positive, got {page_w}x{page_h}")
    x0, y0, x1, y1 = raw
    return BBox(_scale(x0, page_w), _scale(y0, page_h), _scale(x1, page_w), _scale(y1, page_h))


def clip_box(box, page_w: int, page_h: int) -> tuple[tuple, bool]:
    x0, y0, x1, y1 = box
    out = (min(max(x0, 0), page_w), min(max(y0, 0), page_h),
           min(max(x1, 0), page_w), min(max(y1, 0), page_h))
    return out, out != tuple(box)
