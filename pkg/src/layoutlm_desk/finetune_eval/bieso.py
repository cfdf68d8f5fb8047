"""BIESO tag handling with strict decoding."""

from __future__ import annotations

from typing import Sequence

from ..errors import ContractError
from ..ingest.document import EntitySpan as Entity

PREFIXES = ("B", "I", "E", "S")


def split_tag(tag: str):
    if tag == "O":
        return "O", None
    if not isinstance(tag, str) or len(tag) < 3 or tag[1] != "-" or tag[0] not in PREFIXES:
        raise ContractError(f"unknown tag {tag!r}")
    return tag[0], tag[2:]


def decode_bieso(tags: Sequence[str], tagset=None) -> set[Entity]:
    """Spans from a BIESO sequence. Ill-formed fragments are dropped: a span
    must be ``S-X`` alone or ``B-X (I-X)* E-X`` with one type throughout."""
    allowed = set(tagset) if tagset is not None else None
    out = set()
    open_start, open_type = None, None
    for i, tag in enumerate(tags):
        if allowed is not None and tag not in allowed:
            raise ContractError(f"tag {tag!r} is not in the tagset")
        prefix, typ = split_tag(tag)
        if prefix == "B":
            open_start, open_type = i, typ
        elif prefix == "I":
            if open_type != typ:
                open_start, open_type = None, None
        elif prefix == "E":
            if open_start is not None and open_type == typ:
                out.add(Entity(open_start, i, typ))
            open_start, open_type = None, None
        else:
            if prefix == "S":
                out.add(Entity(i, i, typ))
            open_start, open_type = None, None
    return out


def tags_from_entities(n: int, entities) -> list[str]:
    tags = ["O"] * n
    for e in entities:
        if not 0 <= e.start <= e.end < n:
            raise ContractError(f"entity {e} out of range for {n} positions")
        if any(t != "O" for t in tags[e.start:e.end + 1]):
            raise ContractError(f"entity {e} overlaps another")
        if e.start == e.end:
            tags[e.start] = f"S-{e.label}"
        else:
            tags[e.start] = f"B-{e.label}"
            for k in range(e.start + 1, e.end):
                tags[k] = f"I-{e.label}"
            tags[e.end] = f"E-{e.label}"
    return tags
