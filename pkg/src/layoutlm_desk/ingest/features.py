"""Image-feature providers.

A provider answers ``get_token_feature(doc_id, word_index)`` and
``get_page_feature(doc_id)`` with fixed-length vectors. Two implementations:

* :func:`pseudo_features` -- deterministic stand-in for a region CNN. Each
  word vector mixes a hash of ``(doc_id, index, normalized box)`` with a
  fixed vector per style attribute, so style is a consistent, learnable
  signal. The page vector mixes a hash of ``(doc_id, page size)`` with the
  mean style vector of the page's words.
* :func:`file_features` -- precomputed vectors from a feature file::

      magic b"LYLMFEAT" | version u32 | dim u32 | count u64
      count x (id_len u16, doc_id UTF-8, index i64 (-1 = page), n u32, n x f64)
      SHA-256 of everything above (32 bytes)

  All integers and floats little-endian.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path
from typing import Iterable, Protocol

import numpy as np

from ..errors import ContractError, DataError, FormatError
from .document import RawDocument, normalize_bbox

PAGE = -1
FEAT_MAGIC = b"LYLMFEAT"
FEAT_VERSION = 1
_HEAD = struct.Struct("<8sIIQ")
NOISE_WEIGHT = 0.3


class FeatureProvider(Protocol):
    dim: int

    def get_token_feature(self, doc_id: str, word_index: int) -> np.ndarray: ...

    def get_page_feature(self, doc_id: str) -> np.ndarray: ...


def _hashed_unit(key, dim: int, seed: int) -> np.ndarray:
    digest = hashlib.blake2b(repr((seed, key)).encode("utf-8"), digest_size=16).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    return rng.uniform(-1.0, 1.0, size=dim)


class PseudoFeatureProvider:
    def __init__(self, doc: RawDocument, dim: int, seed: int = 0):
        if dim < 1:
            raise ContractError(f"feature dim must be >= 1, got {dim}")
        self.dim = dim
        self.doc_id = doc.doc_id
        boxes = [normalize_bbox(w.box, doc.page_width, doc.page_height).as_tuple()
                 for w in doc.words]
        style_vecs = []
        self._tokens = []
        for i, (w, box) in enumerate(zip(doc.words, boxes)):
            sv = self._style_vector(w.style, dim, seed)
            style_vecs.append(sv)
            noise = _hashed_unit((doc.doc_id, i, box), dim, seed)
            self._tokens.append(NOISE_WEIGHT * noise + (1 - NOISE_WEIGHT) * sv)
        page_noise = _hashed_unit((doc.doc_id, "PAGE", doc.page_width, doc.page_height), dim, seed)
        mean_style = np.mean(style_vecs, axis=0) if style_vecs else np.zeros(dim)
        self._page = NOISE_WEIGHT * page_noise + (1 - NOISE_WEIGHT) * mean_style

    @staticmethod
    def _style_vector(style, dim, seed):
        names = tuple(style) or ("plain",)
        return np.mean([_hashed_unit(("style", s), dim, seed) for s in names], axis=0)

    def _check(self, doc_id):
        if doc_id != self.doc_id:
            raise DataError(f"no features for doc {doc_id!r} (provider holds {self.doc_id!r})")

    def get_token_feature(self, doc_id: str, word_index: int) -> np.ndarray:
        self._check(doc_id)
        if not 0 <= word_index < len(self._tokens):
            raise DataError(f"no feature for word {word_index} of doc {doc_id!r}")
        return self._tokens[word_index].copy()

    def get_page_feature(self, doc_id: str) -> np.ndarray:
        self._check(doc_id)
        return self._page.copy()


def pseudo_features(doc: RawDocument, dim: int, seed: int = 0) -> PseudoFeatureProvider:
    return PseudoFeatureProvider(doc, dim, seed)


class FileFeatureProvider:
    def __init__(self, dim: int, table: dict):
        self.dim = dim
        self._table = table

    def _get(self, key):
        try:
            return self._table[key].copy()
        except KeyError:
            what = "page" if key[1] == PAGE else f"word {key[1]}"
            raise DataError(f"feature file has no entry for doc {key[0]!r}, {what}") from None

    def get_token_feature(self, doc_id: str, word_index: int) -> np.ndarray:
        return self._get((doc_id, int(word_index)))

    def get_page_feature(self, doc_id: str) -> np.ndarray:
        return self._get((doc_id, PAGE))

    def keys(self):
        return list(self._table)


def write_features(path, entries: Iterable[tuple], dim: int) -> None:
    """``entries``: ``(doc_id, index_or_PAGE, vector)`` triples, written in order."""
    body = []
    count = 0
    for doc_id, index, vec in entries:
        vec = np.ascontiguousarray(vec, dtype="<f8").reshape(-1)
        name = doc_id.encode("utf-8")
        body.append(struct.pack("<H", len(name)) + name
                    + struct.pack("<qI", int(index), vec.size) + vec.tobytes())
        count += 1
    data = _HEAD.pack(FEAT_MAGIC, FEAT_VERSION, dim, count) + b"".join(body)
    Path(path).write_bytes(data + hashlib.sha256(data).digest())


def file_features(path) -> FileFeatureProvider:
    data = Path(path).read_bytes()
    if len(data) < _HEAD.size + 32:
        raise FormatError(f"{path}: feature file too short")
    body, digest = data[:-32], data[-32:]
    magic, version, dim, count = _HEAD.unpack_from(body)
    if magic != FEAT_MAGIC:
        raise FormatError(f"{path}: bad magic bytes")
    if version != FEAT_VERSION:
        raise FormatError(f"{path}: unsupported feature file version {version}")
    pos = _HEAD.size
    table = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", body, pos)
            pos += 2
            doc_id = body[pos:pos + nlen].decode("utf-8")
            pos += nlen
            index, n = struct.unpack_from("<qI", body, pos)
            pos += 12
            if n != dim:
                raise FormatError(f"{path}: record ({doc_id!r}, {index}) holds {n} floats, "
                                  f"header declares dim {dim}")
            if pos + 8 * n > len(body):
                raise FormatError(f"{path}: record ({doc_id!r}, {index}) is truncated")
            table[(doc_id, index)] = np.frombuffer(body, "<f8", n, pos).astype(np.float64)
            pos += 8 * n
    except (struct.error, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: malformed record ({exc})") from None
    if pos != len(body):
        raise FormatError(f"{path}: {len(body) - pos} unexpected trailing bytes")
    if hashlib.sha256(body).digest() != digest:
        raise FormatError(f"{path}: checksum mismatch")
    return FileFeatureProvider(dim, table)


def provider_entries(docs, make_provider) -> list[tuple]:
    """Flatten ``make_provider(doc)`` outputs into :func:`write_features` entries."""
    out = []
    for d in docs:
        pv = make_provider(d)
        out.extend((d.doc_id, i, pv.get_token_feature(d.doc_id, i)) for i in range(len(d.words)))
        out.append((d.doc_id, PAGE, pv.get_page_feature(d.doc_id)))
    return out


def features_for_sequence(provider, seq, dim: int):
    """Per-token ``[L, dim]`` matrix (zeros at special/pad rows) and page vector."""
    tok = np.zeros((len(seq), dim))
    for t, k in enumerate(seq.word_index):
        if k >= 0:
            v = provider.get_token_feature(seq.doc_id, int(k))
            if v.shape != (dim,):
                raise FormatError(f"feature for doc {seq.doc_id!r} word {k} has shape "
                                  f"{v.shape}, expected ({dim},)")
            tok[t] = v
    page = provider.get_page_feature(seq.doc_id)
    if page.shape != (dim,):
        raise FormatError(f"page feature for doc {seq.doc_id!r} has shape {page.shape}")
    return tok, page
