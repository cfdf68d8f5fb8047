from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..errors import ConfigError, ContractError

GRID_MAX = 1000
COORD_VOCAB = GRID_MAX + 1


@dataclass(frozen=True, order=True)
class BBox:
    """Word box on the 0..1000 virtual grid; (x0, y0) top-left, (x1, y1) bottom-right."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        for name in ("x0", "y0", "x1", "y1"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool):
                raise ContractError(f"BBox.{name} must be an integer, got {v!r}")
            if not 0 <= v <= GRID_MAX:
                raise ContractError(f"BBox.{name}={v} outside [0, {GRID_MAX}]")
        if self.x0 > self.x1 or self.y0 > self.y1:
            raise ContractError(f"BBox corners out of order: {self.as_tuple()}")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (int(self.x0), int(self.y0), int(self.x1), int(self.y1))


CLS_BOX = BBox(0, 0, GRID_MAX, GRID_MAX)
EMPTY_BOX = BBox(0, 0, 0, 0)


@dataclass
class TokenSequence:
    """Encoded model input. All arrays have length ``max_len``.

    ``word_index`` maps each token to the word it came from (-1 for [CLS],
    [SEP] and padding); it doubles as the handle for per-token image features.
    """

    ids: np.ndarray
    positions: np.ndarray
    segments: np.ndarray
    bboxes: np.ndarray  # [max_len, 4] int
    mask: np.ndarray
    word_index: np.ndarray
    doc_id: str = ""
    pad_id: int = 0

    def __post_init__(self):
        n = len(self.ids)
        for name in ("positions", "segments", "mask", "word_index"):
            if len(getattr(self, name)) != n:
                raise ContractError(f"TokenSequence.{name} length differs from ids")
        if self.bboxes.shape != (n, 4):
            raise ContractError(f"TokenSequence.bboxes must be [{n}, 4]")
        if np.any((self.mask == 0) & (self.ids != self.pad_id)):
            raise ContractError("masked-out position holds a non-[PAD] id")

    def __len__(self):
        return len(self.ids)

    @property
    def n_real(self) -> int:
        return int(self.mask.sum())

    def replace(self, **changes) -> "TokenSequence":
        vals = {f.name: getattr(self, f.name) for f in fields(self)}
        vals.update(changes)
        return TokenSequence(**vals)

    def copy(self) -> "TokenSequence":
        return self.replace(ids=self.ids.copy(), positions=self.positions.copy(),
                            segments=self.segments.copy(), bboxes=self.bboxes.copy(),
                            mask=self.mask.copy(), word_index=self.word_index.copy())


@dataclass
class Batch:
    ids: np.ndarray        # [B, L]
    positions: np.ndarray  # [B, L]
    segments: np.ndarray   # [B, L]
    bboxes: np.ndarray     # [B, L, 4]
    mask: np.ndarray       # [B, L]
    word_index: np.ndarray  # [B, L]

    @property
    def size(self) -> int:
        return self.ids.shape[0]


def collate(seqs) -> Batch:
    if isinstance(seqs, TokenSequence):
        seqs = [seqs]
    if not seqs:
        raise ContractError("cannot collate an empty batch")
    lens = {len(s) for s in seqs}
    if len(lens) != 1:
        raise ContractError(f"sequences of different lengths in one batch: {sorted(lens)}")
    return Batch(
        ids=np.stack([s.ids for s in seqs]).astype(np.int64),
        positions=np.stack([s.positions for s in seqs]).astype(np.int64),
        segments=np.stack([s.segments for s in seqs]).astype(np.int64),
        bboxes=np.stack([s.bboxes for s in seqs]).astype(np.int64),
        mask=np.stack([s.mask for s in seqs]).astype(np.int64),
        word_index=np.stack([s.word_index for s in seqs]).astype(np.int64),
    )


def bieso_tagset(entity_types) -> list[str]:
    """``O`` followed by B/I/E/S for each type, in that order."""
    tags = ["O"]
    for t in entity_types:
        tags.extend(f"{p}-{t}" for p in "BIES")
    return tags


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 2
    hidden: int = 64
    heads: int = 4
    ffn_dim: int = 256
    max_len: int = 128
    vocab_size: int = 512
    coord_vocab: int = COORD_VOCAB
    img_feat_dim: int = 16
    num_doc_classes: int = 4
    num_mdc_tags: int = 5
    tagset: tuple = field(default_factory=lambda: tuple(bieso_tagset(("question", "answer", "header"))))
    use_layout: bool = True
    use_image: bool = False
    ln_eps: float = 1e-12

    def __post_init__(self):
        object.__setattr__(self, "tagset", tuple(self.tagset))
        problems = []
        for name in ("hidden", "heads", "ffn_dim", "max_len", "vocab_size",
                     "img_feat_dim", "num_doc_classes", "num_mdc_tags"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                problems.append(f"{name} must be a positive integer, got {v!r}")
        if not isinstance(self.layers, (int, np.integer)) or self.layers < 0:
            problems.append(f"layers must be a non-negative integer, got {self.layers!r}")
        if self.coord_vocab != COORD_VOCAB:
            problems.append(f"coord_vocab is fixed at {COORD_VOCAB}")
        if not problems and self.hidden % self.heads:
            problems.append(f"hidden={self.hidden} not divisible by heads={self.heads}")
        if len(self.tagset) < 1 or len(set(self.tagset)) != len(self.tagset):
            problems.append("tagset must be non-empty with distinct labels")
        if problems:
            raise ConfigError("invalid model config", problems)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tagset"] = list(self.tagset)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError("unknown model config keys", unknown)
        return cls(**d)

    def replace(self, **changes) -> "ModelConfig":
        d = self.to_dict()
        d.update(changes)
        return ModelConfig.from_dict(d)
