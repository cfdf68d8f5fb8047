"""Parameter layout, initialisation and text-checkpoint transfer."""

from __future__ import annotations

import numpy as np

from ..errors import CompatibilityError
from .types import ModelConfig

INIT_STD = 0.02

# Prefixes of tensors a text-only backbone shares with the layout model.
SHARED_PREFIXES = ("emb.word", "emb.pos1d", "emb.segment", "layer")
LAYOUT_TABLES = ("emb.x", "emb.y")
IMAGE_TENSORS = ("img.proj.w", "img.proj.b")


class ModelParams(dict):
    """Ordered mapping ``name -> float64 array``; see :func:`param_shapes`."""

    @property
    def table_X(self) -> np.ndarray:
        return self["emb.x"]

    @property
    def table_Y(self) -> np.ndarray:
        return self["emb.y"]

    @property
    def word_table(self) -> np.ndarray:
        return self["emb.word"]

    def copy(self) -> "ModelParams":
        return ModelParams((k, v.copy()) for k, v in self.items())


def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    h, f = cfg.hidden, cfg.ffn_dim
    shapes = {
        "emb.word": (cfg.vocab_size, h),
        "emb.pos1d": (cfg.max_len, h),
        "emb.segment": (2, h),
        "emb.x": (cfg.coord_vocab, h),
        "emb.y": (cfg.coord_vocab, h),
    }
    for i in range(cfg.layers):
        pre = f"layer{i}."
        for proj in "qkvo":
            shapes[pre + f"attn.{proj}.w"] = (h, h)
            shapes[pre + f"attn.{proj}.b"] = (h,)
        shapes[pre + "ln1.g"] = (h,)
        shapes[pre + "ln1.b"] = (h,)
        shapes[pre + "ffn.in.w"] = (h, f)
        shapes[pre + "ffn.in.b"] = (f,)
        shapes[pre + "ffn.out.w"] = (f, h)
        shapes[pre + "ffn.out.b"] = (h,)
        shapes[pre + "ln2.g"] = (h,)
        shapes[pre + "ln2.b"] = (h,)
    shapes.update({
        "head.mvlm.b": (cfg.vocab_size,),
        "head.mdc.w": (h, cfg.num_mdc_tags),
        "head.mdc.b": (cfg.num_mdc_tags,),
        "head.seqlabel.w": (h, len(cfg.tagset)),
        "head.seqlabel.b": (len(cfg.tagset),),
        "head.docclass.w": (2 * h, cfg.num_doc_classes),
        "head.docclass.b": (cfg.num_doc_classes,),
        "img.proj.w": (cfg.img_feat_dim, h),
        "img.proj.b": (h,),
    })
    return shapes


def _truncated_normal(rng: np.random.Generator, shape, std=INIT_STD) -> np.ndarray:
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def _is_gain(name: str) -> bool:
    return name.endswith(".g")


def _is_bias(name: str) -> bool:
    return name.endswith(".b")


def init_params(cfg: ModelConfig, seed: int) -> ModelParams:
    """Truncated-normal weights, zero biases, unit layer-norm gains.

    Random draws happen for every tensor regardless of modality switches, so
    two configs that differ only in ``use_layout`` share all other weights.
    """
    rng = np.random.default_rng(seed)
    params = ModelParams()
    for name, shape in param_shapes(cfg).items():
        if _is_gain(name):
            params[name] = np.ones(shape)
        elif _is_bias(name):
            params[name] = np.zeros(shape)
        else:
            params[name] = _truncated_normal(rng, shape)
    if not cfg.use_layout:
        for name in LAYOUT_TABLES:
            params[name] = np.zeros_like(params[name])
    return params


def is_shared(name: str) -> bool:
    return name.startswith(SHARED_PREFIXES)


def trainable_names(cfg: ModelConfig) -> list[str]:
    """Text-only mode freezes the 2-D tables; everything else trains end to end."""
    frozen = set() if cfg.use_layout else set(LAYOUT_TABLES)
    return [n for n in param_shapes(cfg) if n not in frozen]


_COMPAT_FIELDS = ("vocab_size", "hidden", "layers", "heads", "max_len", "ffn_dim")


def init_from_text_checkpoint(cfg: ModelConfig, text_ckpt, seed: int) -> ModelParams:
    """Copy word/1-D position/segment embeddings and encoder weights from a
    text checkpoint; 2-D tables, heads and image projection start fresh."""
    src_cfg = text_ckpt.config
    diffs = [f"{k}: checkpoint={getattr(src_cfg, k)!r} target={getattr(cfg, k)!r}"
             for k in _COMPAT_FIELDS if getattr(src_cfg, k) != getattr(cfg, k)]
    if diffs:
        raise CompatibilityError("text checkpoint is incompatible with the target config", diffs)
    params = init_params(cfg, seed)
    for name in params:
        if is_shared(name):
            params[name] = text_ckpt.params[name].copy()
    return params


def adapt_params(src_params, src_cfg: ModelConfig, cfg: ModelConfig, seed: int) -> ModelParams:
    """Carry weights over to a config that differs only in heads or modality.

    Tensors whose name and shape agree are copied; resized heads start fresh.
    The 2-D tables are zeroed when the target is text-only.
    """
    diffs = [f"{k}: checkpoint={getattr(src_cfg, k)!r} target={getattr(cfg, k)!r}"
             for k in _COMPAT_FIELDS if getattr(src_cfg, k) != getattr(cfg, k)]
    if diffs:
        raise CompatibilityError("checkpoint is incompatible with the target config", diffs)
    params = init_params(cfg, seed)
    for name, arr in src_params.items():
        if name in params and params[name].shape == arr.shape:
            params[name] = np.array(arr, dtype=np.float64, copy=True)
    if not cfg.use_layout:
        for name in LAYOUT_TABLES:
            params[name] = np.zeros_like(params[name])
    return params
